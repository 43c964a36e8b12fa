"""Synthetic token-trajectory backbones and the on-disk trace container.

Synthetic workloads expose the three empirical regimes the policy is built
around as contiguous token blocks: exactly constant rows (stable), affine
drift (linear), and direction-changing rows (chaotic). Presets:

    smooth     constant + affine + affine: the all-straight-line workload;
               every token's curvature is zero up to rounding.
    mixed      constant + gently bent affine + circling rows. The bend on the
               middle block is sized so its normalized curvature sits at a
               fixed small value regardless of the token's slope, keeping the
               ranking constant < bent < circling wide and value-driven. The
               circling rows follow a planar orbit around a drifting center,
               so their measured curvature is insensitive to phase, and the
               orbit speeds up toward the end of the schedule, so the drift
               rate genuinely varies over a run.
    turnpoint  constant + affine + zigzag rows whose per-step velocity
               reverses sign every turn_step steps. The first reversal lands
               on the last of the three warmup evaluations, so later cache
               streaks bracket whole constant-velocity segments and every
               refresh sees a genuine direction change.

Optional white observation noise (seeded, a pure function of the step index)
and a closed-loop coupling term complete the workload. The coupling pulls the
output toward a rest state proportionally to (z - target): under the explicit
Euler update on a descending grid this contracts the latent toward the target,
so cache errors feed back without diverging.

Traces are little-endian binary: 8-byte magic "WCTRACE1", u32 n_tokens, dims,
n_steps, then n_steps f64 strictly-decreasing timesteps, then n_steps blocks
of n_tokens*dims f32 row-major samples, then one modality flag byte (0 or 1)
optionally followed by n_tokens label bytes. Canonical extension: .wct.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import Modality, Timestep, TokenMatrix
from .errors import DimensionError, OrderingError, ParameterError, TraceFormatError

TRACE_MAGIC = b"WCTRACE1"
TRACE_EXTENSION = ".wct"
_HEADER = struct.Struct("<III")

COUPLING_DECAY = 0.15
_SLOPE_SCALE = 0.04          # affine drift per scheduler unit (component std)
_SMOOTH_CHAOTIC_SLOPE = 0.12
_MIXED_SLOPE_RANGE = (0.3, 0.8)   # bent-block slope magnitude, kept off zero
_BEND_FREQUENCY_FACTOR = 0.25     # bend cycles per unit time / base frequency
_BEND_CURVE_TARGET = 0.005        # normalized curvature the bend aims at
_ORBIT_RADIUS_FACTOR = 0.35       # circling radius / amplitude
_ORBIT_SPEED_RANGE = (0.8, 1.2)   # drifting-center speed for circling rows
_CHIRP_FACTOR = 0.5               # fractional speed-up of orbits as t -> 0
_CHIRP_REF = 50.0                 # nominal schedule length the chirp spans
_TURN_PHASE = 2                   # zigzag reversal offset: warmup calls - 1
_NOISE_STREAM = 0x6E6F6973


class Preset(str, Enum):
    MIXED = "mixed"
    SMOOTH = "smooth"
    TURNPOINT = "turnpoint"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic workload. fractions = (stable, linear,
    chaotic) shares of n_tokens; they must sum to 1 within 1e-12."""

    n_tokens: int = 96
    dims: int = 8
    fractions: tuple[float, float, float] = (0.3, 0.4, 0.3)
    preset: Preset = Preset.MIXED
    turn_step: int = 8
    amplitude: float = 1.0
    frequency: float = 0.15
    noise_sigma: float = 0.0
    coupling: float = 0.0
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "preset", Preset(self.preset))
        except ValueError as exc:
            raise ParameterError(f"unknown preset {self.preset!r}") from exc
        if self.n_tokens < 1:
            raise ParameterError(f"n_tokens must be >= 1, got {self.n_tokens}")
        if self.dims < 1:
            raise ParameterError(f"dims must be >= 1, got {self.dims}")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ParameterError(
                f"fractions must be three non-negative reals, got {self.fractions}"
            )
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise ParameterError(
                f"fractions must sum to 1 within 1e-12, got sum {sum(self.fractions)!r}"
            )
        if self.turn_step < 1:
            raise ParameterError(f"turn_step must be >= 1, got {self.turn_step}")
        if self.amplitude < 0 or not math.isfinite(self.amplitude):
            raise ParameterError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        if self.frequency <= 0 or not math.isfinite(self.frequency):
            raise ParameterError(f"frequency must be finite and > 0, got {self.frequency}")
        if self.noise_sigma < 0 or not math.isfinite(self.noise_sigma):
            raise ParameterError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not (0.0 <= self.coupling <= 1.0):
            raise ParameterError(f"coupling must lie in [0, 1], got {self.coupling}")
        if self.preset is Preset.MIXED and self.dims < 3:
            raise ParameterError(
                f"the mixed preset needs dims >= 3 for its orbit geometry, got {self.dims}"
            )


def _partition(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder split of n tokens into three blocks (exact total)."""
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    rem = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(rem):
        counts[order[i]] += 1
    return tuple(counts)


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return v / norms


def _orthonormal_frames(rng: np.random.Generator, n: int, d: int, k: int) -> np.ndarray:
    """n stacks of k orthonormal d-vectors (Gram-Schmidt on gaussian draws)."""
    frames = np.empty((k, n, d))
    for j in range(k):
        v = rng.normal(size=(n, d))
        for i in range(j):
            v -= np.einsum("nd,nd->n", v, frames[i])[:, None] * frames[i]
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        frames[j] = v / norms
    return frames


class SyntheticBackbone:
    """Deterministic synthetic backbone; evaluate() is a pure function of
    (z, t) for a fixed SyntheticSpec."""

    cost_full = 1.0

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        n, d = spec.n_tokens, spec.dims
        n_s, n_l, n_c = _partition(n, spec.fractions)
        self._sl_linear = slice(n_s, n_s + n_l)
        self._sl_chaotic = slice(n_s + n_l, n)
        regimes = np.empty(n, dtype=np.int8)
        regimes[:n_s] = 0
        regimes[self._sl_linear] = 1
        regimes[self._sl_chaotic] = 2
        regimes.setflags(write=False)
        self.regimes = regimes

        rng = np.random.default_rng(spec.seed)
        self._base = rng.normal(0.0, 1.0, (n, d))
        self._z0 = self._base + 0.3 * rng.normal(0.0, 1.0, (n, d))

        if spec.preset is Preset.MIXED:
            # Middle block: affine drift with a perpendicular bend. The bend
            # amplitude is solved per token from a fixed normalized-curvature
            # target, so slope draws cannot push a bent row's curvature up
            # into (or anywhere near) the circling block's range.
            lo, hi = _MIXED_SLOPE_RANGE
            mag = rng.uniform(lo, hi, n_l)
            sign = rng.integers(0, 2, n_l) * 2 - 1
            frames = _orthonormal_frames(rng, n_l, d, 2)
            self._slope = (sign * mag)[:, None] * frames[0]
            self._bend_dir = frames[1]
            self._bend_freq = spec.frequency * _BEND_FREQUENCY_FACTOR
            omega_b = 2.0 * math.pi * self._bend_freq
            self._bend_amp = _BEND_CURVE_TARGET * mag**2 / omega_b**2
            self._bend_phase = rng.uniform(0.0, 2.0 * math.pi, n_l)

            # Circling block: planar orbit around a center that drifts along
            # a third orthogonal axis. Orbit geometry (not phase) sets the
            # measured curvature, and the chirp speeds orbits up toward t=0.
            frames = _orthonormal_frames(rng, n_c, d, 3)
            self._orbit_u = frames[0]
            self._orbit_w = frames[1]
            self._orbit_drift_dir = frames[2]
            self._orbit_speed = rng.uniform(*_ORBIT_SPEED_RANGE, n_c)
            self._orbit_radius = (
                _ORBIT_RADIUS_FACTOR * spec.amplitude * rng.uniform(0.7, 1.3, n_c)
            )
            self._orbit_omega = 2.0 * math.pi * spec.frequency * rng.uniform(0.85, 1.2, n_c)
            self._orbit_phase = rng.uniform(0.0, 2.0 * math.pi, n_c)
        else:
            self._slope = rng.normal(0.0, _SLOPE_SCALE, (n_l, d))
            self._cdir = _unit_rows(rng, n_c, d)
            self._camp = spec.amplitude * rng.uniform(0.7, 1.3, n_c)
            self._cslope = rng.normal(0.0, _SMOOTH_CHAOTIC_SLOPE, (n_c, d))

    @property
    def shape(self) -> tuple[int, int]:
        return self._base.shape

    def initial_latent(self) -> TokenMatrix:
        return TokenMatrix(self._z0)

    def _drift(self, t: Timestep) -> np.ndarray:
        spec = self.spec
        out = self._base.copy()
        sl, sc = self._sl_linear, self._sl_chaotic

        out[sl] += self._slope * t.value
        if spec.preset is Preset.MIXED:
            bend = self._bend_amp * np.sin(
                2.0 * math.pi * self._bend_freq * t.value + self._bend_phase
            )
            out[sl] += bend[:, None] * self._bend_dir
            # chirped phase: instantaneous angular speed grows linearly from
            # omega*(1-chirp) at t=2*ref to omega*(1+chirp) at t=0
            chi = _CHIRP_FACTOR
            theta = (
                self._orbit_omega
                * ((1.0 + chi) * t.value - chi * t.value**2 / (2.0 * _CHIRP_REF))
                + self._orbit_phase
            )
            orbit = self._orbit_radius[:, None] * (
                np.cos(theta)[:, None] * self._orbit_u
                + np.sin(theta)[:, None] * self._orbit_w
            )
            center = (self._orbit_speed * t.value)[:, None] * self._orbit_drift_dir
            out[sc] += center + orbit
        elif spec.preset is Preset.SMOOTH:
            out[sc] += self._cslope * t.value
        else:  # TURNPOINT: zigzag in step index, reversal every turn_step steps
            p = spec.turn_step
            s = (t.index - _TURN_PHASE) % (2 * p)
            z01 = (p - abs(p - s)) / p
            out[sc] += (self._camp * (2.0 * z01 - 1.0))[:, None] * self._cdir
        return out

    def evaluate(self, z: TokenMatrix, t: Timestep) -> TokenMatrix:
        if z.shape != self._base.shape:
            raise DimensionError(
                f"latent shape {z.shape} does not match workload {self._base.shape}"
            )
        out = self._drift(t)
        spec = self.spec
        if spec.noise_sigma > 0.0:
            rng = np.random.default_rng((spec.seed, _NOISE_STREAM, t.index))
            out += rng.normal(0.0, spec.noise_sigma, out.shape)
        if spec.coupling > 0.0:
            out += spec.coupling * COUPLING_DECAY * (z.data - self._base)
        return TokenMatrix(out)


# ---------------------------------------------------------------------------
# trace container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceData:
    timesteps: tuple[float, ...]
    outputs: tuple[TokenMatrix, ...]  # widened to float64 on read
    modality: np.ndarray | None = None  # uint8 labels, one per token

    @property
    def n_tokens(self) -> int:
        return self.outputs[0].n_tokens

    @property
    def dims(self) -> int:
        return self.outputs[0].dims

    @property
    def n_steps(self) -> int:
        return len(self.outputs)


def write_trace(path, timesteps, outputs, modality=None) -> None:
    """Serialize decision timesteps plus their outputs to a trace file.

    timesteps may be Timestep objects or plain floats; outputs are stored as
    float32, so reading back reproduces them to 32-bit rounding.
    """
    values = [t.value if isinstance(t, Timestep) else float(t) for t in timesteps]
    outs = [
        np.asarray(m.data if isinstance(m, TokenMatrix) else m, dtype=np.float64)
        for m in outputs
    ]
    if len(values) != len(outs):
        raise DimensionError(
            f"{len(values)} timesteps for {len(outs)} output blocks"
        )
    if not outs:
        raise ParameterError("cannot write an empty trace")
    shape = outs[0].shape
    for m in outs:
        if m.shape != shape or m.ndim != 2:
            raise DimensionError(f"inconsistent block shapes: {m.shape} vs {shape}")
    for a, b in zip(values, values[1:]):
        if not (b < a):
            raise OrderingError(
                f"trace timesteps must be strictly decreasing: {b} after {a}"
            )
    if any(not math.isfinite(v) for v in values):
        raise ParameterError("trace timesteps must be finite")
    n_tokens, dims = shape
    labels = None
    if modality is not None:
        labels = np.asarray(
            [int(m) for m in modality] if not isinstance(modality, np.ndarray) else modality
        )
        if labels.shape != (n_tokens,):
            raise DimensionError(
                f"modality labels must have shape ({n_tokens},), got {labels.shape}"
            )
        if labels.min() < 0 or labels.max() > 255:
            raise ParameterError("modality labels must fit in one byte")
        labels = labels.astype(np.uint8)

    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(_HEADER.pack(n_tokens, dims, len(outs)))
        f.write(np.asarray(values, dtype="<f8").tobytes())
        for m in outs:
            f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
        if labels is None:
            f.write(b"\x00")
        else:
            f.write(b"\x01")
            f.write(labels.tobytes())


def read_trace(path) -> TraceData:
    """Parse a trace file, rejecting malformed containers with byte offsets."""
    data = Path(path).read_bytes()
    if len(data) < len(TRACE_MAGIC):
        raise TraceFormatError(
            f"file too short for magic: {len(data)} bytes", byte_offset=0
        )
    magic = data[: len(TRACE_MAGIC)]
    if magic != TRACE_MAGIC:
        if magic[:7] == TRACE_MAGIC[:7]:
            raise TraceFormatError(
                f"unsupported trace version {magic!r} (expected {TRACE_MAGIC!r})",
                byte_offset=7,
            )
        raise TraceFormatError(
            f"bad magic {magic!r} (expected {TRACE_MAGIC!r})", byte_offset=0
        )
    off = len(TRACE_MAGIC)
    if len(data) < off + _HEADER.size:
        raise TraceFormatError("truncated header", byte_offset=len(data))
    n_tokens, dims, n_steps = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    if n_tokens == 0 or dims == 0 or n_steps == 0:
        raise TraceFormatError(
            f"degenerate dimensions n_tokens={n_tokens} dims={dims} n_steps={n_steps}",
            byte_offset=len(TRACE_MAGIC),
        )

    ts_bytes = n_steps * 8
    if len(data) < off + ts_bytes:
        raise TraceFormatError(
            f"truncated timestep table: need {ts_bytes} bytes at offset {off}",
            byte_offset=len(data),
        )
    timesteps = np.frombuffer(data, dtype="<f8", count=n_steps, offset=off)
    if not np.isfinite(timesteps).all():
        bad = int(np.flatnonzero(~np.isfinite(timesteps))[0])
        raise TraceFormatError(
            f"non-finite timestep at entry {bad}", byte_offset=off + bad * 8
        )
    deltas = np.diff(timesteps)
    if deltas.size and not (deltas < 0).all():
        bad = int(np.flatnonzero(deltas >= 0)[0]) + 1
        raise TraceFormatError(
            f"timesteps not strictly decreasing at entry {bad} "
            f"({timesteps[bad]!r} after {timesteps[bad - 1]!r})",
            byte_offset=off + bad * 8,
        )
    off += ts_bytes

    block = n_tokens * dims
    payload = n_steps * block * 4
    if len(data) < off + payload:
        raise TraceFormatError(
            f"truncated payload: need {payload} bytes at offset {off}, "
            f"file ends after {len(data) - off}",
            byte_offset=len(data),
        )
    samples = np.frombuffer(data, dtype="<f4", count=n_steps * block, offset=off)
    if not np.isfinite(samples).all():
        bad = int(np.flatnonzero(~np.isfinite(samples))[0])
        raise TraceFormatError(
            f"non-finite sample at flat index {bad}", byte_offset=off + bad * 4
        )
    outputs = tuple(
        TokenMatrix(
            samples[i * block : (i + 1) * block]
            .astype(np.float64)
            .reshape(n_tokens, dims)
        )
        for i in range(n_steps)
    )
    off += payload

    modality = None
    if off < len(data):
        flag = data[off]
        off += 1
        if flag == 1:
            if len(data) < off + n_tokens:
                raise TraceFormatError(
                    f"truncated modality labels: need {n_tokens} bytes",
                    byte_offset=len(data),
                )
            modality = np.frombuffer(data, dtype=np.uint8, count=n_tokens, offset=off)
            off += n_tokens
        elif flag != 0:
            raise TraceFormatError(
                f"bad modality flag byte {flag:#04x}", byte_offset=off - 1
            )
        if off != len(data):
            raise TraceFormatError(
                f"{len(data) - off} trailing bytes after trace content",
                byte_offset=off,
            )
    return TraceData(
        timesteps=tuple(float(v) for v in timesteps),
        outputs=outputs,
        modality=modality,
    )


def validate_trace(path) -> dict:
    """Full parse plus a human-readable summary (raises on any violation)."""
    trace = read_trace(path)
    mods = None
    if trace.modality is not None:
        names = {int(m): m.name for m in Modality}
        mods = {
            names.get(int(v), str(int(v))): int(c)
            for v, c in zip(*np.unique(trace.modality, return_counts=True))
        }
    return {
        "n_tokens": trace.n_tokens,
        "dims": trace.dims,
        "n_steps": trace.n_steps,
        "t_first": trace.timesteps[0],
        "t_last": trace.timesteps[-1],
        "modality": mods,
        "size_bytes": Path(path).stat().st_size,
    }


class TraceBackbone:
    """Replay backbone: evaluate() returns the stored block for a timestep.

    Replay is open-loop by construction; the latent argument is ignored
    beyond a shape check.
    """

    cost_full = 1.0

    def __init__(self, trace: TraceData):
        self.trace = trace
        self._by_value = {v: i for i, v in enumerate(trace.timesteps)}

    @property
    def shape(self) -> tuple[int, int]:
        return self.trace.outputs[0].shape

    def initial_latent(self) -> TokenMatrix:
        return self.trace.outputs[0]

    def evaluate(self, z: TokenMatrix, t: Timestep) -> TokenMatrix:
        if z.shape != self.shape:
            raise DimensionError(
                f"latent shape {z.shape} does not match trace {self.shape}"
            )
        idx = t.index
        if 0 <= idx < len(self.trace.timesteps) and self.trace.timesteps[idx] == t.value:
            return self.trace.outputs[idx]
        hit = self._by_value.get(t.value)
        if hit is None:
            raise ParameterError(f"timestep {t.value!r} not present in trace")
        return self.trace.outputs[hit]

    def replay_grid(self) -> tuple[Timestep, ...]:
        """Decision timesteps plus one extrapolated terminal node."""
        ts = self.trace.timesteps
        if len(ts) >= 2:
            t_end = ts[-1] - (ts[-2] - ts[-1])
        else:
            t_end = ts[-1] - 1.0
        nodes = list(ts) + [t_end]
        return tuple(Timestep(v, i) for i, v in enumerate(nodes))
