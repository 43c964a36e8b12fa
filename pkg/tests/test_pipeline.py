import math

import numpy as np
import pytest

from worldcache import (
    Decision,
    DimensionError,
    EulerScheduler,
    ParameterError,
    PredictorConfig,
    PredictorKind,
    Preset,
    SkipConfig,
    SkipKind,
    SyntheticBackbone,
    SyntheticSpec,
    Timestep,
    TokenMatrix,
    oracle_run,
    run,
    uniform_grid,
)
from worldcache.errors import OrderingError


def _setup(preset=Preset.MIXED, seed=7, steps=50, **spec_kw):
    spec = SyntheticSpec(preset=preset, seed=seed, **spec_kw)
    backbone = SyntheticBackbone(spec)
    scheduler = EulerScheduler(uniform_grid(steps))
    return backbone, scheduler, backbone.initial_latent()


class TestUniformGrid:
    def test_descending_integers(self):
        grid = uniform_grid(5)
        assert [t.value for t in grid] == [5.0, 4.0, 3.0, 2.0, 1.0, 0.0]
        assert [t.index for t in grid] == [0, 1, 2, 3, 4, 5]

    def test_custom_t_max(self):
        grid = uniform_grid(4, t_max=1.0)
        assert [t.value for t in grid] == [1.0, 0.75, 0.5, 0.25, 0.0]

    def test_zero_steps(self):
        grid = uniform_grid(0)
        assert len(grid) == 1

    def test_rejects_negative(self):
        with pytest.raises(ParameterError):
            uniform_grid(-1)


class TestEulerScheduler:
    def test_explicit_update(self):
        sched = EulerScheduler(uniform_grid(2, t_max=2.0))
        z = TokenMatrix([[1.0, 1.0]])
        y = TokenMatrix([[2.0, 4.0]])
        out = sched.step(z, y, sched.timesteps[0], sched.timesteps[1])
        # z' = z + (t_to - t_from) * y with dt = -1
        assert out.data.tolist() == [[-1.0, -3.0]]

    def test_rejects_non_descending_grid(self):
        with pytest.raises(OrderingError):
            EulerScheduler(
                (Timestep(value=1.0, index=0), Timestep(value=2.0, index=1))
            )


class TestOracleRun:
    def test_zero_step_schedule_returns_input(self):
        backbone, _, z0 = _setup()
        sched = EulerScheduler(uniform_grid(0))
        result = oracle_run(backbone, sched, z0)
        assert result.final_latent == z0
        assert result.full_count == 0
        assert result.records == []

    def test_all_steps_full(self):
        backbone, sched, z0 = _setup(steps=20)
        result = oracle_run(backbone, sched, z0)
        assert result.full_count == 20
        assert result.cache_count == 0
        assert all(r.decision is Decision.FULL for r in result.records)

    def test_record_outputs_retains_every_step(self):
        backbone, sched, z0 = _setup(steps=10)
        result = oracle_run(backbone, sched, z0, record_outputs=True)
        assert len(result.surrogates) == 10


class TestRunDegenerateThresholds:
    def test_eta_zero_equals_oracle_bitwise(self):
        backbone, sched, z0 = _setup()
        ref = oracle_run(backbone, sched, z0)
        cached = run(
            backbone, sched, z0,
            PredictorConfig(), SkipConfig(eta=0.0),
        )
        assert cached.full_count == 50
        assert cached.cache_count == 0
        assert cached.final_latent == ref.final_latent  # bitwise equality

    def test_eta_inf_uncapped_runs_warmup_only(self):
        backbone, sched, z0 = _setup()
        cached = run(
            backbone, sched, z0,
            PredictorConfig(),
            SkipConfig(eta=math.inf, enforce_streak_cap=False),
        )
        assert cached.full_count == 3
        assert cached.cache_count == 47
        decisions = [r.decision for r in cached.records]
        assert decisions[:3] == [Decision.FULL] * 3
        assert all(d is Decision.CACHE for d in decisions[3:])


class TestRunStructure:
    def test_counts_always_partition_steps(self):
        backbone, sched, z0 = _setup()
        for eta in (0.05, 0.2, 1.0):
            result = run(
                backbone, sched, z0, PredictorConfig(), SkipConfig(eta=eta)
            )
            assert result.full_count + result.cache_count == 50
            assert result.steps == 50

    def test_warmup_steps_are_always_full(self):
        backbone, sched, z0 = _setup()
        for eta in (0.05, 0.5, math.inf):
            result = run(
                backbone, sched, z0, PredictorConfig(), SkipConfig(eta=eta)
            )
            assert [r.decision for r in result.records[:3]] == [Decision.FULL] * 3

    def test_full_records_read_zero_k_and_accumulator(self):
        backbone, sched, z0 = _setup()
        result = run(backbone, sched, z0, PredictorConfig(), SkipConfig(eta=0.2))
        for r in result.records:
            if r.decision is Decision.FULL:
                assert r.k == 0
                assert r.e_acc == 0.0

    def test_accumulator_non_decreasing_within_streaks(self):
        backbone, sched, z0 = _setup()
        result = run(backbone, sched, z0, PredictorConfig(), SkipConfig(eta=0.2))
        prev = 0.0
        for r in result.records:
            if r.decision is Decision.FULL:
                prev = 0.0
            else:
                assert r.e_acc >= prev
                prev = r.e_acc

    def test_cache_k_counts_streak_position(self):
        backbone, sched, z0 = _setup()
        result = run(
            backbone, sched, z0,
            PredictorConfig(),
            SkipConfig(kind=SkipKind.FIXED_INTERVAL, interval=3),
        )
        k = 0
        for r in result.records:
            if r.decision is Decision.FULL:
                k = 0
            else:
                k += 1
                assert r.k == k

    def test_determinism_bit_identical(self):
        backbone, sched, z0 = _setup()
        a = run(backbone, sched, z0, PredictorConfig(), SkipConfig())
        b = run(backbone, sched, z0, PredictorConfig(), SkipConfig())
        assert a.final_latent == b.final_latent
        assert a.full_count == b.full_count
        assert [r.e_acc for r in a.records] == [r.e_acc for r in b.records]

    def test_oracle_errors_recorded_when_reference_given(self):
        backbone, sched, z0 = _setup()
        ref = oracle_run(backbone, sched, z0, record_outputs=True)
        cached = run(
            backbone, sched, z0,
            PredictorConfig(), SkipConfig(),
            record_outputs=True,
            oracle_outputs=ref.surrogates,
        )
        fulls = [r for r in cached.records if r.decision is Decision.FULL]
        caches = [r for r in cached.records if r.decision is Decision.CACHE]
        assert all(r.rel_err == 0.0 for r in fulls)  # FULL reproduces oracle
        assert all(r.rel_err >= 0.0 for r in caches)
        assert any(r.rel_err > 0.0 for r in caches)

    def test_every_eta_full_set_is_subset_of_eta_zero(self):
        backbone, sched, z0 = _setup()
        base = run(backbone, sched, z0, PredictorConfig(), SkipConfig(eta=0.0))
        base_fulls = {
            r.step for r in base.records if r.decision is Decision.FULL
        }
        for eta in (0.1, 0.3):
            result = run(
                backbone, sched, z0, PredictorConfig(), SkipConfig(eta=eta)
            )
            fulls = {r.step for r in result.records if r.decision is Decision.FULL}
            assert fulls <= base_fulls
            assert {0, 1, 2} <= fulls

    def test_lower_eta_never_reduces_full_count(self):
        backbone, sched, z0 = _setup()
        etas = [0.5, 0.35, 0.2, 0.1, 0.0]
        counts = [
            run(
                backbone, sched, z0, PredictorConfig(), SkipConfig(eta=eta)
            ).full_count
            for eta in etas
        ]
        assert counts == sorted(counts)


class TestRunValidation:
    def test_random_grouping_needs_seed(self):
        backbone, sched, z0 = _setup()
        with pytest.raises(ParameterError):
            run(
                backbone, sched, z0,
                PredictorConfig(kind=PredictorKind.RANDOM_GROUPING),
                SkipConfig(),
            )

    def test_warmup_below_history_requirement(self):
        backbone, sched, z0 = _setup()
        with pytest.raises(ParameterError):
            run(
                backbone, sched, z0,
                PredictorConfig(),
                SkipConfig(warmup_fulls=2),
            )

    def test_reuse_with_difference_guided_allows_short_warmup(self):
        backbone, sched, z0 = _setup(steps=10)
        result = run(
            backbone, sched, z0,
            PredictorConfig(kind=PredictorKind.UNIFORM_REUSE),
            SkipConfig(kind=SkipKind.DIFFERENCE_GUIDED, tau=1e9, warmup_fulls=1),
        )
        assert result.full_count >= 1

    def test_backbone_shape_drift_aborts(self):
        class DriftingBackbone:
            def __init__(self):
                self.calls = 0

            def evaluate(self, z, t):
                self.calls += 1
                if self.calls > 2:
                    return TokenMatrix(np.zeros((3, 3)))
                return TokenMatrix(np.zeros((4, 3)))

        sched = EulerScheduler(uniform_grid(6))
        with pytest.raises(DimensionError):
            oracle_run(
                DriftingBackbone(), sched, TokenMatrix(np.zeros((4, 3)))
            )

    def test_oracle_outputs_length_must_match(self):
        backbone, sched, z0 = _setup(steps=10)
        ref = oracle_run(backbone, sched, z0, record_outputs=True)
        with pytest.raises(ParameterError):
            run(
                backbone, sched, z0,
                PredictorConfig(), SkipConfig(),
                oracle_outputs=ref.surrogates[:-1],
            )


class TestBaselinePolicies:
    def test_fixed_interval_full_count_formula(self):
        backbone, sched, z0 = _setup()
        for interval in (1, 2, 5):
            result = run(
                backbone, sched, z0,
                PredictorConfig(),
                SkipConfig(kind=SkipKind.FIXED_INTERVAL, interval=interval),
            )
            expected = 3 + (50 - 3 - 1) // (interval + 1)
            assert result.full_count == expected

    def test_guided_baselines_run_to_completion(self):
        backbone, sched, z0 = _setup()
        for kind in (
            SkipKind.DIFFERENCE_GUIDED,
            SkipKind.NORM_GUIDED,
            SkipKind.CURVATURE_GUIDED,
        ):
            result = run(
                backbone, sched, z0,
                PredictorConfig(),
                SkipConfig(kind=kind, tau=0.05),
            )
            assert result.full_count + result.cache_count == 50
            assert result.full_count >= 3

    def test_random_grouping_is_seed_deterministic(self):
        backbone, sched, z0 = _setup()
        cfg = PredictorConfig(kind=PredictorKind.RANDOM_GROUPING, rng_seed=11)
        a = run(backbone, sched, z0, cfg, SkipConfig())
        b = run(backbone, sched, z0, cfg, SkipConfig())
        c = run(
            backbone, sched, z0,
            PredictorConfig(kind=PredictorKind.RANDOM_GROUPING, rng_seed=12),
            SkipConfig(),
        )
        assert a.final_latent == b.final_latent
        assert a.final_latent != c.final_latent
