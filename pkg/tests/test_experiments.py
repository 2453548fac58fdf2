import math

import numpy as np
import pytest

from rbsim.errors import ConfigurationError
from rbsim.experiments import (
    ChaosConfig,
    LongtimeConfig,
    ModelSpec,
    PerfConfig,
    StabilityConfig,
    StrongOrderConfig,
    run_chaos_study,
    run_longtime_study,
    run_perf_benchmark,
    run_stability_study,
    run_strong_order_study,
)

OU_SPEC = ModelSpec(family="ou", alpha=1.0, eps=0.0, sigma=math.sqrt(2.0), dim=1)

SMALL_STRONG = dict(taus=(2**-4, 2**-5, 2**-6), replicas=8, n_particles=16)


def test_strong_order_kernel_free_all_batching_errors_zero():
    cfg = StrongOrderConfig(model=OU_SPEC, **SMALL_STRONG)
    res = run_strong_order_study(cfg)
    rows = res.table("strong_order").rows
    for row in rows:
        if "rbips" in row["pair"] and row["pair"].count("rbips") == 1:
            # mixed full/batched pairs differ only through batching: exactly zero
            if row["pair"] in ("reference_rbips_vs_reference_ips",):
                assert row["mse_sup"] == 0.0
    total = [r for r in rows if r["pair"] == "discrete_rbips_vs_reference_ips"]
    td = [r for r in rows if r["pair"] == "discrete_ips_vs_reference_ips"]
    for rb_row, full_row in zip(total, td):
        assert rb_row["mse_sup"] == full_row["mse_sup"]  # identical schemes when K = 0


def test_strong_order_result_reproducible():
    cfg = StrongOrderConfig(model=OU_SPEC, taus=(2**-4, 2**-5), replicas=4, n_particles=8)
    a = run_strong_order_study(cfg)
    b = run_strong_order_study(cfg)
    assert a.fingerprint == b.fingerprint
    assert a.table("strong_order").rows == b.table("strong_order").rows


def test_strong_order_threads_match_serial():
    cfg1 = StrongOrderConfig(model=OU_SPEC, taus=(2**-4,), replicas=4, n_particles=8, threads=1)
    cfg2 = StrongOrderConfig(model=OU_SPEC, taus=(2**-4,), replicas=4, n_particles=8, threads=2)
    a = run_strong_order_study(cfg1)
    b = run_strong_order_study(cfg2)
    rows_a = [(r["pair"], r["mse_sup"]) for r in a.table("strong_order").rows]
    rows_b = [(r["pair"], r["mse_sup"]) for r in b.table("strong_order").rows]
    assert rows_a == rows_b


def test_strong_order_tau_guard():
    with pytest.raises(ConfigurationError):
        run_strong_order_study(StrongOrderConfig(taus=(4.0,), replicas=2))
    with pytest.raises(ConfigurationError):
        run_strong_order_study(StrongOrderConfig(batch_sizes=(3,), replicas=2))


def test_strong_order_divergent_point_recorded_failed():
    # tau beyond the linear-stability range blows up; the grid point is
    # recorded as failed instead of poisoning the others.  Positions start at
    # a scale where the unstable map overflows within two steps while the
    # stable one only contracts.
    spec = ModelSpec(family="ou", alpha=16.0, eps=0.0, sigma=math.sqrt(2.0), dim=1)
    cfg = StrongOrderConfig(
        model=spec, taus=(0.25, 2**-6), replicas=2, n_particles=8,
        horizon=16.0, refine_levels=0, allow_unstable_tau=True,
        initial_law="gaussian", initial_scale=1e300,
    )
    res = run_strong_order_study(cfg)
    failed = [r for r in res.table("strong_order").rows if r["failed"]]
    ok = [r for r in res.table("strong_order").rows if not r["failed"]]
    assert {r["tau"] for r in failed} == {0.25}
    assert {r["tau"] for r in ok} == {2**-6}
    assert any("diverged" in w for w in res.warnings)


def test_longtime_smoke_schema_and_fits():
    cfg = LongtimeConfig(taus=(2**-4, 2**-5, 2**-6), pool_target=3200, pool_min=1600)
    res = run_longtime_study(cfg)
    curve = res.table("longtime_curve")
    assert curve.columns == ["n_particles", "tau", "t", "w1"]
    assert curve.rows[0]["t"] == 0.0
    plateau = res.table("longtime_plateau")
    assert {r["tau"] for r in plateau.rows} == {2**-4, 2**-5, 2**-6}
    assert "plateau_slope_n64" in res.fits
    assert any(k.startswith("decay_n64") for k in res.fits)


def test_longtime_stationary_start_is_flat():
    # starting in the invariant law, the curve stays at the Monte Carlo floor
    cfg = LongtimeConfig(
        model=ModelSpec(family="ou", alpha=2.0, eps=0.0, sigma=2.0, dim=1),
        taus=(2**-6,), n_grid=(64,), pool_target=6400, pool_min=6400,
        horizon=4.0, initial_law="gaussian", initial_scale=1.0,
        min_r_squared=0.0,
    )
    res = run_longtime_study(cfg)
    values = [r["w1"] for r in res.table("longtime_curve").rows]
    floor = float(np.median(values))
    assert max(values) <= 3.5 * floor  # no transient, just floor noise


def test_longtime_interacting_uses_oracle_target():
    spec = ModelSpec(family="ou_sine", alpha=1.0, eps=0.1, sigma=math.sqrt(2.0), dim=1)
    cfg = LongtimeConfig(
        model=spec, taus=(2**-5,), n_grid=(16,), pool_target=1600, pool_min=800,
        horizon=10.0, oracle_n_ref=64, oracle_tau_fine=2**-4, oracle_horizon=10.0,
        oracle_tail_snaps=4, min_r_squared=0.0, plateau_slope_min=0.0,
    )
    res = run_longtime_study(cfg)
    assert any("n_ref" in w for w in res.warnings)  # 64 < 8 * 16 triggers the size warning
    curve = res.table("longtime_curve").rows
    assert curve[0]["w1"] > curve[-1]["w1"]  # decays toward the reference


def test_chaos_smoke_and_self_floor():
    cfg = ChaosConfig(model=OU_SPEC, n_grid=(16, 64, 256), tau=2**-6, replicas=30)
    res = run_chaos_study(cfg)
    rows = res.table("chaos").rows
    assert [r["n_particles"] for r in rows] == [16, 64, 256]
    assert rows[0]["w1_mean"] > rows[-1]["w1_mean"]
    assert "chaos_slope" in res.fits


def test_chaos_dim_guard():
    with pytest.raises(ConfigurationError):
        run_chaos_study(ChaosConfig(model=ModelSpec(family="ou", alpha=1.0, eps=0.0, sigma=1.0, dim=2)))


def test_stability_smoke():
    cfg = StabilityConfig(n_steps=20_000, replicas=8)
    res = run_stability_study(cfg)
    summary = {r["tau"]: r for r in res.table("stability_summary").rows}
    assert summary[0.25]["diverged"] == 0
    assert summary[2.5]["diverged"] == 1
    assert summary[2.5]["divergence_step"] is not None
    assert all(a.passed for a in res.assertions)


def test_stability_requires_override():
    with pytest.raises(ConfigurationError):
        run_stability_study(StabilityConfig(allow_unstable_tau=False))


def test_stability_zero_noise_zero_moments():
    # sigma -> 0 with a dirac start keeps every particle at the origin
    spec = ModelSpec(family="ou", alpha=1.0, eps=0.0, sigma=1e-300, dim=1)
    cfg = StabilityConfig(
        model=spec, taus=(0.25,), n_steps=500, replicas=2, allow_unstable_tau=False,
        late_window=(10.0, 100.0),
    )
    res = run_stability_study(cfg)
    rows = res.table("stability_curve").rows
    assert max(abs(r["moment4"]) for r in rows) < 1e-250


def test_strong_order_dim2_smoke():
    spec = ModelSpec(family="ou_sine", alpha=0.5, eps=0.1, sigma=1.0, dim=2)
    cfg = StrongOrderConfig(model=spec, taus=(2**-4, 2**-5, 2**-6), replicas=6, n_particles=8)
    res = run_strong_order_study(cfg)
    fit = res.fits["order_discrete_rbips_vs_reference_ips_p2"]
    assert 0.5 <= fit.slope_hat <= 1.6  # loose window at smoke scale


def test_perf_smoke_tiny():
    cfg = PerfConfig(
        full_n_grid=(64, 128, 256),
        batched_n_grid=(256, 512, 1024),
        batched_fit_min_n=256,
        repeats=2,
        warmup=1,
        speedup_n=256,
        speedup_min=1.0,
        full_slope_window=(0.5, 3.0),
        batched_slope_window=(-0.5, 2.0),
    )
    res = run_perf_benchmark(cfg)
    rows = res.table("perf").rows
    assert len(rows) == 6
    assert all(r["seconds_per_step"] > 0 for r in rows)
    assert "perf_full_slope" in res.fits and "perf_batched_slope" in res.fits
