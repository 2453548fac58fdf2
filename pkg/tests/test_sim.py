import math

import numpy as np
import pytest

from rbsim.errors import ConfigurationError, DivergenceError
from rbsim.model import ForceModel, builtin_model
from rbsim.rng import make_noise_plan, make_partition_plan
from rbsim.sim import (
    InitialLaw,
    SystemState,
    mean_field_oracle,
    reference_ips,
    reference_rbips,
    simulate,
    step_em_batched,
    step_em_full,
)


def _state(positions):
    return SystemState(np.asarray(positions, dtype=float), 0, 0.0)


def test_step_deterministic_contraction(ou_model):
    s = step_em_full(_state([[1.0], [-1.0]]), ou_model, 0.5, np.zeros((2, 1)))
    np.testing.assert_array_equal(s.positions, [[0.5], [-0.5]])
    assert s.step_index == 1 and s.time == 0.5


def test_step_tau_zero_identity(ou_sine_model):
    x = [[0.4], [-0.9]]
    s = step_em_full(_state(x), ou_sine_model, 0.0, np.zeros((2, 1)))
    np.testing.assert_array_equal(s.positions, x)


def test_step_two_particle_example(ou_sine_model):
    s = step_em_full(_state([[1.0], [-1.0]]), ou_sine_model, 0.1, np.zeros((2, 1)))
    # 1 + (-1 + 0.1 sin 2) * 0.1
    assert s.positions[0, 0] == pytest.approx(1.0 + (-1.0 + 0.1 * math.sin(2.0)) * 0.1, abs=1e-15)
    assert s.positions[0, 0] == pytest.approx(0.90909, abs=5e-6)


def test_step_batched_example(ou_sine_model):
    s = step_em_batched(
        _state([[1.0], [-1.0], [2.0], [-2.0]]), ou_sine_model, 0.1, np.zeros((4, 1)), [[0, 1], [2, 3]]
    )
    assert s.positions[2, 0] == pytest.approx(2.0 + (-2.0 + 0.1 * math.sin(4.0)) * 0.1, abs=1e-15)
    assert s.positions[2, 0] == pytest.approx(1.79243, abs=5e-6)


def test_step_batched_single_batch_matches_full(ou_sine_model, rng):
    x = rng.standard_normal((8, 1))
    dw = rng.standard_normal((8, 1))
    a = step_em_full(_state(x), ou_sine_model, 0.05, dw)
    b = step_em_batched(_state(x), ou_sine_model, 0.05, dw, [np.arange(8)])
    np.testing.assert_allclose(b.positions, a.positions, rtol=1e-12, atol=0.0)


def test_step_divergence_error(ou_model):
    huge = np.full((2, 1), 1e308)
    with pytest.raises(DivergenceError) as err:
        step_em_full(_state(huge), ou_model, 4.0, np.zeros((2, 1)))
    assert err.value.step_index == 1


def test_step_exchangeability(ou_sine_model, rng):
    # Relabeling particles, noise, and batch indices permutes the output.
    n = 4
    x = rng.standard_normal((n, 1))
    dw = rng.standard_normal((n, 1))
    division = np.array([[0, 2], [1, 3]])
    perm = np.array([2, 0, 3, 1])
    inv = np.argsort(perm)
    out = step_em_batched(_state(x), ou_sine_model, 0.1, dw, division)
    relabeled = step_em_batched(_state(x[perm]), ou_sine_model, 0.1, dw[perm], inv[division])
    np.testing.assert_allclose(relabeled.positions, out.positions[perm], rtol=1e-12, atol=0.0)


def test_simulate_zero_steps(ou_model):
    noise = make_noise_plan(1, 4, 1, 1.0, 3)
    rec = simulate("discrete_ips", ou_model, 4, None, 0.125, 0, noise)
    assert rec.steps == (0,)
    np.testing.assert_array_equal(rec.positions(0), np.zeros((4, 1)))


def test_simulate_determinism(ou_sine_model):
    noise = make_noise_plan(42, 8, 1, 1.0, 5)
    parts = make_partition_plan(43, 8, 2, 32)
    a = simulate("discrete_rbips", ou_sine_model, 8, 2, 1 / 32, 32, noise, parts)
    b = simulate("discrete_rbips", ou_sine_model, 8, 2, 1 / 32, 32, noise, parts)
    assert a.steps == b.steps
    for s in a.steps:
        np.testing.assert_array_equal(a.positions(s), b.positions(s))


def test_degeneracy_chain(ou_model, ou_sine_model):
    noise = make_noise_plan(17, 8, 1, 1.0, 5)
    parts = make_partition_plan(18, 8, 2, 32)
    pN = make_partition_plan(19, 8, 8, 32)

    # refine_levels=0 reference equals the discrete scheme bitwise
    d_ips = simulate("discrete_ips", ou_sine_model, 8, None, 1 / 32, 32, noise)
    r_ips0 = reference_ips(ou_sine_model, 8, 1 / 32, 32, noise, 0)
    for s in d_ips.steps:
        np.testing.assert_array_equal(d_ips.positions(s), r_ips0.positions(s))

    d_rb = simulate("discrete_rbips", ou_sine_model, 8, 2, 1 / 32, 32, noise, parts)
    r_rb0 = reference_rbips(ou_sine_model, 8, 2, 1 / 32, 32, noise, parts, 0)
    for s in d_rb.steps:
        np.testing.assert_array_equal(d_rb.positions(s), r_rb0.positions(s))

    # single batch of size N equals the full scheme
    d_rbN = simulate("discrete_rbips", ou_sine_model, 8, 8, 1 / 32, 32, noise, pN)
    for s in d_ips.steps:
        np.testing.assert_allclose(d_rbN.positions(s), d_ips.positions(s), rtol=1e-12, atol=0.0)

    # kernel-free: batched and full schemes coincide bitwise
    k_ips = simulate("discrete_ips", ou_model, 8, None, 1 / 32, 32, noise)
    k_rb = simulate("discrete_rbips", ou_model, 8, 2, 1 / 32, 32, noise, parts)
    for s in k_ips.steps:
        np.testing.assert_array_equal(k_rb.positions(s), k_ips.positions(s))


def test_reference_matches_ode_flow():
    # K = 0, sigma -> 0 for the flow check: x(1) = e^-1 from x0 = 1.
    model = ForceModel(
        drift=lambda x: -x, kernel=None, sigma=1e-300, dim=1,
        declared_l0=1.0, declared_l1=0.0, declared_alpha=1.0, declared_theta=1e-9,
    )
    noise = make_noise_plan(5, 2, 1, 1.0, 12)
    law = InitialLaw("uniform", 1e-12)  # effectively zero spread; avoids the trivial fixed point
    rec = reference_ips(model, 2, 1.0, 1, noise, refine_levels=12, initial_law=law)
    x0 = rec.positions(0)
    x1 = rec.positions(1)
    # relative contraction factor approaches e^-1 as the fine step shrinks
    factor = x1 / x0
    np.testing.assert_allclose(factor, math.exp(-1.0), rtol=2e-4)


def test_reference_self_convergence(ou_sine_model):
    # successive refinements shrink the root-mean-square gap by about 2x
    noise = make_noise_plan(91, 8, 1, 1.0, 10)
    tau = 1 / 16
    msd = {}
    recs = {r: reference_ips(ou_sine_model, 8, tau, 16, noise, r) for r in (4, 5, 6)}
    for r in (4, 5):
        d = recs[r].positions(16) - recs[r + 1].positions(16)
        msd[r] = float(np.mean(d * d))
    rms_ratio = math.sqrt(msd[4] / msd[5])
    assert 1.4 <= rms_ratio <= 3.0


def test_ou_em_variance_fixed_point(ou_model):
    # long-run EM variance of the kernel-free chain: 2 / (2 - tau)
    tau, n_steps, reps = 0.1, 600, 80
    samples = []
    for rep in range(reps):
        noise = make_noise_plan(1000 + rep, 64, 1, tau * 1024, 10)
        rec = simulate("discrete_ips", ou_model, 64, None, tau, n_steps, noise, snapshot_every=20)
        for s in rec.steps:
            if s * tau >= 20.0:
                samples.append(rec.positions(s).ravel())
    pooled = np.concatenate(samples)
    assert pooled.size >= 100_000
    assert pooled.var() == pytest.approx(2.0 / (2.0 - tau), abs=0.01)


def test_simulate_requires_partitions_iff_batched(ou_sine_model):
    noise = make_noise_plan(3, 4, 1, 1.0, 2)
    parts = make_partition_plan(4, 4, 2, 4)
    with pytest.raises(ConfigurationError):
        simulate("discrete_rbips", ou_sine_model, 4, 2, 0.25, 4, noise)
    with pytest.raises(ConfigurationError):
        simulate("discrete_ips", ou_sine_model, 4, None, 0.25, 4, noise, parts)
    with pytest.raises(ConfigurationError):
        simulate("reference_ips", ou_sine_model, 4, None, 0.25, 4, noise)


def test_simulate_tau_must_fit_noise_grid(ou_model):
    noise = make_noise_plan(3, 4, 1, 1.0, 3)
    with pytest.raises(ConfigurationError):
        simulate("discrete_ips", ou_model, 4, None, 0.3, 3, noise)
    with pytest.raises(ConfigurationError):
        simulate("discrete_ips", ou_model, 4, None, 0.125, 9, noise)  # horizon exceeded


def test_initial_law_moments():
    assert InitialLaw("dirac").moments(3) == (0.0, 0.0)
    m2, m4 = InitialLaw("gaussian", 2.0).moments(1)
    assert m2 == pytest.approx(4.0) and m4 == pytest.approx(48.0)
    m2, m4 = InitialLaw("uniform", 1.0).moments(2)
    assert m2 == pytest.approx(2.0 / 3.0) and m4 == pytest.approx(2.0 / 5.0 + 2.0 / 9.0)
    with pytest.raises(ConfigurationError):
        InitialLaw("cauchy")
    samples = InitialLaw("gaussian", 0.5).sample(2000, 2, seed=9)
    assert samples.std() == pytest.approx(0.5, abs=0.02)


def test_mean_field_oracle_kernel_free_matches_simulate(ou_model):
    # With no kernel the oracle takes exactly the discrete scheme's steps.
    tau, n_steps = 1 / 32, 64
    orc = mean_field_oracle(ou_model, 16, tau, n_steps, seed=77, snapshot_every=64)
    noise = make_noise_plan(77, 16, 1, tau * 64, 6)
    ref = simulate("discrete_ips", ou_model, 16, None, tau, n_steps, noise, snapshot_every=64)
    np.testing.assert_array_equal(orc.positions(n_steps), ref.positions(n_steps))


def test_mean_field_oracle_terminal_variance(ou_model):
    # invariant law N(0, 1): terminal empirical variance at T=20
    tau = 2**-7
    n_steps = round(20.0 / tau)
    orc = mean_field_oracle(ou_model, 10_000, tau, n_steps, seed=5, snapshot_every=n_steps // 8)
    late = np.concatenate([orc.positions(s).ravel() for s in orc.steps if s * tau >= 18.0])
    assert late.var() == pytest.approx(1.0, abs=0.02)


def test_mean_field_oracle_gap_halves_with_n(ou_model):
    # squared W1 gap to the invariant law scales like 1/N_ref
    from rbsim.metrics import w1_vs_gaussian_1d

    tau = 2**-5
    n_steps = round(10.0 / tau)
    gaps = {}
    for n_ref in (500, 1000, 2000, 4000):
        vals = []
        for rep in range(8):
            orc = mean_field_oracle(ou_model, n_ref, tau, n_steps, seed=31 * n_ref + rep, snapshot_every=n_steps)
            vals.append(w1_vs_gaussian_1d(orc.positions(n_steps).ravel(), 0.0, 1.0))
        gaps[n_ref] = float(np.mean(vals))
    slope = np.polyfit(np.log(list(gaps)), np.log(list(gaps.values())), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.2)


def test_stability_contract_short(ou_model):
    # tau < tau0: no divergence over many steps
    tau = 0.25
    noise = make_noise_plan(55, 64, 1, tau * (1 << 14), 14)
    parts = make_partition_plan(56, 64, 2, 10_000)
    rec = simulate("discrete_rbips", ou_model, 64, 2, tau, 10_000, noise, parts, snapshot_every=1000)
    assert rec.steps[-1] == 10_000
