import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbsim.errors import (
    ConfigurationError,
    InvalidPartitionError,
    InvalidSystemError,
    ModelEvaluationError,
)
from rbsim.model import (
    ForceModel,
    builtin_model,
    check_assumptions,
    eval_drift,
    interaction_mean_full,
    pairwise_force_batched,
    pairwise_force_full,
    tau0_bound,
)


def test_eval_drift_linear(ou_model):
    assert eval_drift(ou_model, np.array([1.5]))[0] == -1.5
    assert np.all(eval_drift(ou_model, np.zeros((1, 1))) == 0.0)


def test_eval_drift_tanh_example():
    model = ForceModel(
        drift=lambda x: -x + 0.5 * np.tanh(x),
        kernel=None,
        sigma=1.0,
        dim=1,
        declared_l0=1.5,
        declared_l1=0.0,
        declared_alpha=0.5,
        declared_theta=0.1,
    )
    # independent scalar evaluation: -2 + 0.5*tanh(2)
    expected = -2.0 + 0.5 * math.tanh(2.0)
    assert eval_drift(model, np.array([2.0]))[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-1.5180, abs=5e-5)


def test_eval_drift_nonfinite_rejected():
    model = ForceModel(
        drift=lambda x: np.where(x > 0, np.inf, x),
        kernel=None,
        sigma=1.0,
        dim=1,
        declared_l0=1.0,
        declared_l1=0.0,
        declared_alpha=1.0,
        declared_theta=0.1,
    )
    with pytest.raises(ModelEvaluationError):
        eval_drift(model, np.array([1.0]))


def test_force_full_kernel_free_is_drift(ou_model):
    x = np.array([[1.0], [-1.0]])
    np.testing.assert_array_equal(pairwise_force_full(ou_model, x), -x)


def test_force_full_two_particle_example(ou_sine_model):
    x = np.array([[1.0], [-1.0]])
    f = pairwise_force_full(ou_sine_model, x)
    assert f[0, 0] == pytest.approx(-1.0 + 0.1 * math.sin(2.0), abs=1e-14)
    assert f[0, 0] == pytest.approx(-0.9091, abs=5e-5)


def test_force_constant_kernel_averages_to_itself():
    c = 0.37
    model = ForceModel(
        drift=lambda x: np.zeros_like(x),
        kernel=lambda r: np.full_like(r, c),
        sigma=1.0,
        dim=1,
        declared_l0=0.0,
        declared_l1=abs(c),
        declared_alpha=1.0,
        declared_theta=1.0,
    )
    x = np.array([[0.3], [-1.2], [2.5]])
    np.testing.assert_allclose(pairwise_force_full(model, x), c, rtol=1e-12)


def test_force_batched_example(ou_sine_model):
    x = np.array([[1.0], [-1.0], [2.0], [-2.0]])
    f = pairwise_force_batched(ou_sine_model, x, [[0, 1], [2, 3]])
    assert f[2, 0] == pytest.approx(-2.0 + 0.1 * math.sin(4.0), abs=1e-14)
    assert f[2, 0] == pytest.approx(-2.0757, abs=5e-5)


def test_force_batched_single_batch_matches_full(ou_sine_model, rng):
    x = rng.standard_normal((16, 1))
    full = pairwise_force_full(ou_sine_model, x)
    batched = pairwise_force_batched(ou_sine_model, x, [np.arange(16)])
    np.testing.assert_allclose(batched, full, rtol=1e-12, atol=0.0)


def test_force_batched_kernel_free_any_partition(ou_model, rng):
    x = rng.standard_normal((8, 1))
    full = pairwise_force_full(ou_model, x)
    batched = pairwise_force_batched(ou_model, x, [[3, 0], [7, 2], [1, 6], [5, 4]])
    np.testing.assert_array_equal(batched, full)


def test_force_errors(ou_sine_model):
    with pytest.raises(InvalidSystemError):
        pairwise_force_full(ou_sine_model, np.zeros((1, 1)))
    x = np.zeros((4, 1))
    with pytest.raises(InvalidPartitionError):
        pairwise_force_batched(ou_sine_model, x, [[0], [1], [2], [3]])  # p < 2
    with pytest.raises(InvalidPartitionError):
        pairwise_force_batched(ou_sine_model, x, [[0, 1], [1, 2]])  # not a partition
    with pytest.raises(InvalidPartitionError):
        pairwise_force_batched(ou_sine_model, x, [[0, 1, 2], [3]])  # unequal sizes


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_sine_fast_path_matches_generic(seed):
    model = builtin_model("ou_sine", alpha=1.0, eps=0.3, sigma=1.0, dim=2)
    x = np.random.default_rng(seed).standard_normal((12, 2)) * 2.0
    generic = interaction_mean_full(model, x)
    fast = model.kernel_pair_mean(x)
    np.testing.assert_allclose(fast, generic, rtol=1e-12, atol=1e-14)


@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([4, 6, 8, 12]))
@settings(max_examples=20, deadline=None)
def test_permutation_equivariance_full(seed, n):
    gen = np.random.default_rng(seed)
    model = builtin_model("ou_sine", alpha=0.5, eps=0.2, sigma=1.0)
    x = gen.standard_normal((n, 1))
    perm = gen.permutation(n)
    np.testing.assert_allclose(
        pairwise_force_full(model, x[perm]),
        pairwise_force_full(model, x)[perm],
        rtol=1e-12,
        atol=1e-14,
    )


def test_batched_mean_over_partitions_unbiased(rng):
    # Monte Carlo over random equal-size divisions approaches the full force.
    from rbsim.rng import make_partition_plan

    model = builtin_model("ou_sine", alpha=1.0, eps=1.0, sigma=1.0)
    n, p, n_draws = 8, 2, 10_000
    x = np.linspace(-2.0, 2.0, n)[:, None] + 0.1 * rng.standard_normal((n, 1))
    gamma_full = pairwise_force_full(model, x) - eval_drift(model, x)
    plan = make_partition_plan(12345, n, p, n_draws)
    acc = np.zeros_like(x)
    for step in range(n_draws):
        acc += pairwise_force_batched(model, x, plan.division(step)) - eval_drift(model, x)
    mean_gamma = acc / n_draws
    rel = np.linalg.norm(mean_gamma - gamma_full) / np.linalg.norm(gamma_full)
    assert rel <= 0.02


def test_tau0_examples():
    assert tau0_bound(1.0, 1.0) == 0.5
    assert tau0_bound(4.0, 4.0) == 0.125
    with pytest.raises(ConfigurationError):
        tau0_bound(0.0, 1.0)


def test_check_assumptions_builtin(ou_model, ou_sine_model):
    for model in (ou_model, ou_sine_model):
        report = check_assumptions(model, grid_radius=10.0, grid_points=64)
        assert report.all_ok
        assert report.tau0 == 0.5
    # linear drift with sigma = sqrt(2): quotient is exactly 1 at every separation
    report = check_assumptions(ou_model, grid_radius=5.0, grid_points=16)
    assert all(k == pytest.approx(1.0, abs=1e-12) for _, k in report.kappa_samples)


def test_check_assumptions_expansive_drift_fails():
    model = ForceModel(
        drift=lambda x: x,
        kernel=None,
        sigma=1.0,
        dim=1,
        declared_l0=1.0,
        declared_l1=0.0,
        declared_alpha=1.0,
        declared_theta=0.1,
    )
    report = check_assumptions(model, grid_radius=5.0, grid_points=16)
    assert not report.dissipation_ok
    assert not report.kappa_asymptotically_positive


def test_check_assumptions_dim2():
    model = builtin_model("ou_sine", alpha=1.0, eps=0.1, sigma=1.0, dim=2)
    report = check_assumptions(model, grid_radius=8.0, grid_points=32)
    assert report.all_ok


def test_builtin_model_validation():
    with pytest.raises(ConfigurationError):
        builtin_model("ou", alpha=-1.0)
    with pytest.raises(ConfigurationError):
        builtin_model("unknown")
    with pytest.raises(ConfigurationError):
        ForceModel(
            drift=lambda x: -x, kernel=None, sigma=0.0, dim=1,
            declared_l0=1.0, declared_l1=0.0, declared_alpha=1.0, declared_theta=0.1,
        )
