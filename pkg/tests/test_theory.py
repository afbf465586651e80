import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import max_margin_enumeration
from relulab.datasets import Dataset, compute_stats, make_named, make_symmetric_gaussian, symmetrize, whiten
from relulab.dynamics import TrainConfig, integrate_reduced_two_layer
from relulab.errors import (InfeasibleError, PreconditionError, RankDeficiencyError, ShapeError,
                            SingularSpecError, WindowError)
from relulab.model import NetworkParams, init_gaussian, init_rank1_balanced, predict
from relulab.numkit import make_rng
from relulab.theory import (ClosedFormSpec, closed_form_spec, closed_form_w, decompose_two_layer,
                            depth_sep_g, depth_sep_network, early_phase_spec, early_phase_weights,
                            logistic_linear_solution, max_margin, max_margin_solution, odd_part,
                            ols_solution,
                            symmetric_loss_split)


def small_weights(draw_seed, H=6, D=3, scale=0.7, alpha=0.0):
    return init_gaussian(make_rng(draw_seed), [D, H, 1], scale, alpha)


# ---------------------------------------------------------------------------
# early phase


def test_early_phase_zero_init_is_zero():
    st_ = compute_stats(make_symmetric_gaussian(make_rng(0), 20, 3))
    net = NetworkParams([np.zeros((4, 3)), np.zeros((1, 4))], 0.0)
    w1, w2 = early_phase_weights(early_phase_spec(net, st_, w_init=1e-6), 1.0)
    assert not w1.any() and not w2.any()


def test_early_phase_rate_and_window():
    st_ = compute_stats(make_symmetric_gaussian(make_rng(0), 20, 3))
    net = init_gaussian(make_rng(1), [3, 5, 1], 1e-4, 0.5)
    spec = early_phase_spec(net, st_)
    assert spec.rate == pytest.approx(0.75 * st_.s)
    a1, _ = early_phase_weights(spec, 0.0)
    b1, _ = early_phase_weights(spec, 1.0)
    assert np.linalg.norm(b1) / np.linalg.norm(a1) == pytest.approx(np.exp(spec.rate))
    with pytest.raises(WindowError):
        early_phase_weights(spec, spec.horizon)
    with pytest.raises(WindowError):
        early_phase_weights(spec, -1.0)
    with pytest.raises(ShapeError):
        early_phase_spec(init_gaussian(make_rng(1), [3, 4, 4, 1], 1e-4, 0.0), st_)


# ---------------------------------------------------------------------------
# closed form


def test_closed_form_aligned_is_logistic_growth():
    # r = beta_hat: the map starts at w_init^2 and follows w' = 2 w (s - w)
    bh = np.array([1.0, 0.0])
    spec = ClosedFormSpec(bh, 0.01, 2.0, bh, alpha=1.0)
    t = np.array([0.0, 0.5, 1.0, 3.0])
    got = np.array([closed_form_w(spec, x)[0] for x in t])
    want = 2.0 / (1.0 + (2.0 / 1e-4 - 1.0) * np.exp(-4.0 * t))
    assert np.allclose(got, want, rtol=1e-12)


def test_closed_form_limits():
    rng = make_rng(3)
    bh = rng.standard_normal(4)
    bh /= np.linalg.norm(bh)
    r = rng.standard_normal(4)
    spec = ClosedFormSpec(r / np.linalg.norm(r), 1e-3, 1.7, bh, alpha=0.0)
    if spec.q2 <= 0.1:
        spec = ClosedFormSpec(-spec.r, 1e-3, 1.7, bh)
    w0 = closed_form_w(spec, 0.0)
    assert np.allclose(w0, 1e-6 * spec.r, rtol=1e-12, atol=0)
    assert np.allclose(closed_form_w(spec, 400.0), 1.7 * bh, rtol=1e-9)


def test_closed_form_singular():
    bh = np.array([0.0, 1.0])
    with pytest.raises(SingularSpecError):
        closed_form_w(ClosedFormSpec(-bh, 0.1, 1.0, bh), 1.0)


def test_closed_form_json_roundtrip():
    spec = ClosedFormSpec(np.array([0.6, 0.8]), 0.01, 1.5, np.array([1.0, 0.0]), 0.5, 2.0)
    back = ClosedFormSpec.from_json(spec.to_json())
    assert np.allclose(closed_form_w(back, 0.7), closed_form_w(spec, 0.7))
    alt = ClosedFormSpec.from_json({"r": [3, 4], "w_init": 0.01, "beta": [1.5, 0.0], "alpha": 0.5, "tau": 2.0})
    assert np.allclose(closed_form_w(alt, 0.7), closed_form_w(spec, 0.7))


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_closed_form_matches_reduced_flow(alpha):
    d = whiten(make_symmetric_gaussian(make_rng(4), 200, 3, teacher="linear"))
    stats = compute_stats(d)
    net = init_rank1_balanced(make_rng(5), 8, 3, np.array([0.3, -1.0, 0.4]) / np.sqrt(1.25), 1e-3, alpha=alpha)
    spec = closed_form_spec(net, stats)
    eta = 0.001
    tr = integrate_reduced_two_layer(net, stats, TrainConfig(eta=eta, steps=int(8 / stats.s / eta),
                                                            snapshot_every=100, monitors=()))
    c = (alpha + 1) / 2
    errs = []
    for t, snap in zip(tr.snapshot_times(), tr.snapshots):
        w_sim = c * snap.product()[0]
        errs.append(np.linalg.norm(w_sim - closed_form_w(spec, t)) / np.linalg.norm(w_sim))
    assert errs[0] < 1e-12
    assert max(errs) < 1e-2


# ---------------------------------------------------------------------------
# converged solutions


def test_ols_solution():
    x = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    d = symmetrize(Dataset(x, x @ np.array([2.0, -1.0])))
    assert np.allclose(ols_solution(compute_stats(d)), [2.0, -1.0], atol=1e-12)
    flat = symmetrize(Dataset(np.array([[1.0, 1.0], [2.0, 2.0]]), np.array([1.0, 2.0])))
    with pytest.raises(RankDeficiencyError):
        ols_solution(compute_stats(flat))


def test_max_margin_two_points():
    d = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, -1.0]))
    assert np.allclose(max_margin(d), np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_max_margin_matches_enumeration(seed):
    d = make_named("labelflip", {"flips": 0, "n_half": 5}, seed=seed)
    sol = max_margin_solution(d)
    want = max_margin_enumeration(d.inputs, d.targets)
    assert sol.kkt_residual < 1e-8
    assert np.allclose(sol.w, want, atol=1e-7)


def test_max_margin_infeasible():
    d = Dataset(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([1.0, -1.0]))
    with pytest.raises(InfeasibleError):
        max_margin_solution(d, dual_cap=1e3)
    with pytest.raises(InfeasibleError):
        max_margin_solution(d, max_sweeps=50)
    with pytest.raises(ValueError):
        max_margin(Dataset(np.eye(2), np.array([0.5, 1.0])))


def test_logistic_linear_solution_is_stationary():
    d = make_named("labelflip", {"flips": 2, "n_half": 12}, seed=4)
    w = logistic_linear_solution(d)
    m = d.targets * (d.inputs @ w)
    grad = -(d.inputs.T @ (d.targets / (1 + np.exp(m)))) / d.P
    assert np.linalg.norm(grad) < 1e-12
    with pytest.raises(InfeasibleError):
        logistic_linear_solution(make_named("labelflip", {"flips": 0, "n_half": 12}, seed=4))


# ---------------------------------------------------------------------------
# odd/even structure


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.0, 1.0))
def test_decomposition_identity(seed, alpha):
    net = small_weights(seed, alpha=alpha)
    x = make_rng(seed + 1).standard_normal((7, 3))
    w_eff, even = decompose_two_layer(net)
    assert np.allclose(x @ w_eff + even(x), predict(net, x), atol=1e-12)
    assert np.allclose(odd_part(net)(x), x @ w_eff, atol=1e-12)
    assert np.allclose(even(-x), even(x), atol=1e-15)


def test_decomposition_linear_has_no_even_part():
    net = small_weights(3, alpha=1.0)
    w_eff, even = decompose_two_layer(net)
    assert np.allclose(w_eff, net.product()[0])
    assert not np.any(even(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        decompose_two_layer(init_gaussian(make_rng(0), [2, 3, 3, 1], 1.0, 0.0))


def test_depth_sep_witnesses():
    net = depth_sep_network()
    x = make_rng(6).standard_normal((50, 2))
    g = np.array([depth_sep_g(p) for p in x])
    assert np.allclose(predict(net, x), g, atol=1e-14)
    # odd and positively homogeneous
    assert np.allclose([depth_sep_g(-p) for p in x], -g, atol=1e-14)
    assert np.allclose([depth_sep_g(3.0 * p) for p in x], 3.0 * g, atol=1e-13)
    # not linear: additivity fails on a witness pair
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert depth_sep_g(a) == 1.0 and depth_sep_g(b) == 0.0 and depth_sep_g(a + b) == 0.0


def test_symmetric_loss_split_adds_up():
    d = make_symmetric_gaussian(make_rng(7), 30, 3)
    net = small_weights(8, alpha=0.3)
    lin, even = symmetric_loss_split(net, d)
    total = 0.5 * np.mean((d.targets - predict(net, d.inputs)) ** 2)
    assert lin + even == pytest.approx(total, rel=1e-12)
    asym = make_named("asym6", {"delta": 0.2})
    with pytest.raises(PreconditionError):
        symmetric_loss_split(net.replace(layers=[np.ones((6, 2)), np.ones((1, 6))]), asym)
