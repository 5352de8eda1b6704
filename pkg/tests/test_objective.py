import math
import warnings

import numpy as np
import pytest
from scipy.special import expit, logit

from conftest import all_pairs, random_instance
from core import Cascade, CascadeSet, ZeroHazardWarning, make_rng
from objective import (
    UnconstrainedParams,
    build_tensors,
    exp_pdf,
    hazard,
    initial_params,
    mix_rates,
    nll_fast,
    nll_gradient,
    nll_oracle,
    stick_breaking,
    survival,
    transform_params,
)


def _cascade(cid, events, horizon=2.0):
    nodes, times = zip(*events)
    return Cascade(id=cid, horizon=horizon, nodes=np.array(nodes), times=np.array(times, dtype=float))


def _sparse_alpha(alpha, edges):
    return alpha[:, edges[:, 0], edges[:, 1]]


def test_exponential_building_blocks():
    assert exp_pdf(0.0, 2.0) == 2.0
    assert exp_pdf(1.0, 0.5) == pytest.approx(0.5 * math.exp(-0.5))
    assert survival(2.0, 0.5) == pytest.approx(math.exp(-1.0))
    assert survival(3.0, 0.0) == 1.0
    assert hazard(7.0, 0.3) == 0.3
    assert mix_rates([0.25, 0.75], [0.4, 0.8]) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        exp_pdf(1.0, 0.0)


def test_oracle_on_a_hand_computed_cascade():
    # 0 seeds at 0, 1 activates at 1, 2 never activates before T=2
    cs = CascadeSet((_cascade(0, [(0, 0.0), (1, 1.0)]),))
    alpha = np.zeros((1, 3, 3))
    alpha[0, 0, 1] = 0.5
    alpha[0, 0, 2] = 0.25
    alpha[0, 1, 2] = 0.125
    expected = 1.0 * 0.5 - math.log(0.5) + 2.0 * 0.25 + 1.0 * 0.125
    assert nll_oracle(cs, alpha, np.ones((1, 1))) == pytest.approx(expected)


def test_seed_only_cascade_contributes_only_survival():
    cs = CascadeSet((_cascade(0, [(0, 0.0)], horizon=3.0),))
    alpha = np.zeros((1, 2, 2))
    alpha[0, 0, 1] = 0.2
    assert nll_oracle(cs, alpha, np.ones((1, 1))) == pytest.approx(0.6)


def test_fast_matches_oracle_on_random_instances():
    rng = make_rng(2024, 99)
    for _ in range(200):
        cascades, alpha, pi = random_instance(rng)
        n = alpha.shape[1]
        edges = all_pairs(n)
        tensors = build_tensors(cascades, edges, n)
        assert tensors.n_dropped == 0
        expected = nll_oracle(cascades, alpha, pi)
        got = nll_fast(tensors, _sparse_alpha(alpha, edges), pi)
        assert got == pytest.approx(expected, rel=1e-8, abs=1e-12)


def test_single_layer_mode_fixes_memberships():
    rng = make_rng(5, 99)
    cascades, alpha, _ = random_instance(rng, max_layers=1)
    n = alpha.shape[1]
    edges = all_pairs(n)
    tensors = build_tensors(cascades, edges, n)
    expected = nll_oracle(cascades, alpha[:1], np.ones((len(cascades), 1)))
    assert nll_fast(tensors, _sparse_alpha(alpha[:1], edges)[0]) == pytest.approx(expected, rel=1e-10)


def test_nodes_without_candidate_in_edges_are_dropped():
    cs = CascadeSet((_cascade(7, [(0, 0.0), (1, 0.5), (2, 1.0)]),))
    tensors = build_tensors(cs, np.array([[0, 1]]), 3)
    assert tensors.dropped == [(7, 2)]
    assert tensors.n_groups == 1
    assert nll_fast(tensors, np.array([0.5])) == pytest.approx(0.5 * 0.5 - math.log(0.5))


def test_zero_hazard_is_infinite_with_a_warning():
    cs = CascadeSet((_cascade(3, [(0, 0.0), (1, 1.0)]),))
    alpha = np.zeros((1, 2, 2))
    with pytest.warns(ZeroHazardWarning) as record:
        assert nll_oracle(cs, alpha, np.ones((1, 1))) == math.inf
    assert record[0].message.pairs == [(3, 1)]

    tensors = build_tensors(cs, np.array([[0, 1]]), 2)
    with pytest.warns(ZeroHazardWarning):
        assert nll_fast(tensors, np.array([0.0])) == math.inf
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert math.isfinite(nll_fast(tensors, np.array([0.0]), floor=1e-300))


def test_duplicating_cascades_doubles_the_objective():
    rng = make_rng(8, 99)
    cascades, alpha, pi = random_instance(rng)
    n = alpha.shape[1]
    edges = all_pairs(n)
    doubled = CascadeSet(cascades.cascades + tuple(
        Cascade(id=c.id + 1000, horizon=c.horizon, nodes=c.nodes, times=c.times) for c in cascades))
    once = nll_fast(build_tensors(cascades, edges, n), _sparse_alpha(alpha, edges), pi)
    twice = nll_fast(build_tensors(doubled, edges, n), _sparse_alpha(alpha, edges), np.vstack([pi, pi]))
    assert twice == pytest.approx(2 * once, rel=1e-12)


def test_transform_stays_on_simplex_and_in_box():
    rng = make_rng(9, 99)
    for n_layers in (2, 3, 5):
        raw = UnconstrainedParams(rng.normal(0.0, 5.0, size=(n_layers, 20_000)),
                                  rng.normal(0.0, 5.0, size=(20_000, n_layers - 1)))
        alpha, pi = transform_params(raw)
        assert np.all((alpha > 0) & (alpha < 1))
        assert np.all(pi >= 0)
        assert np.max(np.abs(pi.sum(axis=1) - 1.0)) <= 1e-12


def test_stick_breaking_values():
    pi, s, remaining = stick_breaking(np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(pi, [[0.5, 0.25, 0.25]])
    np.testing.assert_allclose(remaining, [[1.0, 0.5, 0.25]])


def test_initial_params_start_uniform():
    raw = initial_params(50, 30, 4, make_rng(0, 99))
    alpha, pi = transform_params(raw)
    assert raw.alpha_raw.shape == (4, 50)
    assert raw.pi_raw.shape == (30, 3)
    assert np.all((alpha > expit(-2.2)) & (alpha < expit(-2.0)))
    np.testing.assert_allclose(pi, 0.25, atol=0.01)

    single = initial_params(5, 3, 1, make_rng(0, 99))
    assert single.pi_raw.shape == (3, 0)


def _finite_difference(tensors, raw, single_layer, h=1e-5):
    flat = raw.flat()
    grad = np.empty_like(flat)
    for idx in range(len(flat)):
        up, down = flat.copy(), flat.copy()
        up[idx] += h
        down[idx] -= h
        f_up, _ = nll_gradient(tensors, raw.with_flat(up), single_layer)
        f_down, _ = nll_gradient(tensors, raw.with_flat(down), single_layer)
        grad[idx] = (f_up - f_down) / (2 * h)
    return grad


def test_gradient_matches_central_differences():
    rng = make_rng(77, 99)
    for _ in range(50):
        cascades, alpha, _ = random_instance(rng, max_nodes=6, max_cascades=5)
        n, n_layers = alpha.shape[1], alpha.shape[0]
        edges = all_pairs(n)
        tensors = build_tensors(cascades, edges, n)
        raw = UnconstrainedParams(rng.normal(-1.0, 1.0, size=(n_layers, len(edges))),
                                  rng.normal(0.0, 1.0, size=(len(cascades), n_layers - 1)))
        value, grad = nll_gradient(tensors, raw)
        assert value == pytest.approx(nll_fast(tensors, *transform_params(raw)), rel=1e-12)
        np.testing.assert_allclose(grad.flat(), _finite_difference(tensors, raw, False), rtol=1e-4, atol=1e-6)


def test_single_layer_gradient_matches_central_differences():
    rng = make_rng(78, 99)
    cascades, alpha, _ = random_instance(rng, max_nodes=6, max_cascades=5)
    n = alpha.shape[1]
    edges = all_pairs(n)
    tensors = build_tensors(cascades, edges, n)
    raw = initial_params(len(edges), len(cascades), 1, rng)
    _, grad = nll_gradient(tensors, raw, single_layer=True)
    np.testing.assert_allclose(grad.flat(), _finite_difference(tensors, raw, True), rtol=1e-4, atol=1e-6)


def _pi_to_raw(pi):
    """Inverse stick-breaking"""
    remaining = 1.0 - np.cumsum(pi, axis=1) + pi
    return logit(pi[:, :-1] / remaining[:, :-1])


def test_layer_relabeling_leaves_value_and_rate_gradient_invariant():
    rng = make_rng(31, 99)
    checked = 0
    while checked < 30:
        cascades, alpha, pi = random_instance(rng)
        n_layers, n = alpha.shape[0], alpha.shape[1]
        if n_layers < 2:
            continue
        edges = all_pairs(n)
        tensors = build_tensors(cascades, edges, n)
        rates = _sparse_alpha(alpha, edges)
        perm = rng.permutation(n_layers)
        assert nll_fast(tensors, rates[perm], pi[:, perm]) == pytest.approx(nll_fast(tensors, rates, pi), rel=1e-12)

        value, grad = nll_gradient(tensors, UnconstrainedParams(logit(rates), _pi_to_raw(pi)))
        value_p, grad_p = nll_gradient(tensors, UnconstrainedParams(logit(rates[perm]), _pi_to_raw(pi[:, perm])))
        assert value_p == pytest.approx(value, rel=1e-10)
        np.testing.assert_allclose(grad_p.alpha_raw, grad.alpha_raw[perm], rtol=1e-8, atol=1e-10)
        checked += 1


def test_gradient_vanishes_on_saturated_parameters():
    cs = CascadeSet((_cascade(0, [(0, 0.0), (1, 1.0)]),))
    tensors = build_tensors(cs, np.array([[0, 1]]), 2)
    raw = UnconstrainedParams(np.array([[40.0], [-1.0]]), np.array([[40.0]]))
    value, grad = nll_gradient(tensors, raw)
    assert math.isfinite(value)
    assert abs(grad.alpha_raw[0, 0]) < 1e-15
    assert abs(grad.pi_raw[0, 0]) < 1e-15
    np.testing.assert_allclose(stick_breaking(raw.pi_raw)[0], [[1.0, 0.0]], atol=1e-12)


def test_duplicated_cascades_double_the_phase_two_objective_and_gradient():
    rng = make_rng(12, 99)
    cascades, alpha, _ = random_instance(rng, max_layers=1)
    n = alpha.shape[1]
    edges = all_pairs(n)
    doubled = CascadeSet(cascades.cascades + tuple(
        Cascade(id=c.id + 1000, horizon=c.horizon, nodes=c.nodes, times=c.times) for c in cascades))
    raw = UnconstrainedParams(rng.normal(-1.0, 1.0, size=(2, len(edges))),
                              rng.normal(0.0, 1.0, size=(len(cascades), 1)))
    value, grad = nll_gradient(build_tensors(cascades, edges, n), raw)
    value2, grad2 = nll_gradient(build_tensors(doubled, edges, n),
                                 UnconstrainedParams(raw.alpha_raw, np.vstack([raw.pi_raw, raw.pi_raw])))
    assert value2 == pytest.approx(2 * value, rel=1e-12)
    np.testing.assert_allclose(grad2.alpha_raw, 2 * grad.alpha_raw, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(grad2.pi_raw, np.vstack([grad.pi_raw, grad.pi_raw]), rtol=1e-12, atol=1e-14)


def test_small_gradient_steps_descend_from_random_points():
    for seed in range(20):
        rng = make_rng(seed, 98)
        cascades, alpha, _ = random_instance(rng, max_nodes=8, max_cascades=6)
        n_layers, n = alpha.shape[0], alpha.shape[1]
        edges = all_pairs(n)
        tensors = build_tensors(cascades, edges, n)
        raw = UnconstrainedParams(rng.normal(-1.0, 1.0, size=(n_layers, len(edges))),
                                  rng.normal(0.0, 1.0, size=(len(cascades), n_layers - 1)))
        value, grad = nll_gradient(tensors, raw)
        direction = grad.flat() / np.linalg.norm(grad.flat())
        stepped, _ = nll_gradient(tensors, raw.with_flat(raw.flat() - 1e-4 * direction))
        assert stepped < value, seed
