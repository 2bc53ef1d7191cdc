import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snncompress import tensor as tn
from snncompress.baselines import kmeans_1d, ternary_forward, uniform_fake_quant
from snncompress.baselines.clustered import cluster_weights, int8_codebooks
from snncompress.baselines.quant import TernaryLayer, ternary_masks, uniform_grid
from snncompress.convert import unique_counts
from snncompress.errors import ContractError
from snncompress.network import build_network
from snncompress.tensor import Tensor, grad_check

from oracles import kmeans_all_partitions_optimum, kmeans_contiguous_optimum


def test_kmeans_examples():
    res = kmeans_1d([0.0, 1.0, 10.0, 11.0], 2)
    assert res.centroids.tolist() == [0.5, 10.5]
    assert res.assignment.tolist() == [0, 0, 1, 1]
    assert np.isclose(res.inertia, kmeans_all_partitions_optimum([0.0, 1.0, 10.0, 11.0], 2))
    res = kmeans_1d([3.0, -1.0, 2.0], 3)
    assert res.centroids.tolist() == [-1.0, 2.0, 3.0] and res.inertia == 0.0
    res = kmeans_1d([1.0, 2.0, 6.0], 1)
    assert res.centroids.tolist() == [3.0]


def test_kmeans_errors():
    with pytest.raises(ContractError):
        kmeans_1d([1.0, 1.0, 2.0], 3)
    with pytest.raises(ContractError):
        kmeans_1d([1.0, 2.0], 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=9), st.integers(1, 3), st.integers(0, 99))
def test_kmeans_matches_exhaustive_oracles(points, m, seed):
    if len(set(points)) < m:
        return
    res = kmeans_1d(points, m, seed=seed)
    brute = kmeans_all_partitions_optimum(points, m)
    contiguous = kmeans_contiguous_optimum(points, m)
    assert np.isclose(brute, contiguous, atol=1e-9)
    assert np.isclose(res.inertia, brute, rtol=1e-9, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=12), st.integers(1, 3), st.integers(0, 99))
def test_kmeans_contiguous_oracle_and_invariants(points, m, seed):
    if len(set(points)) < m:
        return
    res = kmeans_1d(points, m, seed=seed)
    assert np.isclose(res.inertia, kmeans_contiguous_optimum(points, m), rtol=1e-9, atol=1e-9)
    pts = np.array(points)
    d = (pts[:, None] - res.centroids[None, :]) ** 2
    assert np.allclose(d[np.arange(pts.size), res.assignment], d.min(axis=1))
    assert all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))
    assert np.all(np.diff(res.centroids) >= 0)


def test_kmeans_is_deterministic_under_seed():
    pts = np.random.default_rng(0).normal(size=200)
    a, b = kmeans_1d(pts, 5, seed=3), kmeans_1d(pts, 5, seed=3)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    assert np.array_equal(a.assignment, b.assignment)


def test_uniform_fake_quant_examples():
    w = Tensor([0.5, -1.0], requires_grad=True)
    q = uniform_fake_quant(w, 8)
    step = 1.0 / 127
    assert np.all(np.abs(q.numpy() - w.numpy()) <= step / 2 + 1e-15)
    tn.sum(tn.scale(q, 3.0)).backward()
    assert w.grad.tolist() == [3.0, 3.0]
    on_grid = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * (3.0 / 127)
    on_grid[-1] = 3.0
    assert np.allclose(uniform_grid(on_grid, 8)[0], on_grid, atol=1e-15)
    vals, step = uniform_grid(np.array([0.9, -0.8, 0.1]), 2)
    assert step == 0.9 and vals.tolist() == [0.9, -0.9, 0.0]
    zero = Tensor(np.zeros(3))
    assert np.array_equal(uniform_fake_quant(zero, 4).numpy(), np.zeros(3))
    with pytest.raises(ContractError):
        uniform_grid(np.ones(2), 3)


def test_ternary_examples():
    lat = np.array([0.9, -0.8, 0.01])
    pos, neg = ternary_masks(lat, 0.05)
    assert pos.tolist() == [True, False, False] and neg.tolist() == [False, True, False]
    out = ternary_forward(Tensor(lat), Tensor(0.7), Tensor(0.4), 0.05).numpy()
    assert out.tolist() == [0.7, -0.4, 0.0]
    # t < 1 means the largest weight always clears the threshold, so only a zero tensor maps to zero
    assert np.all(ternary_forward(Tensor(np.zeros(3)), Tensor(0.7), Tensor(0.4), 0.5).numpy() == 0)
    with pytest.raises(ContractError):
        TernaryLayer(lat, 1.0, 1.0, 1.0)


def test_ternary_backward_by_hand():
    lat = Tensor([0.9, -0.8, 0.01], requires_grad=True)
    wp, wn = Tensor(0.7, requires_grad=True), Tensor(0.4, requires_grad=True)
    g = np.array([1.0, 2.0, 3.0])
    tn.sum(tn.mul(ternary_forward(lat, wp, wn, 0.05), Tensor(g))).backward()
    assert lat.grad.tolist() == [0.7, 0.8, 3.0]
    assert wp.grad.item() == 1.0
    assert wn.grad.item() == -2.0


def test_ternary_scale_gradients_match_finite_differences():
    lat = Tensor(np.random.default_rng(2).normal(size=(4, 3)))
    rep = grad_check(lambda p, n: tn.sum(tn.square(ternary_forward(lat, p, n, 0.3))), [Tensor(0.6), Tensor(0.9)])
    assert rep.passed


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.9))
def test_ternary_has_at_most_three_values(seed, t):
    lat = np.random.default_rng(seed).normal(size=30)
    layer = TernaryLayer.from_latent(lat, t)
    out = layer.forward().numpy()
    assert set(np.unique(out)) <= {-layer.w_neg, 0.0, layer.w_pos}
    assert layer.w_pos > 0 and layer.w_neg > 0


def test_cluster_step_is_identity_when_m_covers_all_values():
    net = build_network((1, 4, 4), [("conv", 2)], 2, seed=0)
    rng = np.random.default_rng(0)
    for layer in net.layers:
        layer.weight = rng.choice([-0.5, 0.1, 0.3], size=layer.weight.shape)
    before = [layer.weight.copy() for layer in net.layers]
    cluster_weights(net, 3)
    for layer, w in zip(net.layers, before):
        # centroids are sum/count means, equal to the shared value up to rounding
        assert np.allclose(layer.effective(), w, rtol=0, atol=1e-15)
        assert np.unique(layer.effective()).size == np.unique(w).size
    assert all(v <= 3 for v in unique_counts(net).values())


def test_cluster_then_int8_bounds_unique_values():
    net = build_network((1, 6, 6), [("conv", 3)], 2, seed=1)
    cluster_weights(net, 4)
    assert all(v <= 4 for v in unique_counts(net).values())
    int8_codebooks(net)
    for layer in net.layers:
        assert layer.codebook.quantized and layer.codebook.bitwidth == 8
        assert np.unique(layer.effective()).size <= 4
