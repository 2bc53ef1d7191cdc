import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snncompress import tensor as tn
from snncompress.cat import (CatLayer, Codebook, assign, commitment_loss, effective_weight, init_codebook,
                             level_usage, quantize_codebook, reconstruct_quantized, reseed_dead_levels, total_loss)
from snncompress.errors import ContractError, DimensionError, StateError
from snncompress.tensor import Tensor

from oracles import round_half_away_scalar

finite = st.floats(-4, 4, allow_nan=False)


def test_assign_examples():
    k, w = assign(np.array([0.3]), Codebook([-1.0, 0.0, 1.0]))
    assert k.tolist() == [2] and w.tolist() == [0.0]
    k, w = assign(np.array([1.0]), Codebook([-1.0, 0.0, 1.0]))
    assert k.tolist() == [3] and w.tolist() == [1.0]
    k, w = assign(np.array([0.5]), Codebook([0.0, 1.0]))
    assert k.tolist() == [1] and w.tolist() == [0.0]


def test_assign_and_codebook_errors():
    with pytest.raises(ContractError):
        assign(np.array([0.1]), np.array([]))
    with pytest.raises(ContractError):
        Codebook([1.0])
    with pytest.raises(ContractError):
        Codebook([0.0, np.inf])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=finite), arrays(np.float64, st.integers(2, 6), elements=finite))
def test_assign_is_brute_force_nearest(latent, levels):
    k, w = assign(latent, Codebook(levels))
    for v, kk, ww in zip(latent, k, w):
        dists = [(v - c) ** 2 for c in levels]
        best = min(range(len(levels)), key=lambda j: (dists[j], j))
        assert kk == best + 1 and ww == levels[best]
    assert 1 <= k.min() and k.max() <= len(levels)


def test_effective_weight_forward_and_ste():
    lat = Tensor([0.3], requires_grad=True)
    out = effective_weight(lat, Tensor([0.0]))
    assert out.numpy().tolist() == [0.0]
    tn.sum(tn.scale(out, 2.5)).backward()
    assert lat.grad.tolist() == [2.5]
    with pytest.raises(DimensionError):
        effective_weight(Tensor([0.3, 0.1]), Tensor([0.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ste_identity_elementwise(seed):
    rng = np.random.default_rng(seed)
    lat = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    levels = Tensor(np.sort(rng.normal(size=4)), requires_grad=True)
    layer = CatLayer(lat.numpy(), Codebook(levels.numpy()))
    w_eff, _ = layer.build(lat, levels)
    x = Tensor(rng.normal(size=(5, 4)))
    target = rng.normal(size=(5, 3))
    loss = tn.sum(tn.square(tn.sub(tn.dense(x, w_eff), Tensor(target))))
    loss.backward()
    # dL/dW for y = x W^T with squared error, evaluated at the effective weight
    resid = x.numpy() @ w_eff.numpy().T - target
    assert np.allclose(lat.grad, 2 * resid.T @ x.numpy())
    assert np.unique(w_eff.numpy()).size <= 4


def test_task_gradient_switch_for_levels():
    lat = Tensor([0.1, 0.9], requires_grad=True)
    levels = Tensor([0.0, 1.0], requires_grad=True)
    w_eff, _ = CatLayer(lat.numpy(), Codebook(levels.numpy())).build(lat, levels, task_grad_to_codebook=False)
    tn.sum(w_eff).backward()
    assert levels.grad is None or np.all(levels.grad == 0)
    levels2 = Tensor([0.0, 1.0], requires_grad=True)
    w_eff, _ = CatLayer(lat.numpy(), Codebook(levels2.numpy())).build(lat, levels2)
    tn.sum(w_eff).backward()
    assert levels2.grad.tolist() == [1.0, 1.0]


def test_commitment_loss_examples():
    assert commitment_loss(Tensor([0.4, 0.2]), Tensor([0.4, 0.2])).item() == 0.0
    assert math.isclose(commitment_loss(Tensor([1.0, 0.0]), Tensor([0.9, 0.2])).item(), 0.025)
    with pytest.raises(DimensionError):
        commitment_loss(Tensor([1.0]), Tensor([0.9, 0.2]))


def test_commitment_gradient_goes_only_to_codebook():
    lat = Tensor([0.9, 0.2, 0.7], requires_grad=True)
    levels = Tensor([0.0, 1.0], requires_grad=True)
    k, _ = assign(lat, Codebook(levels.numpy()))
    commitment_loss(tn.gather(levels, k - 1), lat).backward()
    assert lat.grad is None or np.all(lat.grad == 0)
    # level 1 owns 0.2, level 2 owns 0.9 and 0.7
    assert np.allclose(levels.grad, [2 * (0.0 - 0.2) / 3, 2 * ((1 - 0.9) + (1 - 0.7)) / 3])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_commitment_fixed_point_iff_mean(seed, m):
    rng = np.random.default_rng(seed)
    lat = rng.normal(size=12)
    k = np.concatenate([np.arange(m), rng.integers(0, m, size=12 - m)])
    means = np.array([lat[k == j].mean() for j in range(m)])

    def grad_at(levels):
        lv = Tensor(levels, requires_grad=True)
        commitment_loss(tn.gather(lv, k), Tensor(lat)).backward()
        return lv.grad

    assert np.allclose(grad_at(means), 0.0, atol=1e-12)
    shifted = means + rng.choice([-1, 1], size=m) * rng.uniform(0.1, 1.0, size=m)
    assert np.all(np.abs(grad_at(shifted)) > 1e-6)


def test_commitment_descent_reaches_cluster_means():
    lat = np.array([-1.2, -0.8, -1.0, 0.9, 1.1, 1.3])
    levels = np.array([-0.3, 0.4])
    for _ in range(400):
        lv = Tensor(levels, requires_grad=True)
        k, _ = assign(lat, Codebook(levels))
        commitment_loss(tn.gather(lv, k - 1), Tensor(lat)).backward()
        levels = levels - 0.5 * lv.grad
    assert np.allclose(levels, [-1.0, 1.1], atol=1e-9)


def test_total_loss():
    assert total_loss(1.3, 7.0, 0.0) == 1.3
    assert total_loss(1.0, 0.5, 0.5) == 1.25
    assert total_loss(1.0, 0.5) == 1.25
    assert total_loss(Tensor(1.0), Tensor(0.5), 0.5).item() == 1.25
    with pytest.raises(ContractError):
        total_loss(1.0, 0.5, -0.1)


def test_quantize_codebook_examples():
    q = quantize_codebook(Codebook([0.0, 1.0]), 8)
    assert q.scale == 1.0 and q.q_levels.tolist() == [0, 1]
    q = quantize_codebook(Codebook([-2.0, 2.0]), 2)
    assert q.scale == 4.0 and q.q_levels.tolist() == [-1, 1]
    q = quantize_codebook(Codebook([-0.5, 0.25]), 8)
    assert q.scale == 1.0 and q.q_levels.tolist() == [-1, 0]
    assert q.bitwidth == 8 and q.mode == "paper-exact"


def test_quantize_codebook_errors():
    with pytest.raises(ContractError):
        quantize_codebook(Codebook([0.0, 1.0]), 3)
    with pytest.raises(ContractError):
        quantize_codebook(Codebook([0.0, 1.0]), 8, mode="fancy")


def test_resolution_preserving_mode_keeps_small_codebooks_apart():
    c = Codebook([-0.3, -0.05, 0.1, 0.25])
    exact = quantize_codebook(c, 8)
    assert set(exact.q_levels.tolist()) <= {-1, 0, 1}
    rp = quantize_codebook(c, 8, mode="resolution-preserving")
    assert math.isclose(rp.scale, 0.55 / 127)
    assert np.unique(rp.q_levels).size == 4
    assert np.all(np.abs(c.levels - rp.dequantized()) <= rp.scale / 2 + 1e-15)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)), st.sampled_from([2, 4, 8]),
       st.sampled_from(["paper-exact", "resolution-preserving"]))
def test_quantize_properties(levels, bits, mode):
    cb = Codebook(levels)
    q = quantize_codebook(cb, bits, mode)
    qmax = 2 ** (bits - 1) - 1
    assert np.all(np.abs(q.q_levels) <= qmax)
    rng = float(levels.max() - levels.min())
    if mode == "paper-exact":
        assert q.scale == max(rng, 1.0)
    # integer image from a scalar oracle
    want = [int(max(-qmax, min(qmax, round_half_away_scalar(c / q.scale)))) for c in levels]
    assert q.q_levels.tolist() == want
    for c, ch in zip(levels, q.q_levels):
        if abs(c / q.scale) <= qmax:
            assert abs(c - q.scale * ch) <= q.scale / 2 * (1 + 1e-12)
    again = quantize_codebook(q, bits, mode)
    assert again.scale == q.scale and again.q_levels.tolist() == q.q_levels.tolist()


def test_reconstruct_quantized():
    q = quantize_codebook(Codebook([0.0, 1.0]), 8)
    w, k = reconstruct_quantized(np.array([0.9]), q)
    assert w.tolist() == [1.0] and k.tolist() == [2]
    w, _ = reconstruct_quantized(np.array([0.0, 1.0]), q)
    assert w.tolist() == [0.0, 1.0]
    with pytest.raises(StateError):
        reconstruct_quantized(np.array([0.9]), Codebook([0.0, 1.0]))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.integers(2, 6), st.sampled_from([2, 4, 8]))
def test_reconstruct_has_at_most_m_values(latent, m, bits):
    cb = Codebook(np.linspace(-1, 1, m) * 3)
    w, k = reconstruct_quantized(latent, quantize_codebook(cb, bits, "resolution-preserving"))
    assert np.unique(w).size <= m
    assert k.min() >= 1 and k.max() <= m


def one_weight_oracle(latent, levels, target, xs, lr, steps):
    """Plain-float STE descent on mean((w_eff*x - target*x)^2) with frozen levels."""
    lat_hist, eff_hist = [], []
    for _ in range(steps):
        w_eff = min(levels, key=lambda c: ((latent - c) ** 2, levels.index(c)))
        g = sum(2 * (w_eff * x - target * x) * x for x in xs) / len(xs)
        latent -= lr * g
        lat_hist.append(latent)
        eff_hist.append(w_eff)
    return lat_hist, eff_hist


def test_one_weight_training_against_oracle():
    xs = [0.5, -1.0, 1.5, 2.0]
    levels = [0.0, 1.0]
    want_lat, want_eff = one_weight_oracle(0.2, levels, 0.9, xs, 0.05, 50)
    latent = np.array([0.2])
    got_lat, got_eff = [], []
    for _ in range(50):
        lat = Tensor(latent, requires_grad=True)
        w_eff, _ = CatLayer(latent, Codebook(levels)).build(lat, tn.detach(Tensor(levels)))
        x = Tensor(np.array(xs).reshape(-1, 1))
        pred = tn.dense(x, tn.reshape(w_eff, (1, 1)))
        loss = tn.mean(tn.square(tn.sub(pred, tn.scale(x, 0.9))))
        loss.backward()
        got_eff.append(float(w_eff.item()))
        latent = latent - 0.05 * lat.grad
        got_lat.append(float(latent[0]))
    assert np.allclose(got_lat, want_lat, atol=1e-12)
    assert got_eff == want_eff
    assert set(got_eff) <= {0.0, 1.0}
    assert len(set(np.round(got_lat, 12))) > 10  # the latent keeps moving between snaps


def test_level_usage_and_reseed():
    k, _ = assign(np.array([0.1, 0.2, 3.5]), Codebook([0.0, 1.0, 5.0]))
    usage = level_usage(k, 3)
    assert usage.tolist() == [2, 0, 1]
    cb = reseed_dead_levels(np.array([0.1, 0.2, 3.5]), Codebook([0.0, 1.0, 5.0]), usage)
    # 3.5 is the worst-served weight (distance 1.5 from level 5)
    assert cb.levels.tolist() == [0.0, 3.5, 5.0]
    same = Codebook([0.0, 1.0])
    assert reseed_dead_levels(np.array([0.0, 1.0]), same, [1, 1]) is same


def test_init_codebook_from_kmeans():
    lat = np.array([0.0, 0.1, 0.9, 1.0])
    cb = init_codebook(lat, 2, seed=0)
    assert np.allclose(sorted(cb.levels), [0.05, 0.95])


def test_cat_layer_assignment_and_effective():
    layer = CatLayer(np.array([[0.3, -0.9], [0.8, 0.1]]), Codebook([-1.0, 0.0, 1.0]))
    assert layer.assignment.tolist() == [[2, 1], [3, 2]]
    assert layer.effective().tolist() == [[0.0, -1.0], [1.0, 0.0]]
    layer.codebook = quantize_codebook(layer.codebook, 8)
    assert np.unique(layer.effective()).size <= 3
