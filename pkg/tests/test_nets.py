import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simbalab import autodiff as ad
from simbalab import nets
from simbalab.autodiff import Tensor
from simbalab.nets import NetworkSpec


def np_ln(x, g=None, b=None, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if g is not None:
        y = y * g + b
    return y


def np_simba(p, x, L, variant="simba"):
    """Straight-line numpy re-implementation of the simba trunk and head."""
    h = x @ p["embed/w"] + p["embed/b"]
    for i in range(L):
        pre = h if variant == "simba-preLN" else np_ln(h, p[f"block{i}/ln/gain"],
                                                       p[f"block{i}/ln/bias"])
        inner = np.maximum(pre @ p[f"block{i}/fc1/w"] + p[f"block{i}/fc1/b"], 0.0)
        branch = inner @ p[f"block{i}/fc2/w"] + p[f"block{i}/fc2/b"]
        h = branch if variant == "simba-residual" else h + branch
    if variant != "simba-postLN":
        h = np_ln(h, p["post_ln/gain"], p["post_ln/bias"])
    return h, h @ p["head/w"] + p["head/b"]


def randomized(spec, seed=0):
    """Params with every tensor (including LN affine and biases) random."""
    rng = np.random.default_rng(seed)
    params = nets.init_params(spec, seed)
    params.tensors = {k: rng.standard_normal(v.shape) * (0.5 if k.endswith("/w") else 0.3)
                      + (1.0 if k.endswith("/gain") else 0.0)
                      for k, v in params.tensors.items()}
    return params


def test_layer_norm_examples():
    np.testing.assert_array_equal(nets.layer_norm(np.array([[1.0, 1.0, 1.0]])).data,
                                  [[0.0, 0.0, 0.0]])
    x = np.array([[1.0, -1.0]])
    np.testing.assert_allclose(nets.layer_norm(x).data, x / np.sqrt(1.0 + 1e-5), atol=1e-12)
    np.testing.assert_allclose(nets.layer_norm(x).data, [[1.0, -1.0]], atol=1e-4)
    y = nets.layer_norm(np.array([[2.0, 4.0, 6.0]])).data
    assert abs(y.mean()) < 1e-4 and abs(y.var() - 1.0) < 1e-4


def test_layer_norm_contract_on_1000_vectors(rng):
    x = rng.standard_normal((1000, 16)) * rng.uniform(1.0, 10.0, (1000, 1)) + 3.0
    y = nets.layer_norm(x).data
    assert np.abs(y.mean(axis=1)).max() < 1e-4
    assert np.abs(y.var(axis=1) - 1.0).max() < 1e-4


def test_embed_examples(rng):
    w = {"embed/w": Tensor(np.eye(2)), "embed/b": Tensor(np.zeros(2))}
    np.testing.assert_array_equal(nets.embed(np.array([[1.0, 2.0]]), w).data, [[1.0, 2.0]])
    w = {"embed/w": Tensor(np.zeros((2, 2))), "embed/b": Tensor([5.0, 5.0])}
    np.testing.assert_array_equal(nets.embed(rng.standard_normal((1, 2)), w).data, [[5.0, 5.0]])
    W, b, x = rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal((2, 3))
    naive = np.array([[sum(x[n, i] * W[i, j] for i in range(3)) + b[j] for j in range(4)]
                      for n in range(2)])
    out = nets.embed(x, {"embed/w": Tensor(W), "embed/b": Tensor(b)}).data
    np.testing.assert_allclose(out, naive, rtol=0, atol=1e-12)


def _block_weights(rng, d, zero_w2=False, zero_b1=False):
    w = {"block0/ln/gain": rng.standard_normal(d), "block0/ln/bias": rng.standard_normal(d),
         "block0/fc1/w": rng.standard_normal((d, 4 * d)),
         "block0/fc1/b": np.zeros(4 * d) if zero_b1 else rng.standard_normal(4 * d),
         "block0/fc2/w": np.zeros((4 * d, d)) if zero_w2 else rng.standard_normal((4 * d, d)),
         "block0/fc2/b": np.zeros(d) if zero_w2 else rng.standard_normal(d)}
    return {k: Tensor(v) for k, v in w.items()}, w


def test_residual_block_examples(rng):
    x = rng.standard_normal((3, 5))
    w, _ = _block_weights(rng, 5, zero_w2=True)
    assert np.array_equal(nets.residual_block(x, w, 0).data, x)
    w, raw = _block_weights(rng, 5, zero_b1=True)
    raw_zero_ln = dict(w)
    raw_zero_ln["block0/ln/bias"] = Tensor(np.zeros(5))
    raw_zero_ln["block0/fc2/b"] = Tensor(np.zeros(5))
    np.testing.assert_array_equal(nets.residual_block(np.zeros((1, 5)), raw_zero_ln, 0).data,
                                  np.zeros((1, 5)))
    w, raw = _block_weights(rng, 5)
    ref = x + np.maximum(np_ln(x, raw["block0/ln/gain"], raw["block0/ln/bias"])
                         @ raw["block0/fc1/w"] + raw["block0/fc1/b"], 0) \
        @ raw["block0/fc2/w"] + raw["block0/fc2/b"]
    np.testing.assert_allclose(nets.residual_block(x, w, 0).data, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", nets.SIMBA_FAMILY)
def test_simba_family_matches_straight_line_oracle(variant, rng):
    spec = NetworkSpec(variant, 5, 8, 2, 3)
    p = randomized(spec, 3)
    x = rng.standard_normal((7, 5))
    out = nets.forward(spec, p, x)
    z_ref, y_ref = np_simba(p.tensors, x, 2, variant)
    np.testing.assert_allclose(out.features.data, z_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.out.data, y_ref, rtol=0, atol=1e-12)


def test_simba_L0_is_ln_of_embed(rng):
    spec = NetworkSpec("simba", 4, 6, 0)
    p = nets.init_params(spec, 0)
    x = rng.standard_normal((3, 4))
    ref = np_ln(x @ p["embed/w"] + p["embed/b"])
    np.testing.assert_allclose(nets.forward(spec, p, x).features.data, ref, atol=1e-12)


def test_identity_pathway_exact(rng):
    spec = NetworkSpec("simba", 4, 6, 3)
    p = randomized(spec, 1)
    for i in range(3):
        p.tensors[f"block{i}/fc2/w"] = np.zeros_like(p.tensors[f"block{i}/fc2/w"])
        p.tensors[f"block{i}/fc2/b"] = np.zeros_like(p.tensors[f"block{i}/fc2/b"])
    x = rng.standard_normal((5, 4))
    z = nets.forward(spec, p, x).features.data
    ref = nets.layer_norm(nets.embed(x, nets.bind(p)), nets.bind(p)["post_ln/gain"],
                          nets.bind(p)["post_ln/bias"]).data
    assert np.array_equal(z, ref)


def np_mlp(p, x, spec):
    h, skip = x, None
    for i in range(spec.num_blocks):
        if spec.variant == "mlp+res" and i % 2 == 1:
            skip = h
        if spec.variant == "mlp+ln" and i > 0:
            h = np_ln(h, p[f"hidden{i}/ln/gain"], p[f"hidden{i}/ln/bias"])
        h = np.maximum(h @ p[f"hidden{i}/w"] + p[f"hidden{i}/b"], 0.0)
        if spec.variant == "mlp+res" and i >= 2 and i % 2 == 0:
            h = skip + h
    if spec.variant == "mlp+ln":
        h = np_ln(h, p["head/ln/gain"], p["head/ln/bias"])
    return h @ p["head/w"] + p["head/b"]


@pytest.mark.parametrize("variant", ["mlp", "mlp+res", "mlp+ln"])
def test_mlp_family_matches_oracle(variant, rng):
    spec = NetworkSpec(variant, 3, 6, 5, 2)
    p = randomized(spec, 2)
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(nets.forward(spec, p, x).out.data, np_mlp(p.tensors, x, spec),
                               rtol=0, atol=1e-12)


def test_count_params_examples():
    assert nets.count_params(NetworkSpec("mlp", 2, 4, 2, 1)) == 37
    d_o, d, L = 67, 512, 2
    closed = (d_o * d + d) + L * (2 * d + d * 4 * d + 4 * d + 4 * d * d + d) + 2 * d + (d + 1)
    assert nets.count_params(NetworkSpec("simba", d_o, d, L, 1)) == closed


@given(st.integers(1, 64), st.integers(0, 4), st.integers(1, 8))
def test_count_params_monotone(d_h, L, d_o):
    c = nets.count_params(NetworkSpec("simba", d_o, d_h, L))
    assert nets.count_params(NetworkSpec("simba", d_o, d_h + 1, L)) > c
    assert nets.count_params(NetworkSpec("simba", d_o, d_h, L + 1)) > c


def test_count_matches_init():
    for v in nets.VARIANTS:
        spec = NetworkSpec(v, 3, 5, 3, 2, "gaussian-policy")
        p = nets.init_params(spec, 0)
        assert sum(a.size for a in p.tensors.values()) == nets.count_params(spec)


def test_inner_expansion_is_4x():
    p = nets.init_params(NetworkSpec("simba", 3, 7, 1), 0)
    assert p["block0/fc1/w"].shape == (7, 28)
    assert p["block0/fc2/w"].shape == (28, 7)


def test_init_scheme():
    spec = NetworkSpec("simba", 6, 8, 1, 2)
    p = nets.init_params(spec, 0)
    w1 = p["block0/fc1/w"]           # 8 x 32: orthonormal rows scaled by sqrt 2
    np.testing.assert_allclose(w1 @ w1.T, 2.0 * np.eye(8), atol=1e-12)
    e = p["embed/w"]                 # 6 x 8: orthonormal rows
    np.testing.assert_allclose(e @ e.T, np.eye(6), atol=1e-12)
    w2 = p["block0/fc2/w"]           # 32 x 8: orthonormal columns scaled by 1e-2
    np.testing.assert_allclose(w2.T @ w2, 1e-4 * np.eye(8), atol=1e-15)
    h = p["head/w"]
    np.testing.assert_allclose(h.T @ h, 1e-4 * np.eye(2), atol=1e-15)
    for k, v in p.tensors.items():
        if k.endswith("/b") or k.endswith("/bias"):
            assert not v.any()
        if k.endswith("/gain"):
            assert np.all(v == 1.0)


def test_init_deterministic_and_reset():
    spec = NetworkSpec("simba", 3, 4, 1)
    a, b = nets.init_params(spec, 5), nets.init_params(spec, 5)
    x = np.ones((2, 3))
    assert nets.forward(spec, a, x).out.data.tobytes() == nets.forward(spec, b, x).out.data.tobytes()
    c = nets.reset_params(a, 6)
    assert not np.array_equal(c["embed/w"], a["embed/w"])
    assert np.array_equal(c["embed/w"], nets.init_params(spec, 6)["embed/w"])


def test_unknown_variant_and_head():
    with pytest.raises(ValueError):
        NetworkSpec("transformer", 2, 4, 1)
    with pytest.raises(ValueError):
        NetworkSpec("simba", 2, 4, 1, head="categorical")
    assert NetworkSpec("simba−postLN", 2, 4, 1).variant == "simba-postLN"


def test_dimension_mismatch():
    spec = NetworkSpec("simba", 3, 4, 1)
    with pytest.raises(ad.ShapeError):
        nets.forward(spec, nets.init_params(spec, 0), np.ones((2, 5)))


def test_gaussian_head_examples():
    spec = NetworkSpec("simba", 3, 4, 1, 2, "gaussian-policy")
    p = nets.init_params(spec, 0)
    p.tensors["head/w"] = np.zeros_like(p["head/w"])
    out = nets.forward(spec, p, np.ones((1, 3))).out
    mean, log_std = nets.gaussian_head(out, 2)
    assert np.all(mean.data == 0) and np.all(np.exp(log_std.data) == 1.0)
    _, clamped = nets.gaussian_head(Tensor([[0.0, 100.0]]), 1)
    assert clamped.data[0, 0] == 2.0
    _, clamped = nets.gaussian_head(Tensor([[0.0, -100.0]]), 1)
    assert clamped.data[0, 0] == -10.0
    a, _ = nets.squashed_gaussian(Tensor([[1e6]]), Tensor([[0.0]]), np.zeros((1, 1)), 2.0)
    assert a.data[0, 0] == 2.0


def test_squashed_gaussian_log_prob_matches_density(rng):
    mean, log_std = rng.standard_normal((5, 2)), rng.standard_normal((5, 2)) * 0.3
    noise = rng.standard_normal((5, 2))
    scale = 2.0
    a, logp = nets.squashed_gaussian(Tensor(mean), Tensor(log_std), noise, scale)
    std = np.exp(log_std)
    u = mean + std * noise
    gauss = -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * math.log(2 * math.pi)
    ref = np.sum(gauss - np.log(scale * (1 - np.tanh(u) ** 2 + 1e-6)), axis=1)
    np.testing.assert_allclose(a.data, scale * np.tanh(u), atol=1e-12)
    np.testing.assert_allclose(logp.data, ref, atol=1e-9)


def test_deterministic_and_q_heads():
    assert nets.deterministic_head(Tensor([[1e6, -1e6]]), 2.0).data.tolist() == [[2.0, -2.0]]
    assert nets.q_head(Tensor([[3.0], [4.0]])).data.tolist() == [3.0, 4.0]


@pytest.mark.parametrize("variant", nets.VARIANTS)
def test_forward_grad_check_every_variant(variant):
    spec = NetworkSpec(variant, 3, 8, 1 if variant.startswith("simba") else 3, 1)
    p = randomized(spec, 4)
    x = np.random.default_rng(5).standard_normal((2, 3))
    for name in ("embed/w", "hidden0/w", "block0/fc1/w", "head/w"):
        if name not in p.tensors:
            continue

        def f(t, name=name):
            w = nets.bind(p)
            w[name] = t
            return ad.sum(ad.square(nets.forward(spec, w, x).out))

        assert ad.grad_check(f, p[name]) < 1e-4


def test_match_hidden_dim():
    ref = nets.count_params(NetworkSpec("simba", 2, 32, 1))
    got = nets.match_hidden_dim(NetworkSpec("mlp", 2, 1, 3), ref)
    assert abs(nets.count_params(got) - ref) / ref <= 0.01
    with pytest.raises(ValueError):
        nets.match_hidden_dim(NetworkSpec("mlp", 2, 1, 1), 7, tol=1e-9)
