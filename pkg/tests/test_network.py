import numpy as np
import pytest

from xlhbf import autodiff as ad
from xlhbf import network as nw
from xlhbf.rng import substream

from conftest import cplx


def _params(mode="indirect", M=16, K=2, N=4, dims=(12, 8), seed=0):
    return nw.init_params(M, K, K, N, dims, mode, rng=np.random.default_rng(seed))


def test_measure_is_stacked_product(rng):
    p = _params()
    H = cplx(rng, 3, 16, 2)
    Y = nw.measure(p["sensing"], H).value
    phi = p["sensing"].value
    expect = np.concatenate([phi[n] @ H for n in range(4)], axis=1)
    assert np.array_equal(Y, expect) or np.allclose(Y, expect, rtol=0, atol=1e-14)
    stacked = phi.reshape(8, 16)
    assert np.allclose(Y, stacked @ H, atol=1e-14)


def test_slot_isolation(rng):
    p = _params()
    H = cplx(rng, 2, 16, 2)
    Y0 = nw.sensing_forward(H, 0.0, None, p)
    p["sensing"].value[1] += 0.5
    Y1 = nw.sensing_forward(H, 0.0, None, p)
    changed = np.any(Y0 != Y1, axis=(0, 2))
    assert changed.tolist() == [False, False, True, True, False, False, False, False]


def test_grouping_isolation_gradient(rng):
    p = _params()
    H = cplx(rng, 2, 16, 2)
    phi = p["sensing"]
    Y = nw.measure(phi, H)
    backward_target = ad.sum_(ad.abs_(Y[:, 2:4, :]))   # rows of slot 1
    ad.backward(backward_target)
    g = phi.grad
    assert np.all(g[[0, 2, 3]] == 0) and np.any(g[1] != 0)


def test_sensing_linearity(rng):
    p = _params()
    H1, H2 = cplx(rng, 16, 2), cplx(rng, 16, 2)
    a, b = 0.3 - 1j, 2.0
    lhs = nw.sensing_forward(a * H1 + b * H2, 0.0, None, p)
    rhs = a * nw.sensing_forward(H1, 0.0, None, p) + b * nw.sensing_forward(H2, 0.0, None, p)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_sensing_noise_covariance():
    p = _params(M=8, K=2, N=2)
    H = np.zeros((10_000, 8, 2), complex)
    s2 = 0.2
    Y = nw.sensing_forward(H, s2, substream(0, "cov"), p)
    phi = p["sensing"].value
    for n in range(2):
        rows = Y[:, 2 * n:2 * n + 2, :].transpose(0, 2, 1).reshape(-1, 2)
        C = rows.T @ rows.conj() / len(rows)
        ref = s2 * phi[n] @ phi[n].conj().T
        assert np.linalg.norm(C - ref) / np.linalg.norm(ref) < 0.1


def test_sensing_shape_error(rng):
    with pytest.raises(ValueError):
        nw.measure(_params()["sensing"], cplx(rng, 2, 15, 2))


def _bn_params(D, gamma=None):
    p = nw.init_params(4, 1, 1, 1, (D,), rng=np.random.default_rng(0))
    if gamma is not None:
        p["block1.gamma"].value[:] = gamma
    return p


def test_bn_whitening_oracle(rng):
    D = 3
    p = _bn_params(D, np.eye(2))
    A = rng.standard_normal((D, 2, 2)) + 2 * np.eye(2)
    z = rng.standard_normal((1024, D, 2))
    x = np.einsum("dij,ndj->ndi", A, z) + np.array([1.0, -2.0])
    xc = x[..., 0] + 1j * x[..., 1]
    out = nw.complex_bn(ad.Tensor(xc), p, 1, training=True).value
    for d in range(D):
        v = np.stack([out[:, d].real, out[:, d].imag])
        C = np.cov(v, bias=True)
        assert np.allclose(C, np.eye(2), atol=0.05)


def test_bn_identity_input_scaled_by_gamma(rng):
    p = _bn_params(2)
    z = rng.standard_normal((4096, 2, 2))
    z = (z - z.mean(0)) / z.std(0)
    x = z[..., 0] + 1j * z[..., 1]
    out = nw.complex_bn(ad.Tensor(x), p, 1, training=True, update_stats=False).value
    assert np.mean(np.abs(out - x / np.sqrt(2))) < 0.02


def test_bn_constant_batch():
    p = _bn_params(3)
    p["block1.beta"].value[:] = [1 + 1j, -2, 0.5j]
    x = np.full((8, 3), 3 - 2j)
    out = nw.complex_bn(ad.Tensor(x), p, 1, training=True).value
    assert np.all(np.isfinite(out))
    assert np.allclose(out, p["block1.beta"].value, atol=1e-12)


def test_bn_needs_two_rows():
    p = _bn_params(2)
    with pytest.raises(ValueError):
        nw.complex_bn(ad.Tensor(np.ones((1, 2), complex)), p, 1, training=True)


def test_bn_running_stats_and_inference(rng):
    p = _bn_params(2)
    x = ad.Tensor(3 + cplx(rng, 64, 2))
    nw.complex_bn(x, p, 1, training=True)
    assert np.allclose(p.bn_mean[1], 0.1 * x.value.mean(0))
    a = nw.complex_bn(x, p, 1, training=False).value
    b = nw.complex_bn(x, p, 1, training=False).value
    assert np.array_equal(a, b)


def test_mlp_user_permutation_equivariance(rng):
    p = _params()
    Y = cplx(rng, 3, 8, 2)
    f = nw.features_from_measurements(Y, p).value
    g = nw.features_from_measurements(Y[:, :, ::-1], p).value
    assert np.allclose(f[:, ::-1], g, atol=1e-14)


def test_mlp_bounded_and_zero(rng):
    p = _params()
    out = nw.mlp_forward(cplx(rng, 10, 8) * 50, p).value
    assert np.all(np.abs(out.real) <= 1) and np.all(np.abs(out.imag) <= 1)
    for k, t in p.tensors.items():
        if k.startswith("block") and not k.endswith("gamma"):
            t.value[:] = 0
    assert np.all(nw.mlp_forward(cplx(rng, 10, 8), p).value == 0)


def test_mlp_dimension_error(rng):
    with pytest.raises(ValueError):
        nw.mlp_forward(cplx(rng, 4, 7), _params())


def test_mlp_params_independent_of_K():
    a = nw.init_params(16, 2, 2, 4, (12, 8))
    b = nw.init_params(16, 3, 3, 4, (12, 8))
    # block 1 input width is N*K; later blocks identical
    for k in ("block2.W", "block2.b", "block1.b", "block1.gamma"):
        assert a[k].shape == b[k].shape
    assert a["block1.W"].shape[0] == b["block1.W"].shape[0]


def test_head_phase_preserved(rng):
    X = cplx(rng, 2, 8, 2)
    F = nw.cm_normalize(X, 8, 1e-12).value
    assert np.allclose(np.angle(F), np.angle(X), atol=1e-9)
    assert np.allclose(np.abs(F), 1 / np.sqrt(8), atol=1e-9)


def test_head_exact_zero_rule():
    F = nw.cm_normalize(np.zeros((4, 2), complex), 4, 1e-12).value
    assert np.allclose(F, 0.5)


def test_head_order_sensitive(rng):
    p = _params()
    feats = nw.ctanh(ad.Tensor(cplx(rng, 1, 2, 8))).value
    a = nw.head_forward(feats, p).value
    b = nw.head_forward(feats[:, ::-1], p).value
    assert not np.allclose(a, b)


def test_structural_identity(rng):
    p = _params(M=16, K=2, N=4)
    q = p.with_mode("direct")
    H = cplx(rng, 5, 16, 2)
    a = nw.forward(H, p).value
    b = nw.forward(nw.measure(q["sensing"], H).value, q).value
    assert np.array_equal(a, b)


def test_forward_cm_invariant_and_deterministic(rng):
    p = _params()
    H = cplx(rng, 7, 16, 2)
    F = nw.forward(H, p).value
    assert F.shape == (7, 16, 2)
    assert np.max(np.abs(np.abs(F) - 1 / 4)) < 1e-9
    assert np.array_equal(F, nw.forward(H, p).value)
    F1 = nw.forward(H, p, training=True, rng=substream(1, "t"), noise_sigma2=0.1,
                    update_stats=False).value
    F2 = nw.forward(H, p, training=True, rng=substream(1, "t"), noise_sigma2=0.1,
                    update_stats=False).value
    assert np.array_equal(F1, F2)


def test_forward_mode_mismatch(rng):
    p = _params()
    with pytest.raises(ValueError):
        nw.forward(cplx(rng, 2, 8, 2), p)
    with pytest.raises(ValueError):
        nw.forward(cplx(rng, 2, 16, 2), p.with_mode("direct"))


def test_param_names_fixed_order():
    p = _params(dims=(4, 3))
    assert p.names() == ["sensing", "block1.W", "block1.b", "block1.gamma", "block1.beta",
                         "block2.W", "block2.b", "block2.gamma", "block2.beta", "head.W", "head.b"]
