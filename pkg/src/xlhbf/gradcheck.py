"""Central finite-difference checks for the autodiff engine."""

import numpy as np

from .autodiff import Tensor, backward


def numerical_grad(f, params, step=1e-6):
    """Central differences of the real scalar ``f()`` w.r.t. each real component.

    ``params`` are leaf tensors whose ``.value`` is perturbed in place and
    restored. The result uses the autodiff convention ``dL/dRe + j dL/dIm``.
    """
    out = []
    for p in params:
        v = p.value
        g = np.zeros_like(v)
        flat = v.reshape(-1)
        gflat = g.reshape(-1)
        parts = (1.0, 1j) if np.iscomplexobj(v) else (1.0,)
        for i in range(flat.size):
            orig = flat[i]
            for unit in parts:
                flat[i] = orig + step * unit
                fp = float(np.real(f().value))
                flat[i] = orig - step * unit
                fm = float(np.real(f().value))
                flat[i] = orig
                gflat[i] += unit * (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def analytic_grad(f, params):
    for p in params:
        p.grad = None
        p.requires_grad = True
    backward(f())
    return [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]


def relative_error(analytic, numeric, floor=1e-3):
    """Largest componentwise relative error across all parameter blocks.

    Each real component is compared as ``|a - n| / max(|a|, |n|, floor * s)``
    where ``s`` is the largest numeric gradient magnitude over all blocks,
    so components many orders below the dominant gradient are judged on an
    absolute scale instead of amplifying finite-difference rounding noise.
    """
    a = np.concatenate([np.asarray(x).astype(np.complex128).ravel() for x in analytic])
    n = np.concatenate([np.asarray(x).astype(np.complex128).ravel() for x in numeric])
    a = np.concatenate([a.real, a.imag])
    n = np.concatenate([n.real, n.imag])
    s = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0))
    if s == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * s)
    return float(np.max(np.abs(a - n) / denom))


def check(f, params, step=1e-6, floor=1e-3):
    """Return the relative error between backward and central differences."""
    params = [p if isinstance(p, Tensor) else Tensor(p) for p in params]
    ana = analytic_grad(f, params)
    num = numerical_grad(f, params, step)
    return relative_error(ana, num, floor)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _spd(rng, n, batch=()):
    A = _cplx(rng, *batch, n, n)
    return A @ np.conj(np.swapaxes(A, -1, -2)) + n * np.eye(n)


def primitive_cases(rng):
    """(name, f, params) triples covering every adjoint, each reduced to a real scalar."""
    from . import autodiff as ad

    def leaf(v):
        return Tensor(v, requires_grad=True)

    def scal(x):
        return ad.sum_(ad.real(x * ad.conj(x)) + ad.real(x) if x.is_complex else x * x + x)

    w = _cplx(rng, 3, 4)
    cases = []
    a, b = leaf(_cplx(rng, 3, 4)), leaf(_cplx(rng, 4))
    cases.append(("add", lambda: scal(a + b), [a, b]))
    cases.append(("sub", lambda: scal(a - b), [a, b]))
    cases.append(("neg", lambda: scal(-a), [a]))
    cases.append(("mul", lambda: scal(a * b * w), [a, b]))
    c = leaf(_cplx(rng, 3, 4) + 3)
    cases.append(("div", lambda: scal(a / c), [a, c]))
    m1, m2 = leaf(_cplx(rng, 2, 3, 4)), leaf(_cplx(rng, 4, 2))
    cases.append(("matmul", lambda: scal(m1 @ m2), [m1, m2]))
    cases.append(("conj", lambda: scal(ad.conj(a) * w), [a]))
    cases.append(("transpose", lambda: scal(ad.transpose(a) @ w), [a]))
    cases.append(("herm", lambda: scal(ad.herm(a) @ w), [a]))
    cases.append(("abs", lambda: ad.sum_(ad.abs_(a) * w.real), [a]))
    cases.append(("real_imag", lambda: ad.sum_(ad.real(a) * ad.imag(a) * w.real), [a]))
    r1, r2 = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((3, 4)))
    cases.append(("complex", lambda: scal(ad.complex_(r1, r2) * w), [r1, r2]))
    cases.append(("tanh", lambda: ad.sum_(ad.tanh(r1) * w.real), [r1]))
    p = leaf(rng.uniform(0.5, 2.0, (3, 4)))
    cases.append(("sqrt", lambda: ad.sum_(ad.sqrt(p) * w.real), [p]))
    s = leaf(_cplx(rng, 2, 3, 3))
    cases.append(("trace", lambda: ad.real(ad.sum_(ad.trace(s) * np.array([1 + 2j, 3 - 1j]))), [s]))
    A0 = _spd(rng, 3, (2,))
    Ah = leaf(A0)
    Bh = leaf(_cplx(rng, 2, 3, 2))

    def hs():
        A = 0.5 * (Ah + ad.herm(Ah))
        return scal(ad.hsolve(A, Bh))
    cases.append(("hsolve", hs, [Ah, Bh]))
    cases.append(("concat", lambda: scal(ad.concat([a, ad.reshape(b, (1, 4))], axis=0) * 1.5), [a, b]))
    cases.append(("getitem", lambda: scal(a[1:, ::2]), [a]))
    w6 = _cplx(rng, 6, 2)
    cases.append(("reshape", lambda: scal(ad.reshape(a, (2, 6)) @ w6), [a]))
    cases.append(("sum_mean", lambda: scal(ad.sum_(a, axis=0) + ad.mean(a, axis=1)[:1]), [a]))
    cases.append(("ctanh", lambda: scal(ad.ctanh(a)), [a]))
    v1, v2 = leaf(rng.uniform(1, 2, 4)), leaf(rng.uniform(1, 2, 4))
    v3 = leaf(rng.uniform(-0.5, 0.5, 4))
    cases.append(("whiten2x2", lambda: ad.sum_(sum(x * k for x, k in zip(
        ad.whiten2x2(v1, v2, v3), (1.0, 2.0, 3.0)))), [v1, v2, v3]))
    return cases


def network_loss_case(seed, M=8, K=2, N=2, dims=(16, 8), batch=6, snr_db=10.0):
    """Full training loss through sensing, MLP, head and the concentrated objective."""
    from . import network as nw
    from .training import loss

    rng = np.random.default_rng(seed)
    params = nw.init_params(M, K, K, N, dims, rng=rng)
    H = _cplx(rng, batch, M, K) / np.sqrt(2)
    sigma2 = 10.0 ** (-snr_db / 10.0)
    noise = np.sqrt(sigma2 / 2) * _cplx(rng, batch, N, M, K)

    def f():
        F = nw.forward(H, params, training=True, noise=noise, update_stats=False)
        return loss(H, F, 1.0, sigma2)
    return f, list(params.tensors.values())


def run_suites(seeds=20, primitives=True, network=True):
    """Return (name, max relative error) for the primitive and full-loss checks."""
    out = []
    if primitives:
        for name, f, params in primitive_cases(np.random.default_rng(1234)):
            out.append((f"op:{name}", check(f, params)))
    if network:
        worst = 0.0
        for s in range(seeds):
            f, params = network_loss_case(s)
            worst = max(worst, check(f, params))
        out.append((f"network_loss[{seeds} seeds]", worst))
    return out
