import numpy as np
import pytest

from xlhbf import autodiff as ad
from xlhbf import network as nw
from xlhbf import training as tr
from xlhbf.channel import ScenarioConfig, generate_dataset
from xlhbf.precoding import concentrated_mse, random_cm
from xlhbf.rng import substream

from conftest import cplx

SC = ScenarioConfig(M=8, K=2, N_RF=2, L=2, r_max=30.0)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(SC, 80)


def _cfg(**kw):
    base = dict(lr=3e-3, batch_size=16, max_epochs=3, sched_patience=1, es_patience=50)
    base.update(kw)
    return tr.TrainConfig(**base)


def test_loss_matches_concentrated_mse(rng):
    H = cplx(rng, 5, 8, 2)
    F = random_cm(rng, 8, 2, (5,))
    L = tr.loss(H, F, 1.0, 0.1).value
    ref = np.mean(concentrated_mse(H, F, 1.0, 0.1))
    assert abs(L - ref) <= 1e-12 * abs(ref)


def test_loss_bounds(rng):
    H = cplx(rng, 20, 8, 2)
    F = random_cm(rng, 8, 2, (20,))
    v = concentrated_mse(H, F, 1.0, 0.1)
    assert np.all(v > 0) and np.all(v <= 2 + 1e-12)
    assert tr.loss(np.zeros((8, 2)), F[0], 1.0, 0.1).value == pytest.approx(2.0, abs=1e-12)


def test_descent_direction_sanity(rng):
    """A small step along the negative gradient lowers the loss for most draws."""
    wins = 0
    for seed in range(10):
        r = np.random.default_rng(seed)
        p = nw.init_params(8, 2, 2, 2, (8,), rng=r)
        H = cplx(r, 16, 8, 2)

        def value():
            return tr.loss(H, nw.forward(H, p, update_stats=False, training=False), 1.0, 0.1)

        L0 = value()
        ad.backward(L0)
        for t in p.tensors.values():
            if t.grad is not None:
                t.value -= 1e-4 * t.grad
        wins += value().value < L0.value
    assert wins >= 9


def test_adam_first_step_is_lr_sign():
    p = nw.init_params(4, 1, 1, 1, (2,), rng=np.random.default_rng(0))
    before = {k: t.value.copy() for k, t in p.tensors.items()}
    grads = {k: np.full_like(t.value, 0.5 - 2j) if np.iscomplexobj(t.value)
             else np.full_like(t.value, 0.5) for k, t in p.tensors.items()}
    st = tr.AdamState.zeros_like(p)
    tr.adam_step(p, grads, st, lr=0.01)
    for k, t in p.tensors.items():
        d = t.value - before[k]
        if np.iscomplexobj(d):
            assert np.allclose(d, -0.01 + 0.01j, atol=1e-8)
        else:
            assert np.allclose(d, -0.01, atol=1e-8)


def test_adam_matches_reference():
    r = np.random.default_rng(1)
    p = nw.init_params(4, 1, 1, 1, (3,), rng=r)
    x0 = p["head.b"].value.copy()
    st = tr.AdamState.zeros_like(p)
    m = np.zeros(x0.size * 2)
    v = np.zeros_like(m)
    x = x0.view(np.float64).copy()
    for t in range(1, 6):
        g = cplx(r, *x0.shape)
        tr.adam_step(p, {"head.b": g}, st, lr=1e-2)
        gr = g.view(np.float64)
        m = 0.9 * m + 0.1 * gr
        v = 0.999 * v + 0.001 * gr ** 2
        x -= 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p["head.b"].value.view(np.float64), x, atol=1e-14)


def test_adam_rejects_nan():
    p = nw.init_params(4, 1, 1, 1, (2,), rng=np.random.default_rng(0))
    g = {"head.W": np.full_like(p["head.W"].value, np.nan)}
    with pytest.raises(tr.TrainingDivergedError, match="head.W"):
        tr.adam_step(p, g, tr.AdamState.zeros_like(p), 0.1)


def test_clip_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4j])}
    c, n = tr.clip_global_norm(g, 1.0)
    assert n == pytest.approx(5.0)
    assert np.sqrt(sum(np.vdot(x, x).real for x in c.values())) == pytest.approx(1.0)


def test_zero_lr_leaves_weights(small_dataset):
    p0 = nw.init_params(8, 2, 2, 2, (8,), rng=substream(0, "init"))
    res = tr.fit("indirect", small_dataset, _cfg(lr=0.0, max_epochs=2), SC, (8,), 2)
    st = res.state.params
    for k in p0.names():
        assert np.array_equal(st[k].value, p0[k].value), k


def test_reproducible_apart_from_wall(small_dataset):
    a = tr.fit("indirect", small_dataset, _cfg(), SC, (8,), 2)
    b = tr.fit("indirect", small_dataset, _cfg(), SC, (8,), 2)
    assert a.log.to_csv(include_wall=False) == b.log.to_csv(include_wall=False)
    for k in a.params.names():
        assert np.array_equal(a.params[k].value, b.params[k].value)


def test_best_checkpoint_is_max_validation(small_dataset):
    res = tr.fit("indirect", small_dataset, _cfg(max_epochs=6), SC, (8,), 2)
    scores = [r["val_sum_rate"] for r in res.log.rows]
    assert res.log.best_val_sum_rate == max(scores)
    assert res.log.best_epoch == int(np.argmax(scores))
    again = tr.validation_sum_rate(res.params, small_dataset[1], SC)
    assert again == pytest.approx(max(scores), rel=1e-12)


def test_log_columns_and_lr_changes(small_dataset, tmp_path):
    cfg = _cfg(lr=1e-9, sched_patience=0, max_epochs=4, sched_threshold=0.5)
    res = tr.fit("indirect", small_dataset, cfg, SC, (8,), 2, log_path=tmp_path / "log.csv")
    text = (tmp_path / "log.csv").read_text()
    assert text.splitlines()[0] == ",".join(tr.LOG_COLUMNS)
    assert res.log.lr_changes and "# lr_change" in text
    rows = tr.TrainingLog.read_rows(tmp_path / "log.csv")
    lrs = [float(r["lr"]) for r in rows]
    assert lrs[-1] < lrs[0]
    assert all(int(r["seed"]) == 0 for r in rows)


def test_early_stopping(small_dataset):
    res = tr.fit("indirect", small_dataset, _cfg(lr=0.0, es_patience=2, max_epochs=50),
                 SC, (8,), 2)
    # running BN statistics still move with lr=0, so the score is not constant
    assert res.log.stopped_early
    assert len(res.log.rows) == res.log.best_epoch + 3


def test_direct_mode_trains(small_dataset):
    res = tr.fit("direct", small_dataset, _cfg(max_epochs=1), SC, (8,), 2)
    assert res.params.mode == "direct"
    assert np.isfinite(res.log.best_val_sum_rate)


def test_divergence_reports_checkpoint(small_dataset, monkeypatch):
    calls = {"n": 0}
    real = tr.loss

    def bad(*a, **k):
        calls["n"] += 1
        L = real(*a, **k)
        if calls["n"] > 3:
            L.value = np.float64(np.nan)
        return L

    monkeypatch.setattr(tr, "loss", bad)
    with pytest.raises(tr.TrainingDivergedError) as ei:
        tr.fit("indirect", small_dataset, _cfg(), SC, (8,), 2)
    assert ei.value.checkpoint is not None


def test_bad_config():
    with pytest.raises(ValueError):
        tr.TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        tr.TrainConfig(sched_factor=1.5)
