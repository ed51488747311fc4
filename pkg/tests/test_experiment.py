import numpy as np
import pytest

from xlhbf import config as cfg
from xlhbf import experiment as ex
from xlhbf import network as nw

SMALL = {
    "scenario": {"M": 8, "K": 2, "N_RF": 2, "L": 2, "r_max": 20.0},
    "network": {"N": 2, "dims": [8]},
    "training": {"lr": 3e-3, "batch_size": 16, "max_epochs": 2},
    "dataset": {"size": 60},
    "reference": {"n_iter": 20},
}


def _spec(**extra):
    d = dict(SMALL)
    d.update(extra)
    return cfg.from_dict(d)


def test_single_point_rows(tmp_path):
    paths = ex.run_experiment(_spec(), str(tmp_path))
    assert len(paths) == 1
    assert open(paths[0]).readline().strip() == "# schema=1"
    rows = ex.read_rows(paths[0])
    assert [r["method"] for r in rows] == list(ex.METHODS)
    for r in rows:
        assert r["status"] == "ok"
        assert (r["seed_dataset"], r["seed_train"], r["seed_eval"]) == ("0", "0", "0")
        assert float(r["power_rel_err"]) < 1e-9
        assert int(r["n_samples"]) == 9
        assert float(r["per_user_rate_mean"]) == pytest.approx(float(r["sum_rate_mean"]) / 2)
    by = {r["method"]: float(r["sum_rate_mean"]) for r in rows}
    assert by["fully_digital"] >= by["pg_reference"]
    assert (tmp_path / "point_000.ckpt").exists() and (tmp_path / "experiment.json").exists()


def test_sweep_with_fixed_model(tmp_path):
    spec = _spec(sweep={"axis": "snr", "values": [0, 10], "repetitions": 2})
    params = nw.init_params(8, 2, 2, 2, (8,), rng=np.random.default_rng(0))
    paths = ex.run_experiment(spec, str(tmp_path), params=params)
    assert [p.rsplit("/", 1)[1] for p in paths] == ["point_000.csv", "point_001.csv"]
    rows = [ex.read_rows(p) for p in paths]
    assert all(len(r) == 2 * len(ex.METHODS) for r in rows)
    assert {r["rep"] for r in rows[0]} == {"0", "1"}
    low = np.mean([float(r["sum_rate_mean"]) for r in rows[0] if r["method"] == "fully_digital"])
    high = np.mean([float(r["sum_rate_mean"]) for r in rows[1] if r["method"] == "fully_digital"])
    assert high > low


def test_incompatible_model(tmp_path):
    params = nw.init_params(8, 2, 2, 3, (8,), rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        ex.run_experiment(_spec(), str(tmp_path), params=params)


def test_apply_axis():
    s = _spec()
    assert ex.apply_axis(s, "pilots", 5).network.N == 3
    assert ex.apply_axis(s, "K", 3).scenario.N_RF == 3
    u = ex.apply_axis(s, "upa_shape", (2, 4)).scenario
    assert (u.geometry, u.M) == ("UPA", 8)
    with pytest.raises(ValueError):
        ex.apply_axis(s, "pilots", 2)


def test_read_rows_rejects_schema(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("# schema=2\naxis\n")
    with pytest.raises(ValueError):
        ex.read_rows(str(p))
