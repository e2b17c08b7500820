import json

import numpy as np
import pytest
from PIL import Image

from splatsr.cli import DEFAULTS, main, merge_config
from splatsr.errors import ParameterError

TINY = {
    "data": {"n_views": 6, "image_size": 16, "sr_factor": 2, "n_blobs": 6, "test_every": 3},
    "pipeline": {"T": 2, "fit_iterations_per_step": 15, "pretrain_iterations": 20, "n_gaussians": 24},
    "denoiser": {"strength": 0.3},
}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture(scope="module")
def runs(tiny_config, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    assert main(["run-3dsr", "--config", tiny_config, "--out", str(root / "a")]) == 0
    assert main(["run-3dsr", "--config", tiny_config, "--out", str(root / "b")]) == 0
    assert main(["run-baseline", "--kind", "perview", "--config", tiny_config, "--out", str(root / "pv")]) == 0
    return root


def test_precedence_defaults_file_set_seed():
    cfg = merge_config(DEFAULTS, {"pipeline": {"T": 3, "lam": 0.5}}, ["pipeline.T=5", "pipeline.lrs.means=0.01"], 7)
    assert cfg["pipeline"]["T"] == 5
    assert cfg["pipeline"]["lam"] == 0.5
    assert cfg["pipeline"]["lrs"]["means"] == 0.01
    assert cfg["pipeline"]["seed"] == cfg["data"]["seed"] == cfg["denoiser"]["seed"] == 7
    assert cfg["pipeline"]["delta"] == DEFAULTS["pipeline"]["delta"]
    assert DEFAULTS["pipeline"]["T"] != 5  # defaults untouched


def test_sr_factor_follows_the_data():
    cfg = merge_config(DEFAULTS, None, ["data.sr_factor=2"], None)
    assert cfg["pipeline"]["sr_factor"] == 2


@pytest.mark.parametrize("doc, overrides", [
    ({"pipeline": {"bogus": 1}}, []),
    ({"nosuch": {}}, []),
    (None, ["pipeline.lrs.nope=1"]),
    (None, ["pipeline.T"]),
])
def test_unknown_keys_are_rejected(doc, overrides):
    with pytest.raises(ParameterError):
        merge_config(DEFAULTS, doc, overrides, None)


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2


def test_unknown_key_exits_1_with_category(tmp_path, capsys):
    code = main(["make-data", "--out", str(tmp_path / "d"), "--set", "data.colour=1"])
    err = capsys.readouterr().err.strip()
    assert code == 1
    assert err.startswith("error: parameter:")
    assert len(err.splitlines()) == 1


def test_invalid_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["make-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert capsys.readouterr().err.startswith("error: configuration:")


def test_make_data_round_trip(tiny_config, tmp_path):
    out = tmp_path / "d"
    assert main(["make-data", "--config", tiny_config, "--out", str(out)]) == 0
    snap = json.loads((out / "config.json").read_text())
    assert snap["data"]["n_views"] == 6
    assert (out / "poses.json").exists()
    run = tmp_path / "r"
    assert main(["run-baseline", "--kind", "bicubic", "--config", tiny_config, "--data", str(out),
                 "--out", str(run)]) == 0
    assert (run / "metrics.json").exists()


def test_config_snapshot_is_written(runs, tiny_config):
    snap = json.loads((runs / "a" / "config.json").read_text())
    assert snap == merge_config(DEFAULTS, TINY, [], None)


def test_identical_runs_give_identical_metrics(runs):
    a = (runs / "a" / "metrics.json").read_bytes()
    b = (runs / "b" / "metrics.json").read_bytes()
    assert a == b
    ma = json.loads((runs / "a" / "manifest.json").read_text())
    mb = json.loads((runs / "b" / "manifest.json").read_text())
    assert ma["scene_digest"] == mb["scene_digest"]


def test_evaluate_writes_json_and_csv(runs, capsys):
    run = runs / "pv"
    before = json.loads((run / "metrics.json").read_text())
    (run / "metrics.json").unlink()
    assert main(["evaluate", "--run", str(run)]) == 0
    after = json.loads((run / "metrics.json").read_text())
    assert after == before
    csv = (run / "metrics.csv").read_text().splitlines()
    assert len(csv) >= 2


def test_evaluate_missing_run(tmp_path, capsys):
    assert main(["evaluate", "--run", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: data:")


def test_render_grid_layout_and_tiles(runs, tmp_path):
    out = tmp_path / "grid.png"
    assert main(["render-grid", "--run", str(runs / "a"), "--baseline", str(runs / "pv"),
                 "--out", str(out), "--views", "0,3"]) == 0
    grid = np.asarray(Image.open(out).convert("RGB"))
    meta = json.loads(out.with_suffix(".json").read_text())
    h, w = meta["tile"]
    assert meta["columns"] == ["LR upsampled", "baseline", "3DSR", "GT"]
    assert grid.shape == (meta["header"] + 2 * h, 4 * w, 3)
    hdr = meta["header"]
    sr_tile = np.asarray(Image.open(runs / "a" / "renders" / "view_3.png").convert("RGB"))
    assert np.array_equal(grid[hdr + h:hdr + 2 * h, 2 * w:3 * w], sr_tile)
    gt_tile = np.asarray(Image.open(runs / "a" / "renders" / "view_0_gt.png").convert("RGB"))
    assert np.array_equal(grid[hdr:hdr + h, 3 * w:], gt_tile)


def test_render_grid_without_ground_truth(runs, tmp_path):
    import shutil
    run = tmp_path / "nogt"
    shutil.copytree(runs / "a", run)
    for p in (run / "renders").glob("*_gt.png"):
        p.unlink()
    out = tmp_path / "grid.png"
    assert main(["render-grid", "--run", str(run), "--baseline", str(runs / "pv"), "--out", str(out)]) == 0
    meta = json.loads(out.with_suffix(".json").read_text())
    assert "GT" not in meta["columns"]
    assert meta["note"]
    assert Image.open(out).size[0] == 3 * meta["tile"][1]


def test_render_grid_reports_missing_files(runs, tmp_path, capsys):
    code = main(["render-grid", "--run", str(runs / "a"), "--baseline", str(tmp_path),
                 "--out", str(tmp_path / "g.png"), "--views", "0"])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error: data:") and "view_0.png" in err
