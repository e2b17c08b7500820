import json
import warnings

import numpy as np
import pytest
import torch

from splatsr.data import (ViewSet, load_dataset, make_reference_dataset, make_synthetic_scene, save_dataset,
                          split_every_kth)
from splatsr.errors import DataError, ParameterError, ParseError
from splatsr.gaussians.render import render
from splatsr.gaussians.scene import GaussianScene
from splatsr.imaging import area_downsample


def test_lr_is_area_average_of_hr(small_views):
    for v in small_views.views:
        assert torch.equal(v.lr, area_downsample(v.hr, 2))


def test_digest_is_reproducible():
    a = make_synthetic_scene("blob_cluster", n_views=4, image_size=16, rng=3, test_every=None)
    b = make_synthetic_scene("blob_cluster", n_views=4, image_size=16, rng=3, test_every=None)
    c = make_synthetic_scene("blob_cluster", n_views=4, image_size=16, rng=4, test_every=None)
    assert a.digest() == b.digest() != c.digest()


def test_textured_plane():
    v = make_synthetic_scene("textured_plane", n_views=4, image_size=32, sr_factor=4, rng=0, test_every=None)
    assert v.views[0].lr.shape == (8, 8, 3) and v.views[0].hr.shape == (32, 32, 3)
    assert float(v.views[0].hr.std()) > 0.05


def test_parameter_checks():
    with pytest.raises(ParameterError):
        make_synthetic_scene(n_views=1)
    with pytest.raises(ParameterError):
        make_synthetic_scene(image_size=30, sr_factor=4)
    with pytest.raises(ParameterError):
        make_synthetic_scene("teapot")


def test_three_blob_coverage():
    vs = make_synthetic_scene("blob_cluster", n_views=16, image_size=32, rng=0, n_blobs=3)
    gt = vs.meta["gt_scene"]
    for b in range(3):
        keep = [i for i in range(3) if i != b]
        without = GaussianScene(**{k: v[keep] for k, v in gt.params().items()})
        seen = 0
        for i in range(len(vs)):
            cam = vs.hr_camera(i)
            diff = (render(gt, cam).image - render(without, cam).image).abs().max()
            seen += float(diff) > 0.05
        assert seen >= 0.8 * len(vs)


def _tagged(n, k):
    vs = make_synthetic_scene("blob_cluster", n_views=n, image_size=8, rng=0, n_blobs=2, test_every=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return split_every_kth(vs, k)


def test_split_every_kth():
    assert _tagged(16, 8).indices("test") == [0, 8]
    assert len(_tagged(16, 8).indices("train")) == 14
    assert _tagged(20, 8).indices("test") == [0, 8, 16]
    with pytest.warns(UserWarning):
        split_every_kth(make_synthetic_scene(n_views=4, image_size=8, rng=0, n_blobs=2, test_every=None), 8)
    assert _tagged(4, 8).indices("test") == [0]
    with pytest.raises(ParameterError):
        _tagged(4, 1)


def test_reference_dataset_split():
    vs = make_reference_dataset(0)
    assert len(vs.indices("test")) == 2 and len(vs.indices("train")) == 14
    assert vs.sr_factor == 4 and vs.views[0].hr.shape == (64, 64, 3)


def test_save_load_round_trip(tmp_path, small_views):
    save_dataset(small_views, tmp_path)
    back = load_dataset(tmp_path)
    assert back.digest() == small_views.digest()
    for a, b in zip(small_views.views, back.views):
        assert np.allclose(a.camera.w2c, b.camera.w2c, atol=1e-9)
        assert np.allclose(a.camera.intrinsics, b.camera.intrinsics, atol=1e-9)
        assert a.split == b.split
    # identical bytes after a second save
    save_dataset(back, tmp_path / "again")
    for name in (tmp_path / "images_lr").iterdir():
        assert name.read_bytes() == (tmp_path / "again" / "images_lr" / name.name).read_bytes()


def test_load_errors(tmp_path, small_views):
    save_dataset(small_views, tmp_path)
    doc = json.loads((tmp_path / "poses.json").read_text())

    bad = json.loads(json.dumps(doc))
    bad["views"][1]["w2c"][0] = 1.5
    (tmp_path / "poses.json").write_text(json.dumps(bad))
    with pytest.raises(DataError, match="orthonormal"):
        load_dataset(tmp_path)

    bad = json.loads(json.dumps(doc))
    bad["views"].pop()
    (tmp_path / "poses.json").write_text(json.dumps(bad))
    with pytest.raises(DataError, match="poses"):
        load_dataset(tmp_path)

    text = json.dumps(doc, indent=2).splitlines()
    text[5] = text[5] + " oops"
    (tmp_path / "poses.json").write_text("\n".join(text))
    with pytest.raises(ParseError, match=r"poses.json:6"):
        load_dataset(tmp_path)

    (tmp_path / "poses.json").unlink()
    with pytest.raises(ParseError):
        load_dataset(tmp_path)


def test_missing_split_uses_every_eighth(tmp_path):
    vs = make_synthetic_scene(n_views=9, image_size=8, rng=0, n_blobs=2, test_every=None)
    save_dataset(vs, tmp_path)
    doc = json.loads((tmp_path / "poses.json").read_text())
    for e in doc["views"]:
        del e["split"]
    (tmp_path / "poses.json").write_text(json.dumps(doc))
    assert load_dataset(tmp_path).indices("test") == [0, 8]


def test_viewset_validation(small_views):
    v = small_views.views
    with pytest.raises(DataError):
        ViewSet(v[:2] + [v[2].__class__(lr=v[2].lr[:8], camera=v[2].camera, hr=v[2].hr)], sr_factor=2)
