import json

import numpy as np
import pytest

import sdrpn


def test_grid_round_trip(tmp_path):
    for arr in (
        np.arange(24, dtype=np.float32).reshape(2, 3, 4),
        np.linspace(-1, 1, 6).reshape(2, 3),
        np.array([[-1, 0, 1]], dtype=np.int8),
    ):
        path = tmp_path / "g.grid"
        sdrpn.write_grid(path, arr)
        back = sdrpn.read_grid(path)
        assert back.dtype == arr.dtype
        np.testing.assert_array_equal(back, arr)
        assert sdrpn.encode_grid(back) == path.read_bytes()


def test_corrupt_grid_is_rejected(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        sdrpn.read_grid(path)


def test_assign_labels():
    att = np.array([[0.0, 0.05], [0.15, 1.0]])
    labels = sdrpn.assign_labels(att, tau_fg=0.2, tau_bg=0.1)
    np.testing.assert_array_equal(labels, [[0, 0], [-1, 1]])
    with pytest.raises(ValueError):
        sdrpn.assign_labels(att, tau_fg=0.1, tau_bg=0.2)


def test_remove_sink_tokens():
    att = np.full((3, 3), 0.1)
    att[1, 1] = 1.0
    feats = np.ones((3, 3, 4), dtype=np.float32)
    feats[1, 1] *= 100.0
    out, zeroed, tau = sdrpn.remove_sink_tokens(att, feats, tau_norm=10.0)
    assert zeroed == [4]
    assert out[1, 1] == 0.0
    assert tau == 10.0


def test_postprocess_and_iou():
    logits = np.full((6, 6), -5.0)
    logits[1:3, 1:3] = 5.0
    logits[4, 4] = 5.0
    box = sdrpn.postprocess(logits, sigma=0.0, mode="box")
    assert sorted(box["boxes"]) == [(1, 1, 2, 2), (4, 4, 4, 4)]
    mask = sdrpn.postprocess(logits, sigma=0.0, mode="mask")
    assert mask["b_all"] == (1, 1, 4, 4)
    assert mask["selection"].sum() == 5
    assert sdrpn.box_iou((0, 0, 1, 1), (1, 1, 2, 2)) == pytest.approx(1 / 7)


def test_pipeline(tmp_path):
    manifest = sdrpn.generate_dataset(tmp_path / "data", num=6, seed=3, height=8, width=8, feature_dim=8)
    assert json.loads(manifest.read_text())["height"] == 8
    stats = sdrpn.pseudo_label(manifest, tmp_path / "labels")
    assert stats["samples"] == 6
    report = sdrpn.train(
        stats["manifest"], tmp_path / "ck",
        d_model=16, heads=2, mlp_ratio=2, depth=3, frozen=1, trainable=1, batch_size=2, total_steps=3,
    )
    assert report["steps"] == 3
    assert len(report["losses"]) == 3
    assert sdrpn.predict(manifest, tmp_path / "ck", tmp_path / "pred") == 6
    feats = sdrpn.read_grid(tmp_path / "data" / json.loads(manifest.read_text())["samples"][0]["features"])
    queries = sdrpn.read_grid(tmp_path / "data" / json.loads(manifest.read_text())["samples"][0]["queries"])
    logits = sdrpn.roi_logits(tmp_path / "ck", feats, queries)
    assert logits.shape == (1, 64)
    with pytest.raises(KeyError):
        sdrpn.train(stats["manifest"], tmp_path / "ck2", no_such_option=1)


def test_determinism(tmp_path):
    sdrpn.generate_dataset(tmp_path / "a", num=3, seed=9, height=8, width=8)
    sdrpn.generate_dataset(tmp_path / "b", num=3, seed=9, height=8, width=8)
    assert sdrpn.hash_tree(tmp_path / "a") == sdrpn.hash_tree(tmp_path / "b")


def test_verify_theory():
    r = sdrpn.verify_theory("ccn", n=200_000, seed=1, rho0=0.1, rho1=0.2)
    assert r["pass"]
    assert r["mse_fit"] < r["mse_raw"]
    r = sdrpn.verify_theory("symccn", n=200_000, seed=2, rho=0.3)
    assert r["error_fit"] < r["error_raw"]
    with pytest.raises(ValueError):
        sdrpn.verify_theory("ccn", rho0=0.6, rho1=0.6)
