import json
import math

import numpy as np
import pytest

import scgs


def tiny_config(out, seed=0):
    cfg = scgs.RunConfig.parse(
        """
[dataset]
n_train = 240
n_val = 80
n_test = 80
image_size = 16
[train]
epochs = 2
[pipeline]
sample_fraction = 0.5
gen_fraction = 0.2
overlay_count = 2
"""
    )
    cfg.output_dir = str(out)
    cfg.seed = seed
    return cfg


def test_config_round_trip():
    cfg = scgs.RunConfig()
    cfg.tau = 0.7
    cfg.cam = "gradcam"
    back = scgs.RunConfig.parse(cfg.to_text())
    assert back.tau == 0.7
    assert back.cam == "gradcam"
    assert back.to_text() == cfg.to_text()


def test_config_errors_map_to_python_exceptions():
    with pytest.raises(scgs.ConfigError):
        scgs.RunConfig.parse("[pipeline]\nnot_a_key = 1\n")
    with pytest.raises(scgs.ParseError):
        scgs.RunConfig.parse("[pipeline]\ntau = 1\ntau = 2\n")
    assert issubclass(scgs.ConfigError, scgs.ScgsError)


def test_gaussian_logpdf_matches_closed_form():
    sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    mu = np.array([0.5, -1.0])
    s = np.array([1.0, 0.0])
    d = s - mu
    want = -0.5 * (d @ np.linalg.solve(sigma, d) + math.log(np.linalg.det(sigma)) + 2 * math.log(2 * math.pi))
    assert scgs.gaussian_logpdf(s, mu, sigma) == pytest.approx(want, rel=1e-12)


def test_threshold_mask_is_super_level_set():
    rng = np.random.default_rng(0)
    values = rng.random((7, 5))
    np.testing.assert_array_equal(scgs.threshold_mask(values, 0.6), (values >= 0.6).astype(float))


def test_stage_order_and_dependency_error(tmp_path):
    assert scgs.stages()[0] == "gen-data" and scgs.stages()[-1] == "report"
    with pytest.raises(scgs.DependencyError):
        scgs.run_stage(tiny_config(tmp_path), "cam")


def test_tiny_run_end_to_end(tmp_path):
    manifest = scgs.run(tiny_config(tmp_path / "run"))
    assert set(manifest["stages"]) >= set(scgs.stages())
    variants = {v["name"]: v for v in scgs.load_variants(str(tmp_path / "run"))}
    assert set(variants) == {"ERM", "SCGS"}
    for v in variants.values():
        assert v["worst_group_acc"] == min(v["per_group_acc"].values())
        assert 0.0 <= v["attention"] <= 1.0
    assert (tmp_path / "run" / "report.md").exists()
    assert scgs.run_stage(tiny_config(tmp_path / "run"), "report") is False

    model = scgs.Classifier.load(str(tmp_path / "run" / "erm" / "model.ckpt"))
    img = np.full((16, 16, 3), 0.5)
    assert len(model.logits(img)) == 2
    cam = model.cam(img, model.predict(img))
    assert cam.shape == (16, 16)
    assert cam.min() >= 0.0 and cam.max() <= 1.0
    with pytest.raises(scgs.InputError):
        model.predict(np.zeros((8, 8, 3)))


def test_run_accepts_config_path(tmp_path):
    cfg = tiny_config(tmp_path / "b", seed=2)
    path = tmp_path / "cfg.toml"
    path.write_text(cfg.to_text())
    manifest = scgs.run(path)
    assert json.loads(json.dumps(manifest))["config"]["run.seed"] == 2
