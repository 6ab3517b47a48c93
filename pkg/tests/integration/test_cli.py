import csv
import json

import numpy as np
import pytest

from src.config import app_config
from src.main import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from src.particle_tracer.services.cameras.loader import save_cameras
from src.particle_tracer.services.io.images import read_image
from src.particle_tracer.services.io.ply import save_ply
from tests.conftest import make_camera, make_scene


@pytest.fixture(autouse=True)
def quiet_logs(tmp_path, monkeypatch):
    monkeypatch.setattr(app_config, "log_dir", str(tmp_path / "logs"))
    monkeypatch.setattr(app_config, "threads", 1)


@pytest.fixture
def inputs(tmp_path):
    scene_path = tmp_path / "scene.ply"
    camera_path = tmp_path / "camera.json"
    save_ply(make_scene(15, seed=4), scene_path)
    save_cameras([make_camera(width=8, height=6)], camera_path)
    return scene_path, camera_path


def test_render_writes_image_and_stats(inputs, tmp_path, capsys):
    scene, camera = inputs
    out = tmp_path / "frame.png"
    code = main(["render", str(scene), str(camera), "--out", str(out), "--stats-json", "--seed", "3"])
    assert code == EXIT_OK
    assert read_image(out).shape == (6, 8, 3)
    stats = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert stats["rays"] == 48
    assert stats["frames"][0]["algorithm"] == "kbuffer"


def test_naive_render_equals_kbuffer(inputs, tmp_path):
    scene, camera = inputs
    main(["render", str(scene), str(camera), "--out", str(tmp_path / "k.png")])
    main(["render", str(scene), str(camera), "--out", str(tmp_path / "n.png"), "--algorithm", "naive", "--k", "2"])
    np.testing.assert_array_equal(read_image(tmp_path / "k.png"), read_image(tmp_path / "n.png"))


def test_missing_scene_is_an_io_error(inputs, tmp_path, capsys):
    _, camera = inputs
    code = main(["render", str(tmp_path / "nope.ply"), str(camera)])
    assert code == EXIT_IO
    assert "nope.ply" in capsys.readouterr().err


def test_bad_camera_key_is_a_usage_error(inputs, tmp_path, capsys):
    scene, _ = inputs
    camera = tmp_path / "bad.json"
    camera.write_text(json.dumps({"width": 4, "height": 4, "fov": 50}), encoding="utf-8")
    assert main(["render", str(scene), str(camera)]) == EXIT_USAGE
    assert "fov" in capsys.readouterr().err


def test_bad_flag_value_is_a_usage_error(inputs):
    scene, camera = inputs
    assert main(["render", str(scene), str(camera), "--k", "0"]) == EXIT_USAGE
    assert main(["render", str(scene), str(camera), "--algorithm", "raster"]) == EXIT_USAGE
    assert main(["render", str(scene), str(camera), "--threads", "0"]) == EXIT_USAGE


def test_bad_train_config_key(tmp_path):
    config = tmp_path / "train.toml"
    config.write_text("total_iters = 5\nlearning_rate = 0.1\n", encoding="utf-8")
    assert main(["train", str(tmp_path), "--config", str(config)]) == EXIT_USAGE


def test_bench_writes_one_row_per_configuration(inputs, tmp_path):
    scene, camera = inputs
    out = tmp_path / "bench.csv"
    code = main(["bench", str(scene), str(camera), "--out", str(out), "--algorithms", "kbuffer", "naive",
                 "--ks", "1", "8", "--proxies", "icosahedron", "octahedron"])
    assert code == EXIT_OK
    with open(out, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 8
    assert list(rows[0]) == ["algorithm", "k", "proxy_kind", "wall_seconds", "psnr_vs_reference", "mean_hits",
                             "bvh_build_seconds", "rays"]
    icosahedron = [r for r in rows if r["proxy_kind"] == "icosahedron"]
    assert all(float(r["psnr_vs_reference"]) == float("inf") for r in icosahedron)


def test_make_toy_then_train(tmp_path, capsys):
    data = tmp_path / "toy"
    assert main(["make-toy", str(data), "--particles", "6", "--views", "2", "--test-views", "1",
                 "--resolution", "6"]) == EXIT_OK
    assert (data / "dataset.json").exists()
    out = tmp_path / "run"
    capsys.readouterr()
    code = main(["train", str(data), "--out", str(out), "--iters", "3", "--stats-json", "--deterministic"])
    assert code == EXIT_OK
    stats = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert stats["iterations"] == 3
    assert (out / "checkpoint.ply").exists()
    assert (out / "metrics.csv").exists()


def test_compose_identity_instance_matches_render(inputs, tmp_path):
    scene, camera = inputs
    compose = tmp_path / "compose.json"
    compose.write_text(json.dumps({
        "scene": scene.name, "camera": camera.name,
        "instances": [{"transform": np.eye(4).tolist()}],
        "output": "composed.png",
    }), encoding="utf-8")
    assert main(["compose", str(compose)]) == EXIT_OK
    assert main(["render", str(scene), str(camera), "--out", str(tmp_path / "plain.png")]) == EXIT_OK
    np.testing.assert_allclose(read_image(tmp_path / "composed.png"), read_image(tmp_path / "plain.png"),
                               atol=3.0 / 255)


def test_compose_without_output_is_a_usage_error(inputs, tmp_path):
    scene, camera = inputs
    compose = tmp_path / "compose.json"
    compose.write_text(json.dumps({"scene": scene.name, "camera": camera.name}), encoding="utf-8")
    assert main(["compose", str(compose)]) == EXIT_USAGE


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK
