import pytest

from src.particle_tracer.exceptions import ConfigError
from src.particle_tracer.models.settings import ProxyKind, RenderSettings, TracingAlgorithm
from src.particle_tracer.models.train_config import TrainConfig
from src.particle_tracer.utils.config_files import load_model, parse_model


def test_render_settings_defaults():
    s = RenderSettings()
    assert s.k == 16
    assert s.alpha_min == 0.01
    assert s.t_min_transmittance == 0.001
    assert s.algorithm == TracingAlgorithm.KBUFFER
    assert s.proxy_kind == ProxyKind.ICOSAHEDRON_CLAMPED
    assert s.spp == 1


def test_render_settings_rejects_bad_values():
    with pytest.raises(ValueError):
        RenderSettings(k=0)
    with pytest.raises(ValueError):
        RenderSettings(alpha_min=1.0)
    with pytest.raises(ValueError):
        RenderSettings(background=(0.0, float('nan'), 0.0))


def test_render_settings_forbid_unknown_keys():
    with pytest.raises(ConfigError) as exc_info:
        parse_model(RenderSettings, {"kk": 3})
    assert "kk" in str(exc_info.value)


def test_render_settings_are_frozen():
    s = RenderSettings()
    with pytest.raises(ValueError):
        s.k = 4
    assert s.model_copy(update={"k": 4}).k == 4


def test_train_config_defaults():
    c = TrainConfig()
    assert c.lambda_ssim == 0.2
    assert c.sh_rest_lr == pytest.approx(c.lr_albedo / 20.0)
    assert c.densify_interval == 100


def test_train_config_schedule_clamped_to_total_iters():
    c = TrainConfig(total_iters=50)
    assert c.densify_from == 50
    assert c.densify_until == 50
    assert c.incoherent_from == 50


def test_train_config_rejects_prune_target_above_cap():
    with pytest.raises(ValueError) as exc_info:
        TrainConfig(particle_cap=10, prune_target=20)
    assert "prune_target" in str(exc_info.value)


def test_train_config_bad_key_is_named(tmp_path):
    path = tmp_path / "train.json"
    path.write_text('{"total_iters": 10, "densify_intervall": 5}', encoding='utf-8')
    with pytest.raises(ConfigError) as exc_info:
        load_model(TrainConfig, path)
    assert "densify_intervall" in str(exc_info.value)


def test_train_config_from_toml(tmp_path):
    path = tmp_path / "train.toml"
    path.write_text('total_iters = 20\nlr_opacity = 0.09\n', encoding='utf-8')
    c = load_model(TrainConfig, path)
    assert c.total_iters == 20
    assert c.lr_opacity == 0.09


def test_unparseable_config_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"total_iters": ', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_model(TrainConfig, path)
