import pytest
from config import Config

def test_config_defaults():
    """Test default configuration values"""
    config = Config()

    assert config.APP_NAME == "eitkit"
    assert config.VERSION == "1.0.0"
    assert config.MAX_MESH_NODES > 0
    assert 0 < config.SOLVER_RTOL < 1
    assert config.BOUNDARY_QUAD_POINTS >= 1
    assert config.DEFAULT_THREADS >= 1

def test_config_from_env(monkeypatch):
    """Test configuration from environment variables"""
    monkeypatch.setenv('MAX_MESH_NODES', '5000')
    monkeypatch.setenv('SOLVER_RTOL', '1e-9')
    monkeypatch.setenv('TAU_ALLOWANCE', '0.001')
    monkeypatch.setenv('DEFAULT_THREADS', '4')

    config = Config()

    assert config.MAX_MESH_NODES == 5000
    assert config.SOLVER_RTOL == 1e-9
    assert config.TAU_ALLOWANCE == 0.001
    assert config.DEFAULT_THREADS == 4

def test_config_validate_accepts_defaults():
    """Test that the default configuration validates"""
    assert Config().validate() is True

@pytest.mark.parametrize('name, value', [
    ('MAX_MESH_NODES', '0'),
    ('BOUNDARY_QUAD_POINTS', '0'),
    ('SOLVER_RTOL', '2'),
    ('TAU_ALLOWANCE', '-1'),
    ('DEFAULT_THREADS', '0'),
])
def test_config_validate_rejects_bad_values(monkeypatch, name, value):
    """Test that out-of-range settings are rejected"""
    monkeypatch.setenv(name, value)

    with pytest.raises(ValueError):
        Config().validate()

def test_global_config_instance():
    """Test global config instance"""
    from config import config

    assert config is not None
    assert isinstance(config, Config)
