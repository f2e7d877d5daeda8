import pytest

from micachesim.config import (
    DEFAULTS,
    ConfigError,
    SimConfig,
    defaults_text,
    load_config,
    parse_config,
)
from micachesim.engine import EngineConfig, Policy


def test_defaults_round_trip():
    cfg = parse_config(defaults_text())
    assert cfg == SimConfig()
    assert cfg.engine == EngineConfig()


def test_defaults_cover_every_key():
    text = defaults_text()
    for sec, keys in DEFAULTS.items():
        assert f"[{sec}]" in text
        for k in keys:
            assert f"\n{k} = " in text


def test_partial_file_keeps_other_defaults():
    cfg = parse_config("[dram]\nt_row_miss = 60\n[opts]\ncache_rinse = yes\n")
    assert cfg.engine.dram.t_row_miss == 60
    assert cfg.engine.dram.t_row_hit == 10
    assert cfg.cache_rinse and not cfg.allocation_bypass
    assert cfg.opts_for(Policy.CACHE_RW).cache_rinse


@pytest.mark.parametrize("text", [
    "[gpu]\nnum_cu = 64\n",  # typo
    "[gpus]\nnum_cus = 64\n",
    "[gpu]\nnum_cus = many\n",
    "[opts]\npc_bypass = maybe\n",
    "[caches]\nl2_size_bytes = 1000\n",
    "[engine]\nlatency_l2 = 20\n",
    "not a config",
])
def test_bad_configs_are_hard_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
    p = tmp_path / "c.ini"
    p.write_text("[gpu]\nnum_cus = 0x10\n")
    assert load_config(p).engine.num_cus == 16
