import dataclasses

import pytest

from drg.config import (RunConfig, apply_override, list_keys, load_config,
                        parse_text, save_config, to_text)
from drg.errors import ConfigurationError


def test_defaults_match_stated_values():
    cfg = RunConfig()
    assert cfg.train.seed_episodes == 5
    assert cfg.train.collect_interval == 100
    assert cfg.train.horizon == 15
    assert cfg.train.total_steps == 30_000
    assert cfg.train.lr_world == 1e-3
    assert cfg.train.lr_actor == 8e-5
    assert cfg.train.lr_critic == 8e-5
    assert cfg.train.gamma == 0.99
    assert cfg.train.buffer_capacity == 100_000
    assert cfg.train.checkpoint_every == 5000
    assert cfg.loss.kl_balance == 0.8
    assert cfg.loss.kl_scale == 0.1
    assert cfg.augment.alpha == 0.5
    assert cfg.augment.pad == 4
    assert cfg.mode == "drg"


def test_every_leaf_reachable_via_override():
    """Override totality: every leaf field accepts a round-trippable value."""
    cfg = RunConfig()
    probe = {
        int: "7", float: "0.125", str: None, bool: None,
    }
    for key in list_keys(cfg):
        parts = key.split(".")
        obj = cfg
        for p in parts[:-1]:
            obj = getattr(obj, p)
        f = next(f for f in dataclasses.fields(obj) if f.name == parts[-1])
        current = getattr(obj, f.name)
        if isinstance(current, bool):
            raw = "false" if current else "true"
            expected = not current
        elif isinstance(current, int):
            raw, expected = "7", 7
        elif isinstance(current, float):
            raw, expected = "0.125", 0.125
        elif isinstance(current, tuple):
            raw, expected = "4,8", (4, 8)
        elif current is None or isinstance(current, str):
            raw, expected = "overridden", "overridden"
        else:
            raise AssertionError(f"unhandled field type for {key}")
        apply_override(cfg, key, raw)
        assert getattr(obj, f.name) == expected, key


def test_unknown_key_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigurationError):
        apply_override(cfg, "train.warp_speed", "9")
    with pytest.raises(ConfigurationError):
        apply_override(cfg, "nonsense.lr", "1")


def test_text_roundtrip(tmp_path):
    cfg = RunConfig()
    apply_override(cfg, "augment.alpha", "0.3")
    apply_override(cfg, "env.distractor.mode", "drift_blobs")
    apply_override(cfg, "networks.conv_channels", "4,8")
    path = tmp_path / "run.config"
    save_config(cfg, path)
    back = load_config(path)
    assert to_text(back) == to_text(cfg)
    assert back.augment.alpha == 0.3
    assert back.env.distractor.mode == "drift_blobs"
    assert back.networks.conv_channels == (4, 8)


def test_parse_comments_and_blank_lines():
    cfg = parse_text("""
# a comment
mode = dreamer_baseline   # trailing comment

train.batch_size = 4
""")
    assert cfg.mode == "dreamer_baseline"
    assert cfg.train.batch_size == 4


def test_parse_rejects_malformed_line():
    with pytest.raises(ConfigurationError):
        parse_text("just some words\n")


def test_validate_rejects_bad_mode_and_switches():
    cfg = RunConfig()
    cfg.mode = "dreamer"
    with pytest.raises(ConfigurationError):
        cfg.validate()
    cfg = RunConfig()
    for key in ("loss.reality_reality", "loss.dream_reality", "loss.rsid"):
        apply_override(cfg, key, "false")
    with pytest.raises(ConfigurationError):
        cfg.validate()
    cfg.mode = "dreamer_baseline"
    cfg.validate()  # decoder carries the training signal


def test_validate_rejects_short_sequences():
    cfg = RunConfig()
    apply_override(cfg, "train.seq_len", "1")
    with pytest.raises(ConfigurationError):
        cfg.validate()
