#!/usr/bin/env python3
"""
Тесты конфигурации: умолчания, типы значений, приоритет источников
"""

import pytest

from src.config import (DEFAULTS, KEYS, RunConfig, config_to_settings, format_settings, load_config,
                        load_settings, parse_value, with_overrides)


def test_every_key_has_default_and_description():
    assert set(DEFAULTS) == set(KEYS)
    assert all(description for _, description in KEYS.values())


def test_defaults_build_default_config():
    config = load_config()
    assert config == RunConfig()
    assert config.thresholds.th_mid == 0.5 and config.thresholds.th_low == 0.1
    assert config.cascade.stage_scales == (5.0, 18.0)
    assert config.seed == 0


parse_cases = [
    {"name": "целое", "input": ("n_candidates", "128"), "expected": 128},
    {"name": "вещественное", "input": ("th_mid", "0.6"), "expected": 0.6},
    {"name": "логическое", "input": ("one_stage_per_frame", "yes"), "expected": True},
    {"name": "логическое ложь", "input": ("detector_enabled", "off"), "expected": False},
    {"name": "список", "input": ("refine_scales", "0.9, 1, 1.1"), "expected": (0.9, 1.0, 1.1)},
    {"name": "строка", "input": ("ranking_mode", " sequential "), "expected": "sequential"},
]


@pytest.mark.parametrize("case", parse_cases, ids=[c["name"] for c in parse_cases])
def test_parse_value(case):
    assert parse_value(*case["input"]) == case["expected"]


invalid_values = [
    {"name": "неизвестный ключ", "input": ("colour", "red")},
    {"name": "не целое", "input": ("n_candidates", "many")},
    {"name": "не логическое", "input": ("detector_enabled", "maybe")},
]


@pytest.mark.parametrize("case", invalid_values, ids=[c["name"] for c in invalid_values])
def test_parse_value_errors(case):
    with pytest.raises(ValueError):
        parse_value(*case["input"])


invalid_configs = [
    {"name": "th_low >= th_mid", "input": {"th_low": 0.6}},
    {"name": "один масштаб каскада", "input": {"stage_scales": (5.0,)}},
    {"name": "неизвестное отображение", "input": {"score_mapping": "linear"}},
    {"name": "неизвестный режим ранжирования", "input": {"ranking_mode": "random"}},
    {"name": "ноль процессов", "input": {"workers": 0}},
    {"name": "неизвестная оценка обновления", "input": {"update_score": "random"}},
]


@pytest.mark.parametrize("case", invalid_configs, ids=[c["name"] for c in invalid_configs])
def test_invalid_config(case):
    with pytest.raises(ValueError):
        load_config(overrides=case["input"])


def test_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("LTT_SEED", "7")
    monkeypatch.setenv("LTT_N_CANDIDATES", "64")
    path = tmp_path / "run.conf"
    path.write_text("# комментарий\nseed = 11\n\nth_mid = 0.6\n", encoding="utf-8")
    settings = load_settings(path, {"th_mid": "0.7"})
    assert settings["n_candidates"] == 64
    assert settings["seed"] == 11
    assert settings["th_mid"] == 0.7


def test_config_file_errors(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("seed 11\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(path)
    path.write_text("colour = red\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(path)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.conf")


def test_printed_defaults_load_back(tmp_path):
    path = tmp_path / "defaults.conf"
    path.write_text(format_settings(DEFAULTS), encoding="utf-8")
    assert load_config(path) == RunConfig()


def test_detection_gates_live_in_thresholds():
    config = load_config(overrides={"det_sim": 0.4, "det_cls": 0.1})
    assert (config.thresholds.det_sim, config.thresholds.det_cls) == (0.4, 0.1)
    assert not hasattr(config.cascade, "det_sim")


def test_with_overrides_round_trip():
    config = with_overrides(RunConfig(), score_mapping="rectified", workers=3)
    assert config.appearance.score_mapping == "rectified"
    assert config.workers == 3
    assert config_to_settings(config)["workers"] == 3
