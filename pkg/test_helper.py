import json
import logging
import os
from logging.handlers import RotatingFileHandler

import pytest

from errors import ConfigurationError
from helper import DEFAULT_CONFIG, config_hash, episode_seed, load_config, merge_config, render
from logger import setup_logging


class TestConfig:

    def test_defaults_without_file(self, monkeypatch):
        monkeypatch.delenv('DEMOBOT_CONFIG', raising=False)
        assert load_config() == DEFAULT_CONFIG

    def test_repo_config_file_mirrors_the_defaults(self):
        with open(os.path.join(os.path.dirname(__file__), 'config.json'), encoding='utf-8') as f:
            assert json.load(f) == DEFAULT_CONFIG

    def test_precedence_flags_over_file_over_defaults(self, tmp_path, monkeypatch):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"similarity": {"k": 5}, "harness": {"workers": 3}}))
        monkeypatch.setenv('DEMOBOT_CONFIG', str(path))
        config = load_config(overrides={"harness": {"workers": 8}})
        assert config["similarity"]["k"] == 5
        assert config["harness"]["workers"] == 8
        assert config["reachability"]["gamma"] == 0.95

    @pytest.mark.parametrize("override, key", [
        ({"similarity": {"kk": 5}}, "similarity.kk"),
        ({"retrieval": {}}, "retrieval"),
        ({"similarity": {"k": "ten"}}, "similarity.k"),
        ({"similarity": {"k": 2.5}}, "similarity.k"),
        ({"subgoal": {"use_filter": 1}}, "subgoal.use_filter"),
    ])
    def test_invalid_overrides_name_the_key(self, override, key):
        with pytest.raises(ConfigurationError, match=key.replace('.', r'\.')):
            merge_config(DEFAULT_CONFIG, override)

    def test_nullable_settings_accept_numbers(self):
        config = merge_config(DEFAULT_CONFIG, {"reachability": {"merge_eps": 0.2}})
        assert config["reachability"]["merge_eps"] == 0.2
        assert DEFAULT_CONFIG["reachability"]["merge_eps"] is None

    def test_output_paths_accept_strings(self, tmp_path):
        overrides = {"harness": {"episode_log": str(tmp_path / "episodes.jsonl"),
                                 "database": str(tmp_path / "results.db")}}
        config = merge_config(DEFAULT_CONFIG, overrides)
        assert config["harness"]["episode_log"].endswith("episodes.jsonl")
        assert config["harness"]["database"].endswith("results.db")
        path = tmp_path / "config.json"
        path.write_text(json.dumps(overrides))
        assert load_config(str(path))["harness"]["database"].endswith("results.db")

    @pytest.mark.parametrize("override, key", [
        ({"harness": {"database": 3}}, "harness.database"),
        ({"reachability": {"merge_eps": "small"}}, "reachability.merge_eps"),
        ({"env": {"lateral_max": True}}, "env.lateral_max"),
    ])
    def test_nullable_settings_keep_their_type(self, override, key):
        with pytest.raises(ConfigurationError, match=key.replace('.', r'\.')):
            merge_config(DEFAULT_CONFIG, override)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError, match="invalid JSON"):
            load_config(str(path))

    def test_hash_ignores_key_order(self):
        a = {"b": 1, "a": {"y": 2, "x": 3}}
        b = {"a": {"x": 3, "y": 2}, "b": 1}
        assert config_hash(a) == config_hash(b)
        assert len(config_hash(a)) == 16
        assert config_hash(a) != config_hash({"b": 2, "a": {"y": 2, "x": 3}})


def test_episode_seed_blocks():
    assert episode_seed(0, 0, 0) == 0
    assert episode_seed(5, 2, 7) == 2012


def test_inspect_template_renders_rows():
    text = render('inspect.txt.j2', {"path": "d.jsonl", "kind": "demobot-dataset",
                                     "rows": [["trajectories", 3]], "details": []})
    assert text.startswith("d.jsonl (demobot-dataset)\n")
    assert "trajectories" in text


class TestLogging:

    def test_file_and_console_handlers(self, tmp_path):
        logger = setup_logging(name='demobot-test-a', log_dir=str(tmp_path / "logs"))
        kinds = {type(h) for h in logger.handlers}
        assert RotatingFileHandler in kinds
        assert logging.StreamHandler in kinds
        assert (tmp_path / "logs" / "demobot-test-a.log").exists()
        assert not logger.propagate

    def test_repeated_setup_reuses_handlers(self, tmp_path):
        first = setup_logging(name='demobot-test-b', log_dir=str(tmp_path))
        second = setup_logging(name='demobot-test-b', log_dir=str(tmp_path), console_level=logging.WARNING)
        assert first is second
        assert len(second.handlers) == 2
        console = [h for h in second.handlers if not isinstance(h, RotatingFileHandler)]
        assert console[0].level == logging.WARNING
