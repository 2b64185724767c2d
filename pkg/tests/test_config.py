from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from revisit_lab.config import ConfigError, format_value, load_config, parse_config_text, parse_value
from revisit_lab.events import TaskId
from revisit_lab.pipeline import PipelineConfig


class TestValues:
    @pytest.mark.parametrize("text, value", [
        ("3", 3), ("0.5", 0.5), ("1e-3", 1e-3), ("true", True), ("off", False), ("abc", "abc"),
        ('"x y"', "x y"), ("[]", []), ("[1, 2.5]", [1, 2.5]), ("[finance: 1.5, art: 2]", {"finance": 1.5, "art": 2}),
    ])
    def test_parse(self, text, value):
        assert parse_value(text) == value

    def test_mixed_list_map(self):
        with pytest.raises(ConfigError):
            parse_value("[a: 1, 2]")

    @given(st.one_of(st.integers(-10**9, 10**9), st.floats(allow_nan=False, allow_infinity=False),
                     st.lists(st.floats(0, 1), max_size=10), st.booleans()))
    def test_format_round_trip(self, v):
        assert parse_value(format_value(v)) == v


class TestSections:
    def test_default_section_and_comments(self):
        sections = parse_config_text("# top\nn_users = 5  # trailing\n\n[train]\nepochs = 2\n")
        assert sections == {"gen": {"n_users": 5}, "train": {"epochs": 2}}

    def test_bad_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("a = 1\njust words\n")

    def test_empty_section_name(self):
        with pytest.raises(ConfigError):
            parse_config_text("[]\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.cfg")


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig.from_sections({})
        assert cfg.train.epochs == 1
        assert cfg.train.learning_rate == 1e-3
        assert cfg.utilities[TaskId.REPIN_AND_REVISIT] == 1.27 * cfg.utilities[TaskId.REPIN]
        assert cfg.stages == {"train": True, "evaluate": True, "analyze": True}

    def test_weights_and_toggles(self, tmp_path):
        cfg = PipelineConfig.from_text(
            "[pipeline]\nout_dir = o\ntrain = false\n[weights]\nu_rp_rv_ratio = 2\nloss.click = 0.5\n"
            "utility.grid_click = 3\n", base_dir=tmp_path)
        assert cfg.out_dir == tmp_path / "o"
        assert cfg.stages["train"] is False
        assert cfg.utilities[TaskId.REPIN_AND_REVISIT] == 4.0
        assert cfg.utilities[TaskId.GRID_CLICK] == 3.0
        assert cfg.loss_weights[TaskId.CLICK] == 0.5

    @pytest.mark.parametrize("text", [
        "[bogus]\na = 1\n", "[train]\nepochz = 1\n", "[pipeline]\nfoo = 1\n", "[weights]\nloss.nope = 1\n",
        "[weights]\nfoo.click = 1\n", "[train]\nepochs = 0\n", "[pipeline]\nevent_log = e.csv\n",
    ])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            PipelineConfig.from_text(text)

    def test_bundled_fixture_loads(self):
        path = Path(__file__).resolve().parent.parent / "configs" / "fixture.cfg"
        cfg = PipelineConfig.load(path)
        assert cfg.gen.planted_signal_strength == 1.0
        assert cfg.out_dir.name == "fixture"
