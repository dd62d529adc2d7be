import pytest

from sslr.config import SCHEMA, ConfigError, default_config, load_config


class TestDefaults:
    def test_every_key_has_a_documented_default(self):
        for section, keys in SCHEMA.items():
            for key, (type_name, default, help_text) in keys.items():
                assert help_text, f"{section}.{key} lacks documentation"
                assert default is not None or type_name == "str"

    def test_defaults_resolve_without_a_file(self):
        cfg = load_config()
        assert cfg.get("train", "epochs") == 100
        assert cfg.get("model", "hidden_dim") == 108
        assert cfg.get("matrix", "fractions") == [0.01, 0.05, 0.10, 0.25, 0.50, 0.75]
        assert cfg.get("matrix", "class_counts") == [5, 20, 40, 60, 80, 100]

    def test_typed_views_build(self):
        cfg = load_config()
        assert cfg.model_config(7).num_classes == 7
        assert cfg.train_config().epochs == 100
        assert cfg.ssl_config().inner_epochs == 60
        assert cfg.ssl_config().stall_cycles is None  # 0 means disabled


class TestParsing:
    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("""
# experiment settings
[train]
epochs = 7
learning_rate = 0.01

[augment]
shear = false
""")
        cfg = load_config(path)
        assert cfg.get("train", "epochs") == 7
        assert cfg.get("train", "learning_rate") == 0.01
        assert cfg.get("augment", "shear") is False
        assert cfg.get("augment", "noise") is True  # untouched default

    def test_include_directive(self, tmp_path):
        (tmp_path / "base.cfg").write_text("[train]\nepochs = 3\nseed = 5\n")
        child = tmp_path / "child.cfg"
        child.write_text("include = base.cfg\n\n[train]\nepochs = 9\n")
        cfg = load_config(child)
        assert cfg.get("train", "epochs") == 9  # child wins
        assert cfg.get("train", "seed") == 5  # inherited

    def test_include_cycle_detected(self, tmp_path):
        a = tmp_path / "a.cfg"
        b = tmp_path / "b.cfg"
        a.write_text("include = b.cfg\n")
        b.write_text("include = a.cfg\n")
        with pytest.raises(ConfigError, match="cycle"):
            load_config(a)

    def test_unknown_section_fatal(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[trainer]\nepochs = 3\n")
        with pytest.raises(ConfigError, match=r"\[trainer\]"):
            load_config(path)

    def test_unknown_key_fatal(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[train]\nepochz = 3\n")
        with pytest.raises(ConfigError, match="train.epochz"):
            load_config(path)

    def test_bad_value_fatal(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[train]\nepochs = many\n")
        with pytest.raises(ConfigError, match="train.epochs"):
            load_config(path)

    def test_missing_file_fatal(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.cfg")

    def test_list_values(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[matrix]\nfractions = 0.1, 0.5\nseeds = 1,2,3\nmodes = fsl\n")
        cfg = load_config(path)
        assert cfg.get("matrix", "fractions") == [0.1, 0.5]
        assert cfg.get("matrix", "seeds") == [1, 2, 3]
        assert cfg.get("matrix", "modes") == ["fsl"]


class TestOverrides:
    def test_set_override(self):
        cfg = load_config(overrides=["train.epochs=4", "augment.noise=false"])
        assert cfg.get("train", "epochs") == 4
        assert cfg.get("augment", "noise") is False

    def test_override_unknown_key_fatal(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            load_config(overrides=["train.bogus=1"])

    def test_override_requires_dotted_form(self):
        with pytest.raises(ConfigError, match="section.key"):
            load_config(overrides=["epochs=4"])

    def test_default_config_copies_are_independent(self):
        a = default_config()
        b = default_config()
        a["matrix"]["fractions"].append(0.9)
        assert 0.9 not in b["matrix"]["fractions"]
