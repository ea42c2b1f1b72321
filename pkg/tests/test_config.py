import pytest

from cosod.config import ABLATIONS, RunConfig, load_config, loads, parse_lines, write_fingerprint
from cosod.errors import ConfigurationError


def test_defaults_match_reference_settings():
    cfg = RunConfig()
    assert cfg.backbone.variant == "vit-base-8" and cfg.backbone.input_side == 224
    assert (cfg.train.epochs, cfg.train.lr, cfg.train.max_group_sample, cfg.train.lambda_sal) == (80, 1e-4, 24, 0.3)
    assert (cfg.cat.th0, cfg.cat.alpha_c, cfg.refine.d_f_th) == (0.5, 1.0, 0.75)
    assert (cfg.crf.theta_gamma, cfg.crf.theta_alpha, cfg.crf.theta_beta, cfg.crf.iterations) == (10, 10, 3, 10)


def test_flat_roundtrip():
    cfg = RunConfig().with_overrides({"train.datasets": '["a", "b"]', "cat.alpha_c": "0.5", "toggles.enable_crf": "false"})
    back = loads(cfg.dumps())
    assert back == cfg and back.fingerprint() == cfg.fingerprint()
    assert back.train.datasets == ["a", "b"] and back.toggles.enable_crf is False


def test_precedence_file_env_override(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ncat.th0 = 0.4\ntrain.epochs = 5\n")
    cfg = load_config(path, {"train.epochs": "7"}, environ={"COSOD__CAT__TH0": "0.45", "OTHER": "x"})
    assert cfg.cat.th0 == 0.45 and cfg.train.epochs == 7


def test_fingerprint_ignores_paths_only():
    base = RunConfig()
    assert base.with_overrides({"paths.data_root": "/elsewhere"}).fingerprint() == base.fingerprint()
    assert base.with_overrides({"crf.iterations": "3"}).fingerprint() != base.fingerprint()
    assert len(base.fingerprint()) == 16


def test_toggles_feed_train_and_segment_configs():
    cfg = RunConfig(toggles=ABLATIONS["cooc"]).with_overrides({"backbone.input_side": "112"})
    assert cfg.train_config().enable_sal_loss is False and cfg.train_config().input_side == 112
    seg = cfg.segment_config()
    assert not (seg.enable_cat or seg.enable_rfc or seg.enable_crf)


def test_ablation_rows_are_cumulative():
    rows = list(ABLATIONS.values())
    flags = [(t.enable_sal_loss, t.enable_cat, t.enable_rfc, t.enable_crf) for t in rows]
    assert [sum(f) for f in flags] == [0, 1, 2, 3, 4]
    assert all(all(a <= b for a, b in zip(x, y)) for x, y in zip(flags, flags[1:]))


@pytest.mark.parametrize(
    "pairs",
    [
        {"nope.x": "1"},
        {"train.nope": "1"},
        {"train.epochs": "many"},
        {"toggles.enable_crf": "maybe"},
        {"train.enable_sal_loss": "false"},
        {"backbone.input_side": "100"},
    ],
)
def test_bad_overrides(pairs):
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides(pairs)


def test_bad_lines_and_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match=":2:"):
        parse_lines(["a.b = 1", "garbage"])
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.cfg")


def test_write_fingerprint(tmp_path):
    cfg = RunConfig()
    path = write_fingerprint(cfg, tmp_path / "o")
    assert path.read_text().strip() == cfg.fingerprint()
    assert loads((tmp_path / "o" / "config.txt").read_text()) == cfg
