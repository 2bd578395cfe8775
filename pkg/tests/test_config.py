import pytest

from enhsep.config import (
    DEFAULTS,
    ConfigError,
    dump_config,
    load_config,
    normalize_step,
    parse_overrides,
    validate,
    validate_chain,
)


def test_defaults_roundtrip(tmp_path):
    cfg = load_config()
    assert cfg == DEFAULTS and cfg is not DEFAULTS
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_file_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 5\nsimulate:\n  t60: 0.3\n")
    cfg = load_config(path, parse_overrides(["--simulate.num_mics=4", "--stft.hop", "64", "--enhance.chain", "[wpe, mvdr]"]))
    assert cfg["seed"] == 5 and cfg["simulate"]["t60"] == 0.3 and cfg["simulate"]["num_speakers"] == 2
    assert cfg["simulate"]["num_mics"] == 4 and cfg["stft"]["hop"] == 64
    assert cfg["enhance"]["chain"] == ["wpe", "mvdr"]


@pytest.mark.parametrize("args", [["--nope.x=1"], ["simulate.t60=1"], ["--stft.hop"], ["--"]])
def test_bad_overrides(args):
    with pytest.raises(ConfigError):
        load_config(None, parse_overrides(args))


def test_bad_files(tmp_path):
    (tmp_path / "a.yaml").write_text("- 1\n- 2\n")
    (tmp_path / "b.yaml").write_text("bogus: 1\n")
    (tmp_path / "c.yaml").write_text("seed: [1\n")
    for name in ("a.yaml", "b.yaml", "c.yaml", "missing.yaml"):
        with pytest.raises(ConfigError):
            load_config(tmp_path / name)


def test_step_forms():
    assert normalize_step("mask:IBM") == {"name": "mask", "kind": "IBM", "clip": 10.0}
    assert normalize_step({"wpd": {"taps": 2}}) == {"name": "wpd", "delay": 3, "taps": 2}
    assert normalize_step("mvdr") == {"name": "mvdr"}
    for bad in ("mask:XYZ", "gev", "mvdr:foo", {"wpe": {"bogus": 1}}, 3):
        with pytest.raises(ConfigError):
            normalize_step(bad)


@pytest.mark.parametrize("chain", [["wpe", "mask:IRM", "mvdr"], ["wpe", "wpe"], ["mpdr"], ["mask:PSM"], ["wpe", "wpd"]])
def test_valid_chains(chain):
    assert len(validate_chain(chain)) == len(chain)


@pytest.mark.parametrize("chain", [[], ["mvdr", "mask:IRM"], ["mask:IRM", "wpe"], ["mvdr", "mpdr"], ["mask:IBM", "mask:IRM"]])
def test_invalid_chains(chain):
    with pytest.raises(ConfigError):
        validate_chain(chain)


def test_validate_sections():
    cfg = load_config()
    assert validate(cfg) is cfg
    for path, value in [("stages", ["train"]), ("score.metrics", ["pesq"]), ("score.estimates", "x"),
                        ("simulate.noise", "babble"), ("simulate.ref_channel", 5), ("simulate.num_mics", 0)]:
        broken = load_config(None, [(path, value)])
        with pytest.raises(ConfigError):
            validate(broken)
    empty_chain = load_config(None, [("enhance.chain", [])])
    validate(empty_chain, ["simulate"])
    with pytest.raises(ConfigError):
        validate(empty_chain, ["enhance"])
