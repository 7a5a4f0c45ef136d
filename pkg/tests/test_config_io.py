import math

import pytest

from gated_spd.config import (
    ConfigError,
    RunConfig,
    default_config_yaml,
    detector_to_dict,
    dump_detector,
    load_config,
    parse_config,
)
from gated_spd.detector import DetectorParams, detection_efficiency
from gated_spd.io import SCHEMAS, atomic_write, fmt, read_rows, render_csv, schema_markdown, write_rows


def test_default_yaml_round_trips(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(default_config_yaml())
    cfg = load_config(path)
    assert cfg.detector == DetectorParams()
    assert detection_efficiency(cfg.detector, cfg.protocol.v_ov) == pytest.approx(0.2)
    assert cfg.chain is not None and cfg.avalanche is not None
    assert cfg.seed == 1


def test_empty_config_is_defaults():
    cfg = parse_config(None)
    assert isinstance(cfg, RunConfig)
    assert cfg.detector == DetectorParams()


def test_scientific_notation_without_point(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("detector:\n  p_dark_ref: 2e-6\n")
    assert load_config(path).detector.p_dark_ref == 2e-6


@pytest.mark.parametrize("raw, field", [
    ({"detectr": {}}, "config.detectr"),
    ({"protocol": {"n_blnk": 3}}, "protocol.n_blnk"),
    ({"protocol": {"n_blank": 300}}, "protocol.n_blank"),
    ({"protocol": {"de": 0.2, "v_ov": 1.0}}, "protocol.de"),
    ({"protocol": {"de": 0.5}}, "protocol.de"),
    ({"protocol": {"n_gates": -5}}, "protocol.n_gates"),
    ({"detector": {"traps": [{"capture_mean": 1, "lifetime": 0, "trigger_ref": 0.1}]}}, "detector.traps[0]"),
    ({"detector": {"eta_max": 2}}, "detector"),
    ({"seed": -1}, "seed"),
    ({"chain": {"impedance": 0}}, "chain"),
    ({"calibrate": {"targets": [{"observable": "x", "value": 1}]}}, "calibrate.targets[0]"),
])
def test_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert str(info.value).startswith(field)


def test_unreadable_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("detector: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_dump_detector_round_trips():
    p = DetectorParams(p_dark_ref=3e-6, dark_halving=11.0)
    import yaml

    back = parse_config(yaml.safe_load(dump_detector(p))).detector
    assert back == p
    assert detector_to_dict(p)["traps"][0]["lifetime"] == 2e-6


def test_fmt_is_repr_exact():
    assert fmt(0.1) == "0.1"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(math.nan) == "nan"
    assert fmt(True) == "1"
    import numpy as np

    assert fmt(np.float64(2.5)) == "2.5"
    assert fmt(np.int64(7)) == "7"


def test_render_and_read_rows(tmp_path):
    rows = [{"quantity": "de", "value": 0.2, "stderr": 0.001}]
    write_rows(tmp_path / "estimates.csv", rows)
    text = (tmp_path / "estimates.csv").read_text()
    assert text == "quantity,value,stderr\nde,0.2,0.001\n"
    assert read_rows(tmp_path / "estimates.csv") == [{"quantity": "de", "value": "0.2", "stderr": "0.001"}]
    assert render_csv([{}], ["a", "b"]) == "a,b\n,\n"


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "sub" / "x.csv", "a\n")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.csv"]


def test_schema_doc_lists_every_file():
    doc = schema_markdown()
    for name in SCHEMAS:
        assert f"## {name}" in doc
