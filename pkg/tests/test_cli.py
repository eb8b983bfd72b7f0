import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handball.array_model import SystemConfig
from handball.cli import (ExperimentSpec, RunRecord, SpecError, emit_plot_data, main, parse_spec,
                          run_experiment, serialize_spec)
from handball.evaluation import SweepAxis, run_sweep

SMALL = """
n_tx: 32
n_rx: 4
grid_size: 64
trials: 3
"""

SWEEP = SMALL + """
series_bits: [1, inf]
sweep:
  axis: snr_db
  start: 0
  stop: 10
  step: 5
"""


def test_empty_document_gives_default_scenario():
    spec = parse_spec("")
    cfg = spec.config
    assert (cfg.n_tx, cfg.n_rx, cfg.n_users, cfg.n_targets, cfg.n_paths) == (128, 10, 3, 3, 5)
    assert cfg.p_s == cfg.p_max == 1.0
    assert spec.sweep is None and spec.trials == 200


def test_out_of_range_eta_names_the_field():
    with pytest.raises(SpecError, match="eta"):
        parse_spec("eta: 1.5")


def test_snr_range_expands_in_order():
    spec = parse_spec("sweep:\n  axis: snr_db\n  start: -10\n  stop: 20\n  step: 5\n")
    assert spec.sweep.values == (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)


def test_malformed_document_reports_line():
    with pytest.raises(SpecError, match="line 2"):
        parse_spec("n_tx: 8\nfoo: bar: baz\n")


@pytest.mark.parametrize("doc, field", [
    ("bogus: 1", "bogus"),
    ("trials: 0", "trials"),
    ("bits: 0", "bits"),
    ("outputs: [plots]", "outputs"),
    ("power_rule: guess", "power_rule"),
    ("sweep:\n  axis: power\n  values: [1]", "axis"),
    ("sweep:\n  axis: snr_db\n  values: [5, 0]", "sorted"),
    ("sweep:\n  axis: snr_db\n  values: []", "non-empty"),
    ("sweep:\n  axis: eta\n  values: [.inf]", "finite"),
    ("sweep:\n  axis: snr_db\n  start: 0\n  stop: 5", "step"),
    ("beampattern:\n  eta: [2]", "eta"),
    ("n_users: 2\nn_rf: 6", "n_rf"),
    ("- 1\n- 2", "mapping"),
])
def test_invalid_documents(doc, field):
    with pytest.raises(SpecError, match=field):
        parse_spec(doc)


def test_bits_axis_accepts_infinity():
    spec = parse_spec("sweep:\n  axis: bits\n  values: [1, 2, inf]")
    assert spec.sweep.values[:2] == (1, 2) and math.isinf(spec.sweep.values[2])


specs = st.builds(
    ExperimentSpec,
    config=st.builds(SystemConfig, n_users=st.integers(1, 4), n_targets=st.integers(1, 4),
                     bits=st.sampled_from([1, 2, 4, math.inf]), eta=st.floats(0, 1),
                     noise_var=st.floats(1e-3, 10), seed=st.integers(0, 2 ** 63),
                     per_path_gains=st.booleans(), grid_span=st.sampled_from(["pi", "2pi"])),
    sweep=st.one_of(st.none(), st.builds(
        SweepAxis, name=st.just("snr_db"),
        values=st.lists(st.floats(-30, 30), min_size=1, max_size=5).map(sorted).map(tuple))),
    trials=st.integers(1, 500),
    outputs=st.sampled_from([("table",), ("table", "diagnostics"), ("beampattern",)]),
    series_bits=st.sampled_from([(), (1, 2, math.inf)]),
    strict_eq7=st.booleans(),
)


@settings(max_examples=50, deadline=None)
@given(specs)
def test_spec_round_trip(spec):
    assert parse_spec(serialize_spec(spec)) == spec


def test_beampattern_section_round_trip():
    spec = parse_spec("beampattern:\n  eta: [0, 1]\n  grid_step_deg: 0.5")
    assert parse_spec(serialize_spec(spec)) == spec


def test_run_record_round_trip(tmp_path):
    spec = parse_spec(SWEEP)
    record = run_experiment(spec, tmp_path)
    text = json.dumps(record.to_dict())
    back = RunRecord.from_dict(json.loads(text))
    assert back == record
    assert json.loads((tmp_path / "record.json").read_text()) == record.to_dict()


def test_sweep_writes_one_table_per_bit_depth(tmp_path):
    run_experiment(parse_spec(SWEEP), tmp_path)
    lines = (tmp_path / "sweep_snr_db_b1.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].split(",")[:4] == ["value", "mean_se", "std_se", "n_trials"]
    assert [row.split(",")[0] for row in lines[1:]] == ["0.0", "5.0", "10.0"]
    assert (tmp_path / "sweep_snr_db_binf.csv").exists()
    raw = (tmp_path / "sweep_snr_db_b1.csv").read_bytes()
    assert b"\r" not in raw


def test_table_values_come_from_run_sweep(tmp_path):
    spec = parse_spec(SWEEP)
    run_experiment(spec, tmp_path)
    res = run_sweep(spec.config.replace(bits=1), spec.sweep, n_trials=3)
    rows = (tmp_path / "sweep_snr_db_b1.csv").read_text().splitlines()[1:]
    for row, m, s in zip(rows, res.mean_se, res.std_se):
        _, mean, std, n, *_ = row.split(",")
        assert float(mean) == m and float(std) == s and int(n) == 3


def test_beampattern_tables(tmp_path):
    spec = parse_spec(SMALL + "beampattern:\n  eta: [0, 0.5, 1]\n")
    run_experiment(spec, tmp_path)
    for eta in ("0.0", "0.5", "1.0"):
        lines = (tmp_path / f"beampattern_eta{eta}.csv").read_text().splitlines()
        assert lines[0] == "angle_deg,gain_db"
        gains = np.array([float(r.split(",")[1]) for r in lines[1:]])
        assert len(lines) == 182 and gains.max() == 0.0


def test_plot_data_files(tmp_path):
    record = run_experiment(parse_spec(SWEEP + "beampattern:\n  eta: [0.5]\n"), tmp_path)
    dat = (tmp_path / "sweep_snr_db_b1.dat").read_text().splitlines()
    assert dat[0].startswith("#") and "mean_se" in dat[1]
    assert len(dat[2].split()) == 3
    bp = (tmp_path / "beampattern_eta0.5.dat").read_text().splitlines()
    assert "angle[deg]" in bp[1]
    assert max(float(r.split()[1]) for r in bp[2:]) == 0.0
    assert len(emit_plot_data(record, tmp_path / "again")) == 3


def test_plot_data_rejects_empty_record(tmp_path):
    record = RunRecord(spec=parse_spec(""), results=(), tool_version="x", timestamp="t", seed=0)
    with pytest.raises(ValueError):
        emit_plot_data(record, tmp_path)


def test_rerun_gives_identical_tables(tmp_path):
    spec = parse_spec(SWEEP)
    run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b")
    for name in ("sweep_snr_db_b1.csv", "sweep_snr_db_binf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_temporary_files_left(tmp_path):
    run_experiment(parse_spec(SWEEP), tmp_path)
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]


# --- command line ---------------------------------------------------------

def write(tmp_path, text):
    path = tmp_path / "spec.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_main_sweep(tmp_path):
    cfg = write(tmp_path, SWEEP)
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--trials", "2",
                 "--bits", "2", "-q"]) == 0
    assert (out / "sweep_snr_db_b2.csv").exists() and (out / "record.json").exists()
    rec = json.loads((out / "record.json").read_text())
    assert rec["spec"]["trials"] == 2


def test_main_flags_override_file(tmp_path):
    cfg = write(tmp_path, SWEEP)
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "7", "--eta", "0.25",
                 "--strict-eq7", "-q"]) == 0
    spec = json.loads((out / "record.json").read_text())["spec"]
    assert spec["seed"] == 7 and spec["eta"] == 0.25 and spec["strict_eq7"] is True


def test_main_beampattern(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "bp"
    assert main(["beampattern", "--config", str(cfg), "--out", str(out), "--eta", "0.5",
                 "-q"]) == 0
    assert sorted(p.name for p in out.glob("*.csv")) == ["beampattern_eta0.5.csv"]


def test_main_validate(tmp_path, capsys):
    assert main(["validate", "--config", str(write(tmp_path, SWEEP))]) == 0
    assert parse_spec(capsys.readouterr().out) == parse_spec(SWEEP)


def test_main_validation_error(tmp_path, capsys):
    assert main(["validate", "--config", str(write(tmp_path, "eta: 3"))]) == 1
    assert "eta" in capsys.readouterr().err


def test_main_sweep_needs_sweep_section(tmp_path):
    assert main(["sweep", "--config", str(write(tmp_path, SMALL)), "-q"]) == 1


def test_main_all_trials_infeasible(tmp_path):
    cfg = write(tmp_path, SWEEP + "power_rule: literal\n")
    assert main(["sweep", "--config", str(cfg), "--bits", "1", "--out", str(tmp_path / "o"),
                 "-q"]) == 2


def test_main_missing_config(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "absent.yaml")]) == 3


def test_main_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["sweep", "--config", str(write(tmp_path, SWEEP)), "--out",
                 str(blocker / "sub"), "-q"]) == 3


def test_main_quantcheck(capsys):
    assert main(["quantcheck", "--trials", "2", "--samples", "20000"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 5 and all(line.startswith("PASS") for line in out)
