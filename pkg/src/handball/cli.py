"""Command-line front end: experiment specs, sweeps, beampatterns and result files.

Experiments are described by a YAML document holding the scenario keys of
:class:`~handball.array_model.SystemConfig` at top level plus optional
``sweep`` and ``beampattern`` sections::

    n_users: 3
    bits: 1
    eta: 1.0
    trials: 200
    series_bits: [1, 2, 3, 4, inf]
    sweep:
      axis: snr_db
      start: -10
      stop: 20
      step: 5
    beampattern:
      user_directions_deg: [60, 100, 140]
      target_directions_deg: [30, 50, 130]
      eta: [0, 0.5, 1]

Command-line flags override values from the file. Exit codes: 0 success,
1 parse/validation error, 2 design failure on every trial, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .array_model import SystemConfig
from .beamforming import POWER_RULES, design
from .evaluation import (AXES, SweepAxis, SweepResult, dictionary_for,
                         directional_scenario, run_sweep, transmit_beampattern)
from .exceptions import HandballError
from .quantization import aqnm_distortion_ratio, bussgang_check

EXIT_OK, EXIT_SPEC, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

OUTPUT_KINDS = ("table", "beampattern", "diagnostics")
CONFIG_KEYS = {f.name for f in dataclasses.fields(SystemConfig)}
SPEC_KEYS = {"trials", "outputs", "output_path", "series_bits", "strict_eq7", "power_rule",
             "n_jobs", "sweep", "beampattern"}


class SpecError(ValueError):
    """Malformed or invalid experiment document."""


@dataclass(frozen=True)
class BeampatternSpec:
    user_directions_deg: tuple = (60.0, 100.0, 140.0)
    target_directions_deg: tuple = (30.0, 50.0, 130.0)
    eta: tuple = (0.0, 0.5, 1.0)
    grid_step_deg: float = 1.0


@dataclass(frozen=True)
class ExperimentSpec:
    config: SystemConfig = field(default_factory=SystemConfig)
    sweep: Optional[SweepAxis] = None
    trials: int = 200
    outputs: tuple = ("table",)
    output_path: str = "results"
    series_bits: tuple = ()
    strict_eq7: bool = False
    power_rule: str = "budget"
    n_jobs: int = 1
    beampattern: Optional[BeampatternSpec] = None

    def to_dict(self) -> dict:
        out = self.config.to_dict()
        out.update(trials=self.trials, outputs=list(self.outputs), output_path=self.output_path,
                   series_bits=[_fmt_bits(b) for b in self.series_bits],
                   strict_eq7=self.strict_eq7, power_rule=self.power_rule, n_jobs=self.n_jobs)
        if self.sweep is not None:
            out["sweep"] = {"axis": self.sweep.name,
                            "values": [_fmt_bits(v) if self.sweep.name == "bits" else v
                                       for v in self.sweep.values]}
        if self.beampattern is not None:
            bp = dataclasses.asdict(self.beampattern)
            out["beampattern"] = {k: list(v) if isinstance(v, tuple) else v
                                  for k, v in bp.items()}
        return out


@dataclass(frozen=True)
class RunRecord:
    spec: ExperimentSpec
    results: tuple
    tool_version: str
    timestamp: str
    seed: int

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "results": list(self.results),
                "tool_version": self.tool_version, "timestamp": self.timestamp,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(spec=spec_from_mapping(data["spec"]), results=tuple(data["results"]),
                   tool_version=data["tool_version"], timestamp=data["timestamp"],
                   seed=int(data["seed"]))


def _fmt_bits(b):
    return "inf" if isinstance(b, float) and math.isinf(b) else int(b)


def _parse_bits(value, where):
    try:
        return SystemConfig(bits=value).bits
    except ValueError as exc:
        raise SpecError(f"{where}: {exc}") from None


def _axis_values(sweep: dict):
    if "values" in sweep:
        if any(k in sweep for k in ("start", "stop", "step")):
            raise SpecError("sweep: give either 'values' or 'start'/'stop'/'step', not both")
        values = sweep["values"]
        if not isinstance(values, list):
            raise SpecError("sweep.values must be a list")
        return values
    try:
        start, stop, step = (float(sweep[k]) for k in ("start", "stop", "step"))
    except KeyError as exc:
        raise SpecError(f"sweep: missing {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise SpecError("sweep: start/stop/step must be numbers") from None
    if step <= 0 or stop < start:
        raise SpecError("sweep: need step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def _parse_sweep(sweep) -> SweepAxis:
    if not isinstance(sweep, dict):
        raise SpecError("sweep must be a mapping with 'axis' and values")
    unknown = set(sweep) - {"axis", "values", "start", "stop", "step"}
    if unknown:
        raise SpecError(f"sweep: unknown keys {sorted(unknown)}")
    name = sweep.get("axis")
    if name not in AXES:
        raise SpecError(f"sweep.axis must be one of {sorted(AXES)}, got {name!r}")
    raw = _axis_values(sweep)
    if not raw:
        raise SpecError("sweep.values must be non-empty")
    if name == "bits":
        values = [_parse_bits(v, "sweep.values") for v in raw]
    else:
        try:
            values = [float(v) for v in raw]
        except (TypeError, ValueError):
            raise SpecError("sweep.values must be numbers") from None
        if not all(math.isfinite(v) for v in values):
            raise SpecError("sweep.values must be finite")
        if name in ("n_users", "n_targets"):
            if not all(v.is_integer() and v >= 1 for v in values):
                raise SpecError(f"sweep.values for {name} must be positive integers")
            values = [int(v) for v in values]
    if any(b < a for a, b in zip(values, values[1:])):
        raise SpecError("sweep.values must be sorted in ascending order")
    return SweepAxis(name, tuple(values))


def _parse_beampattern(bp) -> BeampatternSpec:
    if bp is None or bp is True:
        return BeampatternSpec()
    if not isinstance(bp, dict):
        raise SpecError("beampattern must be a mapping")
    names = {f.name for f in dataclasses.fields(BeampatternSpec)}
    unknown = set(bp) - names
    if unknown:
        raise SpecError(f"beampattern: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in bp.items():
        if key == "grid_step_deg":
            try:
                kwargs[key] = float(value)
            except (TypeError, ValueError):
                raise SpecError("beampattern.grid_step_deg must be a number") from None
            if not kwargs[key] > 0:
                raise SpecError("beampattern.grid_step_deg must be positive")
            continue
        seq = list(value) if isinstance(value, (list, tuple)) else [value]
        try:
            kwargs[key] = tuple(float(v) for v in seq)
        except (TypeError, ValueError):
            raise SpecError(f"beampattern.{key} must be a list of numbers") from None
        if key == "eta" and not all(0.0 <= v <= 1.0 for v in kwargs[key]):
            raise SpecError("beampattern.eta values must lie in [0, 1]")
        if key != "eta" and not all(0.0 <= v < 180.0 for v in kwargs[key]):
            raise SpecError(f"beampattern.{key} must lie in [0, 180) degrees")
    spec = BeampatternSpec(**kwargs)
    if not spec.user_directions_deg or not spec.target_directions_deg or not spec.eta:
        raise SpecError("beampattern lists must be non-empty")
    return spec


def spec_from_mapping(doc: dict) -> ExperimentSpec:
    """Validate a parsed document and apply defaults for missing keys."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise SpecError("experiment document must be a mapping of keys to values")
    unknown = set(doc) - CONFIG_KEYS - SPEC_KEYS
    if unknown:
        raise SpecError(f"unknown keys {sorted(unknown)}")
    cfg_kwargs = {k: doc[k] for k in CONFIG_KEYS if k in doc}
    try:
        config = SystemConfig(**cfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from None

    trials = doc.get("trials", 200)
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        raise SpecError(f"trials must be a positive integer, got {trials!r}")
    n_jobs = doc.get("n_jobs", 1)
    if isinstance(n_jobs, bool) or not isinstance(n_jobs, int) or n_jobs < 1:
        raise SpecError(f"n_jobs must be a positive integer, got {n_jobs!r}")
    outputs = doc.get("outputs", ["table"])
    if isinstance(outputs, str):
        outputs = [outputs]
    if not isinstance(outputs, list) or not set(outputs) <= set(OUTPUT_KINDS):
        raise SpecError(f"outputs must be a list drawn from {list(OUTPUT_KINDS)}")
    series = doc.get("series_bits", [])
    if not isinstance(series, list):
        series = [series]
    series_bits = tuple(_parse_bits(b, "series_bits") for b in series)
    strict = doc.get("strict_eq7", False)
    if not isinstance(strict, bool):
        raise SpecError("strict_eq7 must be true or false")
    power_rule = doc.get("power_rule", "budget")
    if power_rule not in POWER_RULES:
        raise SpecError(f"power_rule must be one of {list(POWER_RULES)}")
    output_path = doc.get("output_path", "results")
    if not isinstance(output_path, str) or not output_path:
        raise SpecError("output_path must be a non-empty string")

    sweep = _parse_sweep(doc["sweep"]) if doc.get("sweep") is not None else None
    beampattern = _parse_beampattern(doc["beampattern"]) if "beampattern" in doc else None
    return ExperimentSpec(config=config, sweep=sweep, trials=trials, outputs=tuple(outputs),
                          output_path=output_path, series_bits=series_bits, strict_eq7=strict,
                          power_rule=power_rule, n_jobs=n_jobs, beampattern=beampattern)


def parse_spec(source: str) -> ExperimentSpec:
    """Parse a YAML experiment document. Empty input gives the default scenario."""
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise SpecError(f"malformed document{where}: {problem}") from None
    return spec_from_mapping(doc)


def serialize_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False, allow_unicode=True)


# --- output ---------------------------------------------------------------

def _num(v) -> str:
    """Shortest round-trip decimal text, locale independent."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) for v in row])
    return buf.getvalue()


def _bits_tag(bits) -> str:
    return "inf" if math.isinf(bits) else str(int(bits))


def sweep_table(result: SweepResult) -> str:
    rows = [(v if result.axis_name != "bits" else float(v), m, s, result.n_trials, n, fd)
            for v, m, s, n, fd in zip(result.axis_values, result.mean_se, result.std_se,
                                      result.n_valid, result.mean_fd)]
    return _csv_text(["value", "mean_se", "std_se", "n_trials", "n_valid", "mean_fd_se"], rows)


def beampattern_table(angles_deg, gain_db) -> str:
    return _csv_text(["angle_deg", "gain_db"], zip(angles_deg, gain_db))


def _sweep_entry(result: SweepResult, bits, filename) -> dict:
    entry = {"kind": "sweep", "bits": _fmt_bits(bits), "file": filename}
    entry.update(result.to_dict())
    return entry


def run_experiment(spec: ExperimentSpec, out_dir=None, log=None) -> RunRecord:
    """Execute the sweep and/or beampattern of ``spec`` and write result files.

    Writes one CSV per bit depth for sweeps, one CSV per trade-off value for
    beampatterns, ``record.json``, and gnuplot data files. Raises
    :class:`HandballError` when every trial of a sweep failed.
    """
    out = Path(out_dir if out_dir is not None else spec.output_path)
    log = log or (lambda msg: None)
    cfg = spec.config
    results = []
    diagnostics = {}

    if spec.sweep is not None:
        for bits in (spec.series_bits or (cfg.bits,)):
            base = cfg.replace(bits=bits)
            log(f"sweep {spec.sweep.name} bits={_bits_tag(bits)} trials={spec.trials}")
            res = run_sweep(base, spec.sweep, n_trials=spec.trials, strict=spec.strict_eq7,
                            power_rule=spec.power_rule, n_jobs=spec.n_jobs)
            if not np.any(res.n_valid):
                raise HandballError(
                    f"all trials failed for bits={_bits_tag(bits)}: {res.skipped[0][2]}")
            name = f"sweep_{spec.sweep.name}_b{_bits_tag(bits)}.csv"
            if "table" in spec.outputs:
                _atomic_write(out / name, sweep_table(res))
            results.append(_sweep_entry(res, bits, name))
            diagnostics[name] = {"skipped": _sweep_entry(res, bits, name)["skipped"]}

    if spec.beampattern is not None:
        bp = spec.beampattern
        grid = np.radians(np.arange(0.0, 180.0 + 1e-9, bp.grid_step_deg))
        for eta in bp.eta:
            ecfg = cfg.replace(eta=eta, n_users=len(bp.user_directions_deg),
                               n_targets=len(bp.target_directions_deg))
            rng = np.random.default_rng([cfg.seed, 0])
            channels, scene = directional_scenario(
                ecfg, np.radians(bp.user_directions_deg), np.radians(bp.target_directions_deg),
                rng)
            bf = design(channels, scene, dictionary_for(ecfg), ecfg, power_rule=spec.power_rule)
            pattern = transmit_beampattern(bf, None, ecfg, grid)
            name = f"beampattern_eta{_num(float(eta))}.csv"
            angles_deg = np.degrees(pattern.angles)
            if "table" in spec.outputs or "beampattern" in spec.outputs:
                _atomic_write(out / name, beampattern_table(angles_deg, pattern.gain_db))
            log(f"beampattern eta={eta} bits={_bits_tag(ecfg.bits)}")
            results.append({"kind": "beampattern", "eta": float(eta),
                            "bits": _fmt_bits(ecfg.bits), "file": name,
                            "angles_deg": [float(a) for a in angles_deg],
                            "gain_db": [_num(g) if not math.isfinite(g) else float(g)
                                        for g in pattern.gain_db],
                            "selected_tx_indices": [int(i) for i in bf.selected_tx_indices]})
            diagnostics[name] = {k: v for k, v in bf.diagnostics.items()}

    record = RunRecord(spec=spec, results=tuple(results), tool_version=__version__,
                       timestamp=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
                       seed=cfg.seed)
    _atomic_write(out / "record.json", json.dumps(record.to_dict(), indent=2) + "\n")
    if "diagnostics" in spec.outputs:
        _atomic_write(out / "diagnostics.json",
                      json.dumps(diagnostics, indent=2, default=_json_default) + "\n")
    if results:
        emit_plot_data(record, out)
    return record


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def emit_plot_data(record: RunRecord, out_dir) -> list:
    """Write whitespace-delimited ``.dat`` files for gnuplot; returns their paths."""
    if not record.results:
        raise ValueError("record has no results to plot")
    out = Path(out_dir)
    paths = []
    for entry in record.results:
        stem = Path(entry["file"]).stem
        if entry["kind"] == "sweep":
            head = (f"# {entry['axis_name']} sweep, bits={entry['bits']}, "
                    f"{entry['n_trials']} trials\n"
                    f"# columns: {entry['axis_name']} mean_se[bit/s/Hz] std_se[bit/s/Hz]\n")
            lines = [f"{_num(float(v) if isinstance(v, str) else v)} {_num(m)} {_num(s)}"
                     for v, m, s in zip(entry["axis_values"], entry["mean_se"],
                                        entry["std_se"])]
        else:
            head = (f"# transmit beampattern, eta={_num(entry['eta'])}, bits={entry['bits']}\n"
                    "# columns: angle[deg] gain[dB]\n")
            lines = [f"{_num(a)} {_num(float(g))}"
                     for a, g in zip(entry["angles_deg"], entry["gain_db"])]
        path = out / f"{stem}.dat"
        _atomic_write(path, head + "\n".join(lines) + "\n")
        paths.append(path)
    return paths


def quantcheck(n_precoders: int, n_samples: int, seed: int, n_rf: int = 6, n_users: int = 3,
               log=print) -> bool:
    """Monte-Carlo validation of the Bussgang and AQNM models; prints one line per check."""
    rng = np.random.default_rng([seed, 7])
    worst_out = worst_res = 0.0
    for _ in range(n_precoders):
        B = (rng.standard_normal((n_rf, n_users))
             + 1j * rng.standard_normal((n_rf, n_users))) / math.sqrt(2.0)
        chk = bussgang_check(B, 1.0, n_users, n_samples, rng)
        worst_out = max(worst_out, chk.output_z)
        worst_res = max(worst_res, chk.residual_z)
    ok = True
    for label, z in (("bussgang output covariance (arcsin law)", worst_out),
                     ("bussgang residual decorrelation", worst_res)):
        passed = z <= 3.0
        ok &= passed
        log(f"{'PASS' if passed else 'FAIL'}  {label}: max |error|/SE = {z:.3f} "
            f"over {n_precoders} precoders, {n_samples} draws")
    for bits in (2, 3, 4):
        ratio = aqnm_distortion_ratio(bits, n_samples, rng)
        passed = 0.5 <= ratio <= 2.0
        ok &= passed
        log(f"{'PASS' if passed else 'FAIL'}  aqnm distortion power b={bits}: "
            f"empirical/eps_b = {ratio:.3f} (band [0.5, 2])")
    return ok


# --- argument handling ----------------------------------------------------

def _bits_list(text: str):
    return [_parse_bits(tok.strip(), "--bits") for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handball", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment document")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--bits", type=str, help="comma separated bit depths, e.g. 1,2,4,inf")
    common.add_argument("--eta", type=float)
    common.add_argument("--strict-eq7", action="store_true", default=None,
                        help="SIQNR without the quantization-distortion term")
    common.add_argument("--jobs", type=int, help="worker processes for Monte-Carlo trials")
    common.add_argument("-q", "--quiet", action="store_true")

    sub.add_parser("sweep", parents=[common], help="Monte-Carlo spectral efficiency sweep")
    sub.add_parser("beampattern", parents=[common], help="transmit beampatterns")
    sub.add_parser("validate", parents=[common], help="parse and validate the config only")
    qc = sub.add_parser("quantcheck", help="Monte-Carlo check of the quantization models")
    qc.add_argument("--seed", type=int, default=0)
    qc.add_argument("--trials", type=int, default=50, help="random precoders")
    qc.add_argument("--samples", type=int, default=100_000)
    return parser


def _load_spec(args) -> ExperimentSpec:
    text = ""
    if args.config is not None:
        text = args.config.read_text(encoding="utf-8")
    spec = parse_spec(text)
    doc = spec.to_dict()
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.trials is not None:
        doc["trials"] = args.trials
    if args.out is not None:
        doc["output_path"] = str(args.out)
    if args.jobs is not None:
        doc["n_jobs"] = args.jobs
    if args.strict_eq7:
        doc["strict_eq7"] = True
    if args.bits is not None:
        bits = _bits_list(args.bits)
        if not bits:
            raise SpecError("--bits needs at least one value")
        if args.command == "beampattern" or len(bits) == 1:
            doc["bits"] = _fmt_bits(bits[0])
            doc["series_bits"] = [] if len(bits) == 1 else [_fmt_bits(b) for b in bits]
        else:
            doc["series_bits"] = [_fmt_bits(b) for b in bits]
    if args.command == "sweep":
        if doc.get("sweep") is None:
            raise SpecError("sweep command needs a 'sweep' section in the config")
        doc.pop("beampattern", None)
    if args.command == "beampattern":
        doc.setdefault("beampattern", dataclasses.asdict(BeampatternSpec()))
        doc["sweep"] = None
    if args.eta is not None:
        doc["eta"] = args.eta
        if "beampattern" in doc:
            doc["beampattern"]["eta"] = [args.eta]
    return spec_from_mapping(doc)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    say = (lambda msg: None) if getattr(args, "quiet", False) else (
        lambda msg: print(msg, file=sys.stderr))

    if args.command == "quantcheck":
        ok = quantcheck(args.trials, args.samples, args.seed)
        return EXIT_OK if ok else EXIT_RUNTIME

    try:
        spec = _load_spec(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.command == "validate":
        sys.stdout.write(serialize_spec(spec))
        return EXIT_OK

    try:
        record = run_experiment(spec, log=say)
    except HandballError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    say(f"wrote {len(record.results)} result(s) to {spec.output_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
