"""Command-line front end: ``rootcf {simulate,extract,fit,attribute,verify,bench}``.

Each run reads an optional TOML config; command-line flags override file
values. Relative paths in the config resolve against the config file's
directory. Every JSON output carries a ``provenance`` block with the hash of
the resolved configuration and the seed.

Exit codes: 0 success, 2 configuration or input error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .attribution import EXACT_THRESHOLD, Transform, attribute
from .bench import PipelineConfig, ScenarioConfig, figure1_scenario, generate_scenario, run_bench, run_detection
from .counterfactual import verify_model
from .diagnosis import DiagnosisModel, Sampling, fit_logistic
from .errors import ConfigError, RootCauseError, StructuralError
from .extraction import ExtractionConfig, extract
from .io import (config_hash, graph_from_dict, load_config, read_csv, read_json, write_csv, write_json,
                 write_jsonl)
from .scm import Scm, sample

log = logging.getLogger("rootcf")

COMMANDS = ("simulate", "extract", "fit", "attribute", "verify", "bench")
EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE = 0, 2, 3
PATH_KEYS = ("scm", "data", "graph", "errors", "model")


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    threads: int = 1
    output: Path = Path(".")
    transform: Optional[str] = None
    estimator: str = "exact"
    permutations: int = 64
    paths: dict = field(default_factory=dict)
    section: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def path(self, key: str) -> Path:
        if key not in self.paths:
            raise ConfigError(f"the {self.command} command needs paths.{key} (or --{key})")
        p = self.paths[key]
        if not p.exists():
            raise ConfigError(f"{key} file not found: {p}")
        return p

    def provenance(self) -> dict:
        return {"command": self.command, "config_hash": config_hash(self.raw), "seed": self.seed,
                "version": __version__}

    def workers(self) -> int:
        if self.threads == 0:
            return os.cpu_count() or 1
        return self.threads


def _parse_estimator(text: str):
    if text == "exact":
        return "exact", 64
    if text.startswith("sampled:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad estimator {text!r}; expected exact or sampled:N") from None
        if n < 2:
            raise ConfigError("sampled estimator needs at least 2 permutations")
        return "sampled", n
    raise ConfigError(f"bad estimator {text!r}; expected exact or sampled:N")


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge the config file with flag overrides into a :class:`RunConfig`."""
    file_cfg = load_config(args.config) if args.config else {}
    base = Path(args.config).resolve().parent if args.config else Path.cwd()
    raw = {k: v for k, v in file_cfg.items() if k not in ("output", "threads")}
    raw["paths"] = dict(file_cfg.get("paths", {}))
    for key in ("seed", "transform", "estimator"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    for key in PATH_KEYS:
        if getattr(args, key) is not None:
            raw["paths"][key] = getattr(args, key)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    transform = raw.get("transform")
    if transform is not None and transform not in ("identity", "log", "logit"):
        raise ConfigError(f"unknown transform {transform!r}")
    estimator, perms = _parse_estimator(str(raw.get("estimator", "exact")))
    threads = args.threads if args.threads is not None else file_cfg.get("threads", 1)
    if not isinstance(threads, int) or threads < 0:
        raise ConfigError("threads must be a non-negative integer")
    output = args.output if args.output is not None else file_cfg.get("output", ".")
    output = Path(output) if args.output is not None else base / output
    paths = {}
    for key, value in raw["paths"].items():
        p = Path(value)
        paths[key] = p if p.is_absolute() or (key in vars(args) and getattr(args, key) is not None) else base / p
    section = raw.get(args.command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{args.command}] must be a table")
    return RunConfig(args.command, seed, threads, output, transform, estimator, perms, paths, dict(section), raw)


def _pick(section: dict, cls, allowed=None):
    names = {f.name for f in fields(cls)}
    if allowed is not None:
        names &= set(allowed)
    kwargs = {}
    for k, v in section.items():
        if k in names:
            kwargs[k] = tuple(v) if isinstance(v, list) else v
    return kwargs


def _unknown(section: dict, known):
    extra = sorted(set(section) - set(known))
    if extra:
        raise ConfigError(f"unknown option(s) {extra}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(rc: RunConfig) -> list:
    _unknown(rc.section, ("n",))
    scm = _load_scm(rc.path("scm"))
    n = rc.section.get("n", 1000)
    if not isinstance(n, int) or n < 1:
        raise ConfigError("simulate.n must be a positive integer")
    ds = sample(scm, n, rc.seed)
    g = scm.graph
    names = [g.name(v) for v in scm.coords]
    label = g.name(g.diagnosis_index) if scm.has_label else "D"
    rc.output.mkdir(parents=True, exist_ok=True)
    data_path, err_path = rc.output / "data.csv", rc.output / "errors.csv"
    write_csv(data_path, names + [label], [*ds.x.T, ds.d])
    write_csv(err_path, names, list(ds.e.T))
    manifest = rc.output / "simulate.json"
    write_json(manifest, {"rows": n, "variables": names, "diagnosis": label,
                          "files": ["data.csv", "errors.csv"], "provenance": rc.provenance()})
    return [data_path, err_path, manifest]


def _load_scm(path) -> Scm:
    try:
        return Scm.from_dict(read_json(path))
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed model file ({exc!r})") from None


def _columns(header, data, names, where):
    missing = [c for c in names if c not in header]
    if missing:
        raise ConfigError(f"{where} lacks column(s) {missing}")
    return data[:, [header.index(c) for c in names]]


def cmd_extract(rc: RunConfig) -> list:
    _unknown(rc.section, [f.name for f in fields(ExtractionConfig)])
    graph_key = "graph" if "graph" in rc.paths else "scm"
    try:
        graph = graph_from_dict(read_json(rc.path(graph_key)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed graph file: {exc}") from None
    header, data = read_csv(rc.path("data"))
    coords = [v for v in range(graph.n) if v != graph.diagnosis_index]
    names = [graph.name(v) for v in coords]
    x = _columns(header, data, names, "data file")
    cfg = ExtractionConfig(**_pick(rc.section, ExtractionConfig))
    result = extract(x, graph, cfg)
    rc.output.mkdir(parents=True, exist_ok=True)
    columns = list(result.e_hat.T)
    out_header = list(names)
    label = graph.name(graph.diagnosis_index) if graph.diagnosis_index is not None else None
    if label is not None and label in header:
        out_header.append(label)
        columns.append(data[:, header.index(label)])
    e_path = rc.output / "e_hat.csv"
    write_csv(e_path, out_header, columns)
    side = rc.output / "extract.json"
    write_json(side, {"variables": names, "diagnostics": result.diagnostics, "provenance": rc.provenance()})
    return [e_path, side]


def cmd_fit(rc: RunConfig) -> list:
    known = ("l2", "max_iter", "tol", "background_size", "label")
    _unknown(rc.section, known)
    header, data = read_csv(rc.path("errors"))
    label = rc.section.get("label", "D")
    if label not in header:
        raise ConfigError(f"label column {label!r} not in the error file")
    names = [h for h in header if h != label]
    d = data[:, header.index(label)]
    if not np.all(np.isin(d, (0.0, 1.0))):
        raise ConfigError("labels must be 0 or 1")
    opts = {k: rc.section[k] for k in known[:-1] if k in rc.section}
    model = fit_logistic(_columns(header, data, names, "error file"), d.astype(int), seed=rc.seed, **opts)
    rc.output.mkdir(parents=True, exist_ok=True)
    path = rc.output / "model.json"
    write_json(path, {**model.to_dict(), "coordinates": names, "label": label, "provenance": rc.provenance()})
    return [path]


def cmd_attribute(rc: RunConfig) -> list:
    _unknown(rc.section, ("tau", "sampling", "m"))
    model_doc = read_json(rc.path("model"))
    try:
        model = DiagnosisModel.from_dict(model_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model file: {exc}") from None
    names = model_doc.get("coordinates")
    if not names:
        names = ([model.scm.graph.name(v) for v in model.scm.coords] if model.scm is not None
                 else [f"E{i + 1}" for i in range(model.n_coords)])
    header, data = read_csv(rc.path("errors"))
    e = _columns(header, data, names, "error file")
    if rc.estimator == "exact" and model.n_coords > EXACT_THRESHOLD:
        raise ConfigError(f"exact attribution is limited to {EXACT_THRESHOLD} coordinates; use --estimator sampled:N")
    m = Transform(rc.transform or "identity")
    mode = rc.section.get("sampling", "background")
    try:
        sampling = Sampling(mode, int(rc.section.get("m", 10000)), rc.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    tau = float(rc.section.get("tau", 0.0))
    prov = rc.provenance()

    def one(i):
        res = attribute(model, e[i], m, rc.estimator, rc.permutations, rc.seed + i, sampling, patient_id=str(i))
        return {**res.to_dict(names, tau), "provenance": prov}

    workers = rc.workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            lines = list(pool.map(one, range(len(e))))
    else:
        lines = [one(i) for i in range(len(e))]
    rc.output.mkdir(parents=True, exist_ok=True)
    path = rc.output / "attributions.jsonl"
    write_jsonl(path, lines)
    return [path]


def cmd_verify(rc: RunConfig) -> list:
    _unknown(rc.section, ("tolerance",))
    scm = _load_scm(rc.path("scm"))
    if not scm.is_discrete:
        raise ConfigError("verify needs a model with discrete error distributions")
    report = verify_model(scm, float(rc.section.get("tolerance", 1e-12)))
    rc.output.mkdir(parents=True, exist_ok=True)
    path = rc.output / "verify.json"
    write_json(path, {**report, "provenance": rc.provenance()})
    log.info("verify pass=%s max_abs_diff=%.3e", report["pass"], report["max_abs_diff"])
    return [path]


BENCH_OPTIONS = ("scenario", "repeats", "per_patient_csv", "extraction")


def cmd_bench(rc: RunConfig) -> list:
    sec = rc.section
    scen_fields = [f.name for f in fields(ScenarioConfig) if f.name != "seed"]
    pipe_fields = [f.name for f in fields(PipelineConfig) if f.name not in ("extraction", "transform", "estimator",
                                                                              "permutations")]
    _unknown(sec, list(BENCH_OPTIONS) + scen_fields + pipe_fields)
    ext = sec.get("extraction")
    pipeline = PipelineConfig(
        extraction=None if ext is None else ExtractionConfig(**_pick(ext, ExtractionConfig)),
        transform=rc.transform or "logit", estimator=rc.estimator, permutations=rc.permutations,
        **_pick(sec, PipelineConfig, pipe_fields))
    kind = sec.get("scenario", "random")
    repeats = int(sec.get("repeats", 1))
    if kind == "figure1":
        if repeats != 1:
            raise ConfigError("the figure1 scenario runs a single repetition")
        opts = {k: sec[k] for k in ("n_train", "n_patients", "magnitude", "noise_sd") if k in sec}
        report = run_detection(figure1_scenario(seed=rc.seed, **opts), pipeline)
        reports, summary = [report], {"repeats": 1, "top1_estimated_mean": report.estimated.top1,
                                      "top1_oracle_mean": report.oracle.top1}
    elif kind == "random":
        cfg = ScenarioConfig(seed=rc.seed, **_pick(sec, ScenarioConfig, scen_fields))
        out = run_bench(cfg, pipeline, repeats, rc.workers())
        reports, summary = out["reports"], out["summary"]
    else:
        raise ConfigError(f"unknown scenario {kind!r}")
    rc.output.mkdir(parents=True, exist_ok=True)
    path = rc.output / "bench.json"
    write_json(path, {"scenario": kind, "summary": summary, "reports": [r.to_dict() for r in reports],
                      "provenance": rc.provenance()})
    written = [path]
    if sec.get("per_patient_csv", True):
        csv_path = rc.output / "bench_patients.csv"
        rows = [(k, r["patient_id"], r["target"], j, r["s_estimated"][j], r["s_oracle"][j])
                for k, rep in enumerate(reports) for r in rep.per_patient for j in range(len(r["s_oracle"]))]
        cols = list(zip(*rows)) if rows else [[] for _ in range(6)]
        write_csv(csv_path, ["repeat", "patient", "target", "coordinate", "s_estimated", "s_oracle"], cols)
        written.append(csv_path)
    log.info("bench top1 estimated=%.3f oracle=%.3f", summary["top1_estimated_mean"], summary["top1_oracle_mean"])
    return written


HANDLERS = {
    "simulate": cmd_simulate,
    "extract": cmd_extract,
    "fit": cmd_fit,
    "attribute": cmd_attribute,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="global seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, help="worker cap, 0 = all cores")
    common.add_argument("--output", help="output directory")
    common.add_argument("--transform", choices=("identity", "log", "logit"))
    common.add_argument("--estimator", help="exact or sampled:PERMUTATIONS")
    for key in PATH_KEYS:
        common.add_argument(f"--{key}", help=f"override paths.{key}")
    parser = argparse.ArgumentParser(prog="rootcf", description="Patient-specific root causes of disease.")
    parser.add_argument("--version", action="version", version=f"rootcf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "sample data and errors from a structural model",
        "extract": "recover error values from observed data and a graph",
        "fit": "fit a logistic model of the diagnosis on error values",
        "attribute": "per-patient Shapley root-cause scores",
        "verify": "check the counterfactual identities on a discrete model",
        "bench": "synthetic detection benchmark",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    def __init__(self):
        logging.Handler.__init__(self)

    @property
    def stream(self):
        return sys.stderr


def _setup_logging():
    if not log.handlers:
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("level=%(levelname)s logger=%(name)s msg=%(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        log.propagate = False


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        rc = resolve(args)
        written = HANDLERS[args.command](rc)
    except (ConfigError, StructuralError) as exc:
        log.error("command=%s error=%s", args.command, exc)
        return EXIT_CONFIG
    except (RootCauseError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("command=%s pipeline failure: %s", args.command, exc)
        return EXIT_PIPELINE
    except Exception as exc:  # noqa: BLE001 - last line of defence, reported not raised
        log.error("command=%s internal error: %r", args.command, exc)
        return EXIT_PIPELINE
    for p in written:
        log.info("command=%s wrote %s", args.command, p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
