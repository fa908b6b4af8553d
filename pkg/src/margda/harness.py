"""Experiment grids over adaptation tasks, models, classifiers and seeds.

A run enumerates every ordered (source, target) pair of the configured
domains. For each pair and seed it builds the scenario split once, fits
every model on it and scores every classifier on the held-out target
rows. Results are written as a CSV of per-cell records plus a JSON
aggregate of per-(model, classifier) means.
"""

import configparser
import csv
import hashlib
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import classify, data
from .errors import ConfigError, MargdaError
from .marginalize import COUPLING_RULES
from .models import MODELS, ModelSpec, fit_model

log = logging.getLogger(__name__)

CLASSIFIERS = ("ridge", "nn", "dscm")
FORMATS = ("dense", "sparse")
CSV_HEADER = (
    "source", "target", "scenario", "model", "classifier", "seed",
    "accuracy", "iterations", "wall_time_ms", "converged",
)
RECORDS_FILE = "records.csv"
AGGREGATE_FILE = "aggregate.json"
SWEEP_PARAMS = ("lam", "gamma", "p")


@dataclass
class ExperimentConfig:
    paths: list = field(default_factory=list)
    data_format: str = "dense"
    domains: list = None
    n_features: int = None
    scenario: str = "US"
    models: list = field(default_factory=lambda: ["BL", "S1"])
    classifiers: list = field(default_factory=lambda: ["ridge"])
    spec: ModelSpec = field(default_factory=ModelSpec)
    labeled_per_class: int = 3
    seeds: list = field(default_factory=lambda: [0])
    standardize: bool = True
    coupling_rule: str = "exact"
    dscm_sigma: float = 1.0
    output: str = "results"
    record_timing: bool = True
    jobs: int = 1
    sweep: dict = field(default_factory=dict)

    def model_spec(self, model):
        return replace(self.spec, model=model, coupling_rule=self.coupling_rule)

    def resolved(self):
        out = asdict(self)
        out["spec"] = {k: v for k, v in asdict(self.spec).items() if k != "model"}
        return out


@dataclass
class ResultRecord:
    source: str
    target: str
    scenario: str
    model: str
    classifier: str
    seed: int
    accuracy: float
    iterations: int
    wall_time: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    def key(self):
        return (self.source, self.target, self.scenario, self.model, self.classifier, self.seed)


@dataclass
class CellFailure:
    source: str
    target: str
    model: str
    seed: int
    error: str


@dataclass
class RunResult:
    records: list
    failures: list
    aggregate: dict

    @property
    def ok(self):
        return not self.failures


# configuration ------------------------------------------------------------

def _split_list(value):
    return [v.strip() for v in str(value).replace(";", ",").split(",") if v.strip()]


def _bool(value):
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def parse_seeds(value):
    """``"0,1,2"`` or ``"0-4"`` ranges into a list of ints."""
    seeds = []
    for part in _split_list(value):
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


_SPEC_KEYS = {
    "p": ("p", float), "noise": ("p", float), "lambda": ("lam", float),
    "gamma": ("gamma", float), "omega": ("omega", float), "delta": ("delta", float),
    "alpha": ("alpha", float), "max_iters": ("max_iters", int),
    "rel_tol": ("rel_tol", float), "add_bias": ("add_bias", _bool),
}


def load_config(path):
    """Read an INI-style experiment file.

    Sections: ``[data]`` (paths, format, domains, n_features),
    ``[experiment]`` (scenario, models, classifiers, labeled_per_class,
    seeds, standardize, coupling_rule, dscm_sigma, output, jobs, timing),
    ``[hyperparameters]`` (p, lambda, gamma, omega, delta, alpha,
    max_iters, rel_tol, add_bias) and an optional ``[sweep]`` with
    comma-separated grids for lambda, gamma and p.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    cfg = ExperimentConfig()
    try:
        if parser.has_section("data"):
            sec = parser["data"]
            if "paths" in sec:
                cfg.paths = [os.path.normpath(os.path.join(base, p)) for p in _split_list(sec["paths"])]
            cfg.data_format = sec.get("format", cfg.data_format).strip().lower()
            if sec.get("domains"):
                cfg.domains = _split_list(sec["domains"])
            if sec.get("n_features"):
                cfg.n_features = int(sec["n_features"])
        if parser.has_section("experiment"):
            sec = parser["experiment"]
            cfg.scenario = sec.get("scenario", cfg.scenario).strip().upper()
            if "models" in sec:
                cfg.models = [m.upper() for m in _split_list(sec["models"])]
            if "classifiers" in sec:
                cfg.classifiers = [c.lower() for c in _split_list(sec["classifiers"])]
            cfg.labeled_per_class = sec.getint("labeled_per_class", cfg.labeled_per_class)
            if "seeds" in sec:
                cfg.seeds = parse_seeds(sec["seeds"])
            if "standardize" in sec:
                cfg.standardize = _bool(sec["standardize"])
            cfg.coupling_rule = sec.get("coupling_rule", cfg.coupling_rule).strip().lower()
            cfg.dscm_sigma = sec.getfloat("dscm_sigma", cfg.dscm_sigma)
            if "output" in sec:
                out = sec["output"].strip()
                cfg.output = os.path.normpath(os.path.join(base, out))
            cfg.jobs = sec.getint("jobs", cfg.jobs)
            if "timing" in sec:
                cfg.record_timing = _bool(sec["timing"])
        if parser.has_section("hyperparameters"):
            updates = {}
            for key, value in parser["hyperparameters"].items():
                if key not in _SPEC_KEYS:
                    raise ConfigError(f"unknown hyperparameter {key!r}")
                name, conv = _SPEC_KEYS[key]
                updates[name] = conv(value)
            cfg.spec = replace(cfg.spec, **updates)
        if parser.has_section("sweep"):
            for key, value in parser["sweep"].items():
                if key not in ("lambda", "gamma", "p", "noise"):
                    raise ConfigError(f"sweep supports lambda, gamma and p, not {key!r}")
                cfg.sweep[_SPEC_KEYS[key][0]] = [float(v) for v in _split_list(value)]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


# data loading ------------------------------------------------------------

def load_domains(cfg):
    """Load every configured file and split rows by their domain token."""
    if not cfg.paths:
        raise ConfigError("no dataset paths configured")
    if cfg.data_format == "dense":
        parts = [data.load_dense(p) for p in cfg.paths]
    elif cfg.data_format == "sparse":
        parts = [data.load_sparse(p, n_features=cfg.n_features) for p in cfg.paths]
        if cfg.n_features is None and len({p.n_features for p in parts}) > 1:
            width = max(p.n_features for p in parts)
            parts = [data.load_sparse(p, n_features=width) for p in cfg.paths]
    else:
        raise ConfigError(f"unknown data format {cfg.data_format!r}")
    full = data.concat(parts)
    names = cfg.domains if cfg.domains else full.domains()
    return {name: full.by_domain(name) for name in names}


def task_pairs(domains):
    """All ordered (source, target) pairs of distinct domains."""
    return list(itertools.permutations(domains, 2))


def cell_seed(seed, source, target):
    """Stable 64-bit seed for the split of one (task, seed) cell."""
    digest = hashlib.sha256(f"{seed}|{source}|{target}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# validation --------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list
    resolved: dict

    @property
    def ok(self):
        return not self.violations

    def format(self):
        lines = ["resolved configuration:"]
        for key, value in self.resolved.items():
            lines.append(f"  {key} = {value}")
        if self.violations:
            lines.append(f"{len(self.violations)} violation(s):")
            lines.extend(f"  - {v}" for v in self.violations)
        else:
            lines.append("no violations")
        return "\n".join(lines)


def validate(cfg):
    """Check files, dimensions and class coverage without fitting anything."""
    problems = []
    if not cfg.models:
        problems.append("no models configured")
    for m in cfg.models:
        if m not in MODELS:
            problems.append(f"unknown model {m!r}")
    for c in cfg.classifiers:
        if c not in CLASSIFIERS:
            problems.append(f"unknown classifier {c!r}")
    if not cfg.classifiers:
        problems.append("no classifiers configured")
    if not cfg.seeds:
        problems.append("no seeds configured")
    if cfg.scenario not in data.SCENARIOS:
        problems.append(f"unknown scenario {cfg.scenario!r}")
    if cfg.coupling_rule not in COUPLING_RULES:
        problems.append(f"unknown coupling rule {cfg.coupling_rule!r}")
    if cfg.data_format not in FORMATS:
        problems.append(f"unknown data format {cfg.data_format!r}")
    if cfg.labeled_per_class < 1:
        problems.append("labeled_per_class must be >= 1")
    if cfg.dscm_sigma <= 0:
        problems.append("dscm_sigma must be positive")
    if not cfg.paths:
        problems.append("no dataset paths configured")
    missing = [p for p in cfg.paths if not os.path.exists(p)]
    problems.extend(f"missing file: {p}" for p in missing)

    domains = {}
    if cfg.paths and not missing and cfg.data_format in FORMATS:
        try:
            domains = load_domains(cfg)
        except (MargdaError, KeyError, OSError) as exc:
            problems.append(f"cannot load data: {exc}")
    if domains:
        if len(domains) < 2:
            problems.append(f"need at least 2 domains, found {len(domains)}")
        for src, tgt in task_pairs(list(domains)):
            s, t = domains[src], domains[tgt]
            if cfg.scenario in ("SUP", "SS"):
                for cls, available in data.check_target_labels(s, t, cfg.labeled_per_class):
                    problems.append(
                        f"InsufficientTargetLabels: {src}->{tgt} class {cls} has "
                        f"{available} labeled target rows, {cfg.labeled_per_class} required"
                    )
            if not np.any(t.labels != data.UNLABELED):
                problems.append(f"{src}->{tgt}: target has no labeled rows to evaluate")
            needs_labels = [m for m in cfg.models if m.endswith("C")]
            if needs_labels and cfg.scenario == "US":
                problems.append(
                    f"NoSharedClasses: {','.join(needs_labels)} need labeled target data (scenario US)"
                )
            if "dscm" in cfg.classifiers and cfg.scenario == "US":
                absent = np.setdiff1d(data.required_classes(s, t), s.labels)
                if absent.size:
                    problems.append(f"{src}->{tgt}: source lacks class {absent[0]} required by dscm")
    # one message per distinct problem; order of first appearance
    seen = dict.fromkeys(problems)
    return ValidationReport(violations=list(seen), resolved=cfg.resolved())


# running -----------------------------------------------------------------

def _evaluate(fit, split, classifier, cfg):
    x_test = fit.denoise(split.x_test)
    if classifier == "ridge":
        pred = classify.predict_linear(x_test, fit.z_l)
    else:
        x_train = fit.denoise(split.x_labeled)
        if classifier == "nn":
            pred = classify.nn_classify(x_train, split.labeled_labels, x_test)
        else:
            pred = classify.dscm_classify(
                x_train, split.labeled_labels, split.labeled_domain_tags, x_test,
                sigma=cfg.dscm_sigma, class_count=split.class_count,
            )
    return classify.accuracy(pred, split.test_labels)


def run_cell(cfg, source_name, target_name, source, target, seed):
    """All (model, classifier) records of one task and seed."""
    split = data.build_scenario(
        source, target, cfg.scenario, cfg.labeled_per_class, cell_seed(seed, source_name, target_name)
    )
    data.audit_split(split)
    if cfg.standardize:
        split = data.standardize_split(split)
    records, failures = [], []
    for model in cfg.models:
        spec = cfg.model_spec(model)
        t0 = time.perf_counter()
        try:
            fit = fit_model(spec, split)
        except (MargdaError, np.linalg.LinAlgError) as exc:
            log.warning("%s->%s %s seed %s failed: %s", source_name, target_name, model, seed, exc)
            failures.append(CellFailure(source_name, target_name, model, seed, f"{type(exc).__name__}: {exc}"))
            continue
        fit_time = time.perf_counter() - t0
        for classifier in cfg.classifiers:
            t1 = time.perf_counter()
            try:
                acc = _evaluate(fit, split, classifier, cfg)
            except (MargdaError, np.linalg.LinAlgError) as exc:
                failures.append(
                    CellFailure(source_name, target_name, f"{model}/{classifier}", seed,
                                f"{type(exc).__name__}: {exc}")
                )
                continue
            elapsed = fit_time + time.perf_counter() - t1
            records.append(
                ResultRecord(
                    source=source_name, target=target_name, scenario=cfg.scenario,
                    model=model, classifier=classifier, seed=seed, accuracy=acc,
                    iterations=fit.iterations,
                    wall_time=elapsed if cfg.record_timing else 0.0,
                    converged=fit.converged,
                    diagnostics=fit.diagnostics,
                )
            )
    return records, failures


def _run_unit(args):
    cfg, src, tgt, s, t, seed = args
    return run_cell(cfg, src, tgt, s, t, seed)


def run(cfg, domains=None):
    """Execute the full grid; never raises for individual cell failures."""
    domains = load_domains(cfg) if domains is None else domains
    units = [
        (cfg, src, tgt, domains[src], domains[tgt], seed)
        for src, tgt in task_pairs(list(domains))
        for seed in cfg.seeds
    ]
    records, failures = [], []
    if cfg.jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = list(pool.map(_run_unit, units))
    else:
        outputs = [_run_unit(u) for u in units]
    for recs, fails in outputs:
        records.extend(recs)
        failures.extend(fails)
    records.sort(key=ResultRecord.key)
    failures.sort(key=lambda f: (f.source, f.target, f.model, f.seed))
    return RunResult(records=records, failures=failures, aggregate=aggregate(records))


def fmt(x):
    """Numbers are serialized with 6 significant digits."""
    return format(float(x), ".6g")


def aggregate(records):
    """Mean and population standard deviation of accuracy per (model, classifier).

    Computed from the 6-digit serialized accuracies so the aggregate can be
    recomputed from the CSV alone.
    """
    cells = {}
    for r in records:
        cells.setdefault((r.model, r.classifier), []).append(float(fmt(r.accuracy)))
    out = {}
    for (model, classifier), accs in sorted(cells.items()):
        arr = np.asarray(accs)
        out[f"{model}/{classifier}"] = {
            "model": model,
            "classifier": classifier,
            "mean": float(fmt(arr.mean())),
            "std": float(fmt(arr.std())),
            "n": int(arr.size),
        }
    return out


def records_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([
            r.source, r.target, r.scenario, r.model, r.classifier, r.seed,
            fmt(r.accuracy), r.iterations, fmt(r.wall_time * 1000.0),
            "true" if r.converged else "false",
        ])
    return buf.getvalue()


def emit(records, agg, path, failures=(), metadata=None):
    """Write ``records.csv`` and ``aggregate.json`` into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    csv_path = os.path.join(path, RECORDS_FILE)
    json_path = os.path.join(path, AGGREGATE_FILE)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(records_csv(records))
    doc = {
        "aggregate": agg,
        "failures": [asdict(f) for f in failures],
        "metadata": metadata or {},
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return csv_path, json_path


def read_records_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def sweep(cfg, grid, domains=None):
    """Run the grid for every combination of ``grid`` values.

    ``grid`` maps spec field names (``lam``, ``gamma``, ``p``) to value
    lists. Returns a list of ``(overrides, RunResult)``.
    """
    domains = load_domains(cfg) if domains is None else domains
    keys = [k for k in SWEEP_PARAMS if k in grid]
    results = []
    for values in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, values))
        sub = replace(cfg, spec=replace(cfg.spec, **overrides))
        results.append((overrides, run(sub, domains)))
    return results


def emit_sweep(results, path):
    os.makedirs(path, exist_ok=True)
    out = os.path.join(path, "sweep.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "gamma", "p", "model", "classifier", "mean", "std", "n", "failures"])
        for overrides, res in results:
            for cell in res.aggregate.values():
                writer.writerow([
                    *(fmt(overrides[k]) if k in overrides else "" for k in SWEEP_PARAMS),
                    cell["model"], cell["classifier"], fmt(cell["mean"]), fmt(cell["std"]),
                    cell["n"], len(res.failures),
                ])
    return out
