"""Command-line entry point: ``run``, ``baseline``, ``aggregate`` and ``synth``."""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import platform
import sys
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, baselines, coxcore, data, evolve, metrics, synth
from .multimodel import formula, risk_score

log = logging.getLogger(__name__)

METHODS = ("sr", "cx", "st")
FRONT_COLUMNS = ("method", "repetition", "split", "dims", "ci", "neg_ci", "n_expr", "on_front")
TABLE_COLUMNS = ("method", "dataset", "normalization", "k", "metric", "median", "q1", "q3")
ABSENT = "(-)"
MAX_FAILURE_FRACTION = 0.10


class ConfigError(ValueError):
    pass


class MixedSchema(ValueError):
    pass


@dataclass
class RunConfig:
    data: str
    schema: str | None = None
    time_column: str = "time"
    event_column: str = "event"
    method: str = "sr"
    normalize: bool = False
    repetitions: int = 50
    seed: int = 0
    out_dir: str = "results"
    train_fraction: float = 0.7
    cx_l1_ratio: float = 0.5
    cx_n_lambdas: int = 1000
    st_folds: int = 5
    st_max_depth: int = 25
    evolution: evolve.EvolutionConfig = field(default_factory=evolve.EvolutionConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not 1 <= self.st_max_depth <= 25:
            raise ConfigError("st_max_depth must lie in 1..25")

    # -- INI round trip -----------------------------------------------------
    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        run = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "evolution"}
        parser["run"] = {k: "" if v is None else str(v) for k, v in run.items()}
        evo = {}
        for f in dataclasses.fields(self.evolution):
            value = getattr(self.evolution, f.name)
            if f.name == "op_probs":
                evo.update({f"op.{k}": repr(v) for k, v in value.items()})
            else:
                evo[f.name] = repr(value)
        parser["evolution"] = evo
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text)
        if "run" not in parser:
            raise ConfigError("config needs a [run] section")
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in parser["run"].items():
            if key not in types or key == "evolution":
                raise ConfigError(f"unknown run option {key!r}")
            kwargs[key] = _coerce(raw, getattr(cls, key, None), key)
        if "evolution" in parser:
            kwargs["evolution"] = _evolution_from_section(parser["evolution"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


def _coerce(raw: str, default, key: str):
    if key in ("schema",):
        return raw or None
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{key} must be a boolean")
        return raw.lower() in ("true", "1", "yes")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return raw


def _evolution_from_section(section) -> evolve.EvolutionConfig:
    defaults = evolve.EvolutionConfig()
    kwargs, probs = {}, dict(defaults.op_probs)
    for key, raw in section.items():
        if key.startswith("op."):
            name = key[3:]
            if name not in probs:
                raise ConfigError(f"unknown operator {name!r}")
            probs[name] = float(raw)
        elif hasattr(defaults, key) and key != "op_probs":
            kwargs[key] = _coerce(raw, getattr(defaults, key), key)
        else:
            raise ConfigError(f"unknown evolution option {key!r}")
    try:
        return evolve.EvolutionConfig(op_probs=probs, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# helpers


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def dataset_hash(cfg: RunConfig) -> str:
    h = hashlib.sha256(Path(cfg.data).read_bytes())
    if cfg.schema:
        h.update(Path(cfg.schema).read_bytes())
    return h.hexdigest()


def repetition_seed(seed: int, rep: int, stream: int) -> int:
    """Independent stream per (repetition, purpose) derived from the base seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(rep, stream)).generate_state(1)[0])


def _versions() -> dict:
    import numba

    return {"survsr": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__}


def load_dataset(cfg: RunConfig) -> data.SurvivalDataset:
    if not Path(cfg.data).is_file():
        raise ConfigError(f"data file not found: {cfg.data}")
    if cfg.schema is not None:
        if not Path(cfg.schema).is_file():
            raise ConfigError(f"schema file not found: {cfg.schema}")
        return data.load_csv(cfg.data, schema=cfg.schema)
    return data.load_csv(cfg.data, cfg.time_column, cfg.event_column)


def _front_rows(front: metrics.ParetoFront, method: str, rep: int) -> list[list]:
    on_front = {id(p) for p in front.points}
    return [[method, rep, front.split, p.dims, repr(float(p.ci)), repr(float(p.neg_ci)),
             "" if p.n_expr is None else p.n_expr, int(id(p) in on_front)] for p in front.raw]


def write_front_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONT_COLUMNS)
        w.writerows(rows)


def _survival_grid(train: data.SurvivalDataset) -> np.ndarray:
    return np.unique(train.times[train.events])


def median_survival_curve(model, method: str, train, test) -> tuple[np.ndarray, np.ndarray]:
    """Median over test subjects of predicted S(t) on the training event-time grid."""
    grid = _survival_grid(train)
    if method == "st":
        S = np.array([sf(grid) for sf in model.survival_functions(test.features)])
    else:
        score = (lambda X: risk_score(model, X)) if method == "sr" else model.risk_score
        H0 = coxcore.breslow_baseline(score(train.features), train.times, train.events)
        S = np.exp(-np.outer(np.exp(score(test.features)), H0(grid)))
    return grid, np.median(S, axis=0)


def _model_json(model, method, column_names) -> dict:
    if method == "sr":
        return dict(model.to_json(column_names), formula=formula(model, column_names))
    return model.to_json()


# ---------------------------------------------------------------------------
# run


def fit_fronts(cfg: RunConfig, train, test, rep: int):
    """Run one method on train; returns (train front, test front)."""
    if cfg.method == "sr":
        evo_cfg = dataclasses.replace(cfg.evolution, seed=repetition_seed(cfg.seed, rep, 1))
        result = evolve.evolve(train, evo_cfg)
        return result.front("train", method="sr"), result.front("test", test, train, method="sr")
    if cfg.method == "cx":
        models = baselines.cx_candidates(train, cfg.cx_l1_ratio, cfg.cx_n_lambdas)
    else:
        search = baselines.st_search(train, range(1, cfg.st_max_depth + 1), cfg.st_folds,
                                     repetition_seed(cfg.seed, rep, 2))
        models = baselines.st_candidates(search)
    fronts = []
    for split_name, ds in (("train", train), ("test", test)):
        pts = [metrics.FrontPoint(m.dims, baselines._ci(train, ds, m.risk_score(ds.features)), m,
                                  m.dims if cfg.method == "cx" else None) for m in models]
        fronts.append(metrics.ParetoFront.from_candidates(pts, split_name, cfg.method))
    return tuple(fronts)


def run_repetition(cfg: RunConfig, ds: data.SurvivalDataset, rep: int, rep_dir: Path) -> list[Path]:
    train, test = data.split(ds, data.SplitSpec(cfg.seed, cfg.train_fraction, rep))
    if cfg.normalize:
        train, stats = data.zscore_normalize(train)
        test, _ = data.zscore_normalize(test, stats)
    front_train, front_test = fit_fronts(cfg, train, test, rep)
    rep_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for front in (front_train, front_test):
        path = rep_dir / f"front_{front.split}.csv"
        write_front_csv(path, _front_rows(front, cfg.method, rep))
        written.append(path)
    train_ci = {id(p.model): p.ci for p in front_train.raw}
    models = [{"dims": p.dims, "train_ci": train_ci.get(id(p.model)), "test_ci": p.ci,
               "on_front": any(p is q for q in front_test.points),
               "model": _model_json(p.model, cfg.method, ds.column_names)} for p in front_test.raw]
    path = rep_dir / "models.json"
    path.write_text(json.dumps(models, indent=1), encoding="utf-8")
    written.append(path)
    grid, surv = median_survival_curve(metrics.select_max(front_test).model, cfg.method, train, test)
    path = rep_dir / "survival_test.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "median_survival"])
        w.writerows([[repr(float(t)), repr(float(s))] for t, s in zip(grid, surv)])
    written.append(path)
    return written


def cmd_run(cfg: RunConfig) -> int:
    """Run all repetitions; returns the process exit code."""
    ds = load_dataset(cfg)  # config errors surface before anything is written
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    start = time.perf_counter()
    files, failures = [out / "config.ini"], []
    for rep in range(cfg.repetitions):
        try:
            files += run_repetition(cfg, ds, rep, out / f"rep_{rep:03d}")
            log.info("repetition %d done", rep)
        except Exception as exc:  # one bad repetition must not end the batch
            log.exception("repetition %d failed", rep)
            failures.append({"repetition": rep, "error": f"{type(exc).__name__}: {exc}"})
    manifest = {
        "method": cfg.method,
        "dataset": Path(cfg.data).stem,
        "dataset_hash": dataset_hash(cfg),
        "normalization": cfg.normalize,
        "n_features": ds.d,
        "config_hash": cfg.hash(),
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - start,
        "repetitions": cfg.repetitions,
        "failures": failures,
        "files": {str(p.relative_to(out)): _sha256_file(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return 1 if len(failures) > MAX_FAILURE_FRACTION * cfg.repetitions else 0


# ---------------------------------------------------------------------------
# aggregate


@dataclass
class RunResults:
    manifest: dict
    fronts: dict  # (rep, split) -> ParetoFront without models
    survival: dict  # rep -> (grid, curve)


def read_front_csv(path: Path) -> metrics.ParetoFront:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    raw = [metrics.FrontPoint(int(r["dims"]), float(r["ci"]), None,
                              int(r["n_expr"]) if r["n_expr"] else None) for r in rows]
    points = [p for p, r in zip(raw, rows) if r["on_front"] == "1"]
    split_name = rows[0]["split"] if rows else ""
    return metrics.ParetoFront(points, split_name, rows[0]["method"] if rows else "", raw)


def load_results(run_dir: str | Path) -> RunResults:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    fronts, survival = {}, {}
    for rep_dir in sorted(run_dir.glob("rep_*")):
        rep = int(rep_dir.name.split("_")[1])
        for split_name in ("train", "test"):
            path = rep_dir / f"front_{split_name}.csv"
            if path.is_file():
                fronts[rep, split_name] = read_front_csv(path)
        path = rep_dir / "survival_test.csv"
        if path.is_file():
            arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            survival[rep] = (arr[:, 0], arr[:, 1])
    return RunResults(manifest, fronts, survival)


def _k_value(k) -> float:
    return math.inf if k == "max" else int(k)


def _summary_cells(values) -> list:
    if not values:
        return [ABSENT] * 3
    s = metrics.aggregate_repetitions(values)
    return [repr(float(s.median)), repr(float(s.q1)), repr(float(s.q3))]


def aggregate(runs: list[RunResults], ks=("3", "5", "7", "max")):
    """Build (hv rows, ci rows, expression-count rows, survival rows)."""
    hashes: dict[str, str] = {}
    for run in runs:
        name, h = run.manifest["dataset"], run.manifest["dataset_hash"]
        if hashes.setdefault(name, h) != h:
            raise MixedSchema(f"result sets for dataset {name!r} were produced from different data")
    hv_rows, ci_rows, expr_rows, surv_rows = [], [], [], []
    for run in runs:
        m = run.manifest
        key = [m["method"], m["dataset"], str(m["normalization"]).lower()]
        reps = sorted(r for r, s in run.fronts if s == "test")
        hv_cfg = metrics.HVConfig(m["n_features"])
        for k in ks:
            kv = _k_value(k)
            hv = [metrics.hypervolume2d(metrics.filter_up_to_k(run.fronts[r, "test"], kv), hv_cfg) for r in reps]
            hv_rows.append(key + [k, "hv_test"] + _summary_cells(hv))
            cis = []
            for r in reps:
                front = run.fronts[r, "test"]
                pt = metrics.select_max(front) if k == "max" else metrics.select_exactly_k(front, int(k))
                if pt is not None:
                    cis.append(pt.ci)
            ci_rows.append(key + [k, "ci_test_exactly_k"] + _summary_cells(cis))
        # expression counts over the archive (train front candidates)
        counts = defaultdict(list)
        correlations = []
        for r in sorted(r for r, s in run.fronts if s == "train"):
            pts = [p for p in run.fronts[r, "train"].raw if p.n_expr is not None]
            for p in pts:
                counts[p.dims].append(p.n_expr)
            if len(pts) >= 2:
                rho = metrics.pearson([p.n_expr for p in pts], [p.dims for p in pts])
                if not math.isnan(rho):
                    correlations.append(rho)
        for dims in sorted(counts):
            expr_rows.append(key + [str(dims), "n_expr"] + _summary_cells(counts[dims]))
        expr_rows.append(key + ["all", "pearson_n_expr_dims"] + _summary_cells(correlations))
        for r in sorted(run.survival):
            grid, curve = run.survival[r]
            surv_rows += [key + [r, repr(float(t)), repr(float(s))] for t, s in zip(grid, curve)]
    return hv_rows, ci_rows, expr_rows, surv_rows


def cmd_aggregate(run_dirs, out_dir, ks=("3", "5", "7", "max")) -> dict:
    runs = [load_results(d) for d in run_dirs]
    hv_rows, ci_rows, expr_rows, surv_rows = aggregate(runs, ks)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, header, rows in (
        ("hv_up_to_k.csv", TABLE_COLUMNS, hv_rows),
        ("ci_exactly_k.csv", TABLE_COLUMNS, ci_rows),
        ("expression_counts.csv", TABLE_COLUMNS, expr_rows),
        ("survival_curves.csv", ("method", "dataset", "normalization", "repetition", "time", "median_survival"),
         surv_rows),
    ):
        path = out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths[name] = path
    return paths


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_args(p: argparse.ArgumentParser, methods) -> None:
    p.add_argument("--config", help="INI run config; flags given here override it")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--time-column")
    p.add_argument("--event-column")
    p.add_argument("--method", choices=methods)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--pop-size", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--st-max-depth", type=int)
    p.add_argument("--st-folds", type=int)
    p.add_argument("--cx-n-lambdas", type=int)
    p.add_argument("--save-config", help="write the resolved config here and exit")


def config_from_args(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = RunConfig.from_ini(path.read_text(encoding="utf-8"))
    else:
        if not args.data:
            raise ConfigError("--data or --config is required")
        cfg = RunConfig(data=args.data, method=args.method or "sr")
    updates = {}
    for name in ("data", "schema", "time_column", "event_column", "method", "normalize", "repetitions", "seed",
                 "out_dir", "train_fraction", "st_max_depth", "st_folds", "cx_n_lambdas"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    evo = {name: getattr(args, name) for name in ("pop_size", "generations", "n_jobs")
           if getattr(args, name, None) is not None}
    try:
        if evo:
            updates["evolution"] = dataclasses.replace(cfg.evolution, **evo)
        return dataclasses.replace(cfg, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survsr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_args(sub.add_parser("run", help="repeated train/test runs of one method"), METHODS)
    _add_run_args(sub.add_parser("baseline", help="run with method cx or st"), ("cx", "st"))
    agg = sub.add_parser("aggregate", help="median tables across repetitions")
    agg.add_argument("run_dirs", nargs="+")
    agg.add_argument("--out-dir", required=True)
    agg.add_argument("--k", default="3,5,7,max", help="comma-separated k values; 'max' selects the largest model")
    syn = sub.add_parser("synth", help="write a synthetic survival dataset")
    syn.add_argument("--score", choices=synth.SCORES, default="quadratic")
    syn.add_argument("--n", type=int, default=1500)
    syn.add_argument("--d", type=int, default=10)
    syn.add_argument("--censoring", type=float, default=0.3)
    syn.add_argument("--baseline-hazard", type=float, default=0.1)
    syn.add_argument("--theta", type=lambda s: tuple(float(v) for v in s.split(",")), default=(1.0, -0.75, 0.5))
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True, help="CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("run", "baseline"):
            if args.command == "baseline" and args.method is None and not args.config:
                raise ConfigError("baseline needs --method cx or st")
            cfg = config_from_args(args)
            if args.command == "baseline" and cfg.method == "sr":
                raise ConfigError("baseline runs cx or st only")
            if args.save_config:
                Path(args.save_config).write_text(cfg.to_ini(), encoding="utf-8")
                return 0
            return cmd_run(cfg)
        if args.command == "aggregate":
            ks = tuple(k.strip() for k in args.k.split(","))
            for k in ks:
                if k != "max" and not k.isdigit():
                    raise ConfigError(f"bad k value {k!r}")
            for path in cmd_aggregate(args.run_dirs, args.out_dir, ks).values():
                print(path)
            return 0
        spec = synth.SynthSpec(args.score, args.n, args.d, args.censoring, args.baseline_hazard, args.theta)
        ds, score = synth.generate(spec, args.seed)
        paths = synth.write_dataset(ds, score, args.out)
        print(f"wrote {paths['data']} (censored fraction {1 - ds.events.mean():.3f})")
        return 0
    except (ConfigError, MixedSchema, data.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
