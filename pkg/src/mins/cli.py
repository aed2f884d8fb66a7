"""``min-opt``: data generation, training, inference, active runs and reports.

Every command writes into its own run directory, starting with
``resolved-config.json`` (the full configuration with defaults applied).
Configuration comes from an optional JSON file, then the dedicated flags,
then ``--set dotted.key=value`` overrides; unknown keys are rejected all at
once. All randomness derives from the single ``seed``.

Exit codes: 0 success, 2 configuration error, 3 runtime error. Failures print
one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .active import ActiveConfig, active_loop
from .data import generate_static_dataset, load_dataset, save_dataset
from .forward import ForwardConfig, naive_forward_optimize, save_forward, train_forward
from .infer import InferenceConfig, approx_infer, contextual_policy, naive_best_y, recompute_constraints
from .invmap import GanConfig, GanTrainer, Standardizer, save_inverse_map
from .oracles import get_oracle
from .reweight import ReweightConfig, training_weights
from .rng import component_rng

MODES = ("static", "active", "greedy-ablation", "baseline-forward", "baseline-noinfer", "baseline-noreweight")
STATIC_MODES = ("static", "baseline-forward", "baseline-noinfer", "baseline-noreweight")
ACTIVE_MODES = ("active", "greedy-ablation")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, message: str, keys: Optional[List[str]] = None):
        super().__init__(message)
        self.keys = keys or []


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class DataConfig:
    n: int = 1000
    policy: str = "auto"  # auto | uniform | manifold-latent | logging
    correct_rate: float = 0.49  # logging policy only
    path: Optional[str] = None  # load instead of generating

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("data.n must be >= 1")
        if self.policy not in ("auto", "uniform", "manifold-latent", "logging"):
            raise ValueError(f"unknown data.policy {self.policy!r}")


@dataclass
class BaselineConfig:
    starts: int = 8  # naive forward ascent starts from the best records
    steps: int = 200
    step_size: float = 0.05

    def __post_init__(self):
        if self.starts < 1 or self.steps < 0 or self.step_size <= 0:
            raise ValueError("invalid baseline config")


@dataclass
class EvalConfig:
    contexts: int = 2000  # held-out contexts for contextual tasks
    policy_samples: int = 16

    def __post_init__(self):
        if self.contexts < 1 or self.policy_samples < 1:
            raise ValueError("invalid eval config")


# section name -> (dataclass, keys owned by the top-level seed)
SECTIONS = {
    "data": (DataConfig, ()),
    "gan": (GanConfig, ("seed",)),
    "forward": (ForwardConfig, ("seed",)),
    "reweight": (ReweightConfig, ()),
    "infer": (InferenceConfig, ()),
    "active": (ActiveConfig, ()),
    "baseline": (BaselineConfig, ()),
    "eval": (EvalConfig, ()),
}
TOP_LEVEL = ("oracle", "mode", "seed", "out")


@dataclass
class RunConfig:
    oracle: str = "branin"
    mode: Optional[str] = None  # None: static for train/infer, active for the active command
    seed: int = 0
    out: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    reweight: ReweightConfig = field(default_factory=ReweightConfig)
    infer: InferenceConfig = field(default_factory=InferenceConfig)
    active: ActiveConfig = field(default_factory=ActiveConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_json(self) -> dict:
        d = asdict(self)
        for sec, (_, owned) in SECTIONS.items():
            for k in owned:
                d[sec].pop(k, None)
        return json.loads(json.dumps(d, default=list))


def _coerce(value: Any, type_str: str, key: str):
    """Check/convert a JSON value against a (string) field annotation."""
    t = type_str.replace(" ", "")
    if t.startswith("Optional["):
        if value is None:
            return None
        t = t[len("Optional["):-1]
    if t == "bool":
        if isinstance(value, bool):
            return value
    elif t == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif t == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif t == "str":
        if isinstance(value, str):
            return value
    elif t.startswith("Tuple[int"):
        if isinstance(value, (list, tuple)) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return tuple(value)
    raise ConfigError(f"{key}: expected {type_str}, got {value!r}", [key])


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {p} is not a section", [dotted])
    node[parts[-1]] = value


def build_config(raw: Optional[dict] = None, overrides: Optional[Dict[str, Any]] = None,
                 sets: Optional[List[str]] = None) -> RunConfig:
    """Strictly validate ``raw`` (+ flag overrides + dotted ``--set`` items) into a RunConfig."""
    tree = json.loads(json.dumps(raw or {}))
    if not isinstance(tree, dict):
        raise ConfigError("configuration must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            tree[k] = v
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}", [item])
        key, text = item.split("=", 1)
        _set_dotted(tree, key.strip(), _parse_value(text))

    unknown, errors, bad_keys = [], [], []
    kwargs: Dict[str, Any] = {}
    for key, value in tree.items():
        if key in TOP_LEVEL:
            kwargs[key] = value
        elif key in SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"{key}: expected an object")
                bad_keys.append(key)
                continue
            cls, owned = SECTIONS[key]
            fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in owned}
            sec_kwargs = {}
            for sk, sv in value.items():
                if sk not in fields:
                    unknown.append(f"{key}.{sk}")
                    continue
                try:
                    sec_kwargs[sk] = _coerce(sv, str(fields[sk].type), f"{key}.{sk}")
                except ConfigError as exc:
                    errors.append(str(exc))
                    bad_keys.extend(exc.keys)
            kwargs[key] = (cls, sec_kwargs)
        else:
            unknown.append(key)
    if unknown:
        errors.insert(0, "unknown configuration keys: " + ", ".join(sorted(unknown)))
        bad_keys = sorted(unknown) + bad_keys
    for key, typ in (("oracle", "str"), ("mode", "Optional[str]"), ("seed", "int"), ("out", "Optional[str]")):
        if key in kwargs:
            try:
                kwargs[key] = _coerce(kwargs[key], typ, key)
            except ConfigError as exc:
                errors.append(str(exc))
                bad_keys.extend(exc.keys)
                kwargs.pop(key)
    if kwargs.get("mode") is not None and kwargs["mode"] not in MODES:
        errors.append(f"mode: expected one of {MODES}, got {kwargs['mode']!r}")
        bad_keys.append("mode")
    seed = kwargs.get("seed", 0)
    built = {}
    for sec, (cls, owned) in SECTIONS.items():
        cls_, sec_kwargs = kwargs.get(sec, (cls, {}))
        if "seed" in owned:
            sec_kwargs = {**sec_kwargs, "seed": seed}
        try:
            built[sec] = cls(**sec_kwargs)
        except (ValueError, TypeError) as exc:
            errors.append(f"{sec}: {exc}")
            bad_keys.append(sec)
    if errors:
        raise ConfigError("; ".join(errors), bad_keys)
    top = {k: kwargs[k] for k in TOP_LEVEL if k in kwargs}
    return RunConfig(**top, **built)


def load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", ["--config"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}", ["--config"]) from exc


# ---------------------------------------------------------------------------
# run directories and shared pieces
# ---------------------------------------------------------------------------


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in name)


def prepare_run_dir(cfg: RunConfig, command: str, overwrite: bool) -> Path:
    out = Path(cfg.out or f"runs/{command}-{_slug(cfg.oracle)}-{cfg.mode}-seed{cfg.seed}")
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not overwrite:
            raise ConfigError(f"run directory {out} already exists; pass --overwrite or choose another --out",
                              ["--out"])
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)
    cfg.out = str(out)
    (out / "resolved-config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve_oracle(cfg: RunConfig):
    try:
        return get_oracle(cfg.oracle)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"oracle: {exc}", ["oracle"]) from exc


def _dataset(cfg: RunConfig, oracle):
    if cfg.data.path is not None:
        data = load_dataset(cfg.data.path)
        if data.space != oracle.space:
            raise ConfigError("data.path holds a dataset over a different input space", ["data.path"])
        return data
    policy = cfg.data.policy
    kw = {}
    if policy == "auto":
        if hasattr(oracle, "sample_on_manifold"):
            policy = "manifold-latent"
        elif hasattr(oracle, "logging_policy"):
            policy = "logging"
        else:
            policy = "uniform"
    if policy == "logging":
        kw["correct_rate"] = cfg.data.correct_rate
    return generate_static_dataset(oracle, cfg.data.n, policy, component_rng(cfg.seed, "data"), **kw)


def _write_trace(path: Path, trace) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "d_loss", "g_loss", "d_real", "d_fake"])
        for r in trace:
            w.writerow([r.step, repr(r.d_loss), repr(r.g_loss), repr(r.d_real), repr(r.d_fake)])


def _train_models(cfg: RunConfig, data, out: Path, need_gan: bool = True):
    """Fit the inverse map (weights per mode) and the forward model; save both."""
    y_std = Standardizer.fit(data.y)
    inv = None
    if need_gan:
        rcfg = cfg.reweight
        if cfg.mode == "baseline-noreweight":
            rcfg = dataclasses.replace(rcfg, enabled=False)
        trainer = GanTrainer.create(data, cfg.gan, y_std)
        trainer.train(data, training_weights(data, rcfg), cfg.gan.steps)
        inv = trainer.inverse_map
        save_inverse_map(out / "inverse", inv, trainer.discriminator)
        _write_trace(out / "gan_trace.csv", trainer.trace)
    fwd, mse = train_forward(data, cfg.forward, y_std=y_std)
    save_forward(out / "forward", fwd)
    _write_json(out / "forward_metrics.json", {"val_mse": mse, "n": len(data)})
    return inv, fwd


def _score(oracle, x, c=None) -> float:
    X = np.atleast_2d(x)
    return float(np.asarray(oracle.evaluate(X, c) if c is not None else oracle.evaluate(X))[0])


def _task_diagnostics(oracle, data, x) -> dict:
    extra = {}
    if hasattr(oracle, "manifold_distance"):
        dist = oracle.manifold_distance(data.X)
        extra["manifold_distance"] = float(oracle.manifold_distance(np.atleast_2d(x))[0])
        extra["data_manifold_distance_p95"] = float(np.percentile(dist, 95))
        extra["data_manifold_distance_p99"] = float(np.percentile(dist, 99))
    if hasattr(oracle, "rank_fraction"):
        extra["rank_fraction"] = float(oracle.rank_fraction(np.atleast_2d(x))[0])
    return extra


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, out: Path) -> dict:
    oracle = _resolve_oracle(cfg)
    data = _dataset(cfg, oracle)
    save_dataset(data, out / "dataset.jsonl")
    return {"records": len(data), "y_max": float(data.y.max())}


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    oracle = _resolve_oracle(cfg)
    data = _dataset(cfg, oracle)
    save_dataset(data, out / "dataset.jsonl")
    _train_models(cfg, data, out, need_gan=cfg.mode != "baseline-forward")
    return {"records": len(data)}


def _infer_contextual(cfg, oracle, data, inv, fwd) -> dict:
    C = oracle.sample_contexts(cfg.eval.contexts, component_rng(cfg.seed, "eval-contexts"))
    if cfg.mode == "baseline-forward":
        arms = np.arange(oracle.space.alphabet)
        preds = np.stack([fwd.predict(np.full((len(C), 1), a), C) for a in arms], axis=1)
        X = arms[np.argmax(preds, axis=1)][:, None]
    else:
        X = contextual_policy(inv, C, None, cfg.eval.policy_samples, component_rng(cfg.seed, "policy"))
    rate = float(np.mean(oracle.evaluate(X, C)))
    bayes = oracle.bayes_rate()
    return {"correct_rate": rate, "bayes_rate": bayes, "fraction_of_bayes": rate / bayes,
            "contexts": len(C), "logged_rate": float(data.y.mean())}


def cmd_infer(cfg: RunConfig, out: Path) -> dict:
    oracle = _resolve_oracle(cfg)
    data = _dataset(cfg, oracle)
    save_dataset(data, out / "dataset.jsonl")
    inv, fwd = _train_models(cfg, data, out, need_gan=cfg.mode != "baseline-forward")
    if oracle.contextual:
        verdict = _infer_contextual(cfg, oracle, data, inv, fwd)
        verdict["mode"] = cfg.mode
        _write_json(out / "verdict.json", verdict)
        return verdict
    verdict: Dict[str, Any] = {"mode": cfg.mode}
    if cfg.mode in ("static", "baseline-noreweight"):
        res = approx_infer(inv, fwd, cfg.infer, rng=component_rng(cfg.seed, "infer"))
        (out / "inference.json").write_text(res.dumps() + "\n")
        check = recompute_constraints(res, inv, fwd)
        x = res.x_star
        verdict.update(feasible=res.feasible, recomputed_feasible=bool(check["feasible"]),
                       prediction=res.prediction, y_star=res.y_star)
    elif cfg.mode == "baseline-noinfer":
        x = naive_best_y(data, inv, 1, component_rng(cfg.seed, "noinfer"))[0]
    else:
        if data.space.kind != "continuous":
            raise ConfigError("baseline-forward needs a continuous input space", ["mode"])
        k = min(cfg.baseline.starts, len(data))
        starts = data.X[np.argsort(-data.y, kind="stable")[:k]]
        cand = naive_forward_optimize(fwd, data.space, starts, cfg.baseline.steps, cfg.baseline.step_size)
        x = cand[int(np.argmax(fwd.predict(cand)))]
    score = _score(oracle, x)
    verdict.update(x=np.asarray(x).tolist(), score=score, raw_score=float(oracle.to_raw(score)),
                   dataset_max=float(data.y.max()), beats_dataset=bool(score > data.y.max()),
                   **_task_diagnostics(oracle, data, x))
    _write_json(out / "verdict.json", verdict)
    return verdict


def cmd_active(cfg: RunConfig, out: Path) -> dict:
    oracle = _resolve_oracle(cfg)
    if oracle.contextual:
        raise ConfigError("active runs need a non-contextual oracle", ["oracle"])
    data = _dataset(cfg, oracle)
    save_dataset(data, out / "initial-dataset.jsonl")
    res = active_loop(oracle, data, cfg.gan, cfg.active, cfg.reweight, cfg.forward, cfg.infer,
                      seed=cfg.seed, history_path=out / "history.csv", greedy=cfg.mode == "greedy-ablation")
    (out / "inference.json").write_text(res.inference.dumps() + "\n")
    h = res.history
    summary = {
        "mode": cfg.mode, "iterations": len(h), "initial_best": h.initial_best,
        "best_so_far": h.best_so_far[-1], "best_so_far_raw": float(oracle.to_raw(h.best_so_far[-1])),
        "query_best": h.query_best, "query_best_raw": float(oracle.to_raw(h.query_best)),
        "cum_regret": h.cum_regret[-1], "final_score": res.final_score,
        "final_score_raw": float(oracle.to_raw(res.final_score)), "final_feasible": res.inference.feasible,
        "oracle_failures": res.failures,
    }
    _write_json(out / "summary.json", summary)
    return summary


def _read_history(path: Path) -> np.ndarray:
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["best_so_far"]) for r in rows])


def cmd_report(run_dirs: List[str], out: Path) -> dict:
    """Median and IQR of best-so-far per iteration across runs, plus final-score summaries."""
    curves, verdicts, used = [], [], []
    for d in run_dirs:
        p = Path(d)
        if (p / "history.csv").exists():
            curves.append(_read_history(p / "history.csv"))
            used.append(str(p))
        elif (p / "verdict.json").exists():
            verdicts.append(json.loads((p / "verdict.json").read_text()))
            used.append(str(p))
        else:
            raise ConfigError(f"{d} is not a run directory with history.csv or verdict.json", [d])
    summary: Dict[str, Any] = {"runs": used}
    if curves:
        T = min(len(c) for c in curves)
        M = np.stack([c[:T] for c in curves])
        q1, med, q3 = np.percentile(M, [25, 50, 75], axis=0)
        with (out / "report.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "n_runs", "median_best_so_far", "q1", "q3", "iqr"])
            for t in range(T):
                w.writerow([t, len(curves), repr(float(med[t])), repr(float(q1[t])), repr(float(q3[t])),
                            repr(float(q3[t] - q1[t]))])
        summary["final_best_so_far"] = {"median": float(med[-1]), "q1": float(q1[-1]), "q3": float(q3[-1]),
                                        "iqr": float(q3[-1] - q1[-1]), "iterations": int(T)}
    if verdicts:
        # one summary per mode, so ablations can be compared side by side
        by_mode: Dict[str, List[float]] = {}
        for v in verdicts:
            key = "score" if "score" in v else "correct_rate"
            by_mode.setdefault(f"{v.get('mode', 'static')}:{key}", []).append(v[key])
        summary["static"] = {}
        for name, vals in sorted(by_mode.items()):
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            summary["static"][name] = {"median": float(med), "q1": float(q1), "q3": float(q3),
                                       "iqr": float(q3 - q1), "n_runs": len(vals)}
    _write_json(out / "report.json", summary)
    return summary


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of printing usage and exiting, so errors stay one JSON line."""

    def error(self, message):
        raise _ArgError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="min-opt", description="Model inversion networks for black-box optimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("gen-data", "generate and save a static dataset"),
                           ("train", "train the inverse map and forward model"),
                           ("infer", "train, then extract and score an optimized input"),
                           ("active", "run active data collection")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--oracle", help="oracle name, e.g. branin or seq:L8A4:seed3")
        s.add_argument("--mode", choices=MODES)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="run directory (must not exist unless --overwrite)")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, e.g. gan.steps=500 (repeatable)")
        s.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
    r = sub.add_parser("report", help="aggregate several run directories")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--overwrite", action="store_true")
    return p


def _fail(kind: str, message: str, keys=None, code: int = EXIT_RUNTIME) -> int:
    line = {"status": "error", "kind": kind, "message": message}
    if keys:
        line["keys"] = keys
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    return code


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "active": cmd_active}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        return _fail("config", str(exc), code=EXIT_CONFIG)
    try:
        if args.command == "report":
            out = Path(args.out)
            if out.exists() and any(out.iterdir()) and not args.overwrite:
                raise ConfigError(f"output directory {out} already exists; pass --overwrite", ["--out"])
            if out.exists() and args.overwrite:
                shutil.rmtree(out)
            out.mkdir(parents=True, exist_ok=True)
            result = cmd_report(args.runs, out)
        else:
            raw = load_config_file(args.config)
            cfg = build_config(raw, {"oracle": args.oracle, "mode": args.mode, "seed": args.seed, "out": args.out},
                               args.set)
            if cfg.mode is None:
                cfg.mode = "active" if args.command == "active" else "static"
            if args.command == "active" and cfg.mode not in ACTIVE_MODES:
                raise ConfigError(f"the active command needs mode in {ACTIVE_MODES}, got {cfg.mode!r}", ["mode"])
            if args.command in ("train", "infer") and cfg.mode not in STATIC_MODES:
                raise ConfigError(f"{args.command} needs mode in {STATIC_MODES}, got {cfg.mode!r}", ["mode"])
            _resolve_oracle(cfg)
            out = prepare_run_dir(cfg, args.command, args.overwrite)
            result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail("config", str(exc), exc.keys, EXIT_CONFIG)
    except Exception as exc:  # surfaced as a one-line machine-readable error
        return _fail("runtime", f"{type(exc).__name__}: {exc}")
    print(json.dumps({"status": "ok", "command": args.command, "result": result}, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
