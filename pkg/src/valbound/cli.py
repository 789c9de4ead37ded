"""Command-line experiment runner.

    valbound solve|bounds|clip|compose-check|dqn|compare --config <path> [--output <dir>] [--seeds a,b,c]

Configs are JSON documents validated before anything is written. Every run
writes ``manifest.json`` (before the work starts and again when it ends) and
per-seed CSV/JSON artifacts under the output directory. Exit status is 0 on
success, 2 for an invalid config and 1 for a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from valbound import __version__
from valbound.bounds import bounds_from_delta, delta_soft, delta_standard
from valbound.clipping import METHODS, ClipConfig, clipped_value_iteration, write_trace_csv
from valbound.composition import CompositionSpec, verify_exact_composition
from valbound.dqn import DQN_METHODS, LOG_COLUMNS, DqnConfig, TrainLog, dqn_train, save_checkpoint
from valbound.envs import DEFAULT_MAZE_PATH, MazeSpec, MountainCarParams, load_maze, maze_to_mdp, random_maze_rows
from valbound.envs.random_mdp import random_mdp
from valbound.mdp import (
    STANDARD,
    RegularizationSpec,
    TabularMdp,
    dumps_json,
    hard_state_value,
    soft_state_value,
    solve,
)
from valbound.rng import derive_rng

TASKS = ("solve", "bounds", "clip", "compose-check", "dqn", "compare")

_POS = {"type": "number", "exclusiveMinimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_GAMMA = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}

MDP_SCHEMAS = {
    "maze": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "maze"},
            "path": {"type": "string"},
            "rows": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "slip": {"type": "array", "items": _PROB, "minItems": 3, "maxItems": 3},
            "step_penalty": {"type": "number"},
            "goal_reward": {"type": "number"},
            "gamma": _GAMMA,
            "goal_mode": {"enum": ["absorbing", "continuing"]},
            "random_layout": {"type": "boolean"},
        },
    },
    "random": {
        "type": "object",
        "additionalProperties": False,
        "required": ["num_states", "num_actions", "gamma"],
        "properties": {
            "kind": {"const": "random"},
            "num_states": {"type": "integer", "minimum": 1},
            "num_actions": {"type": "integer", "minimum": 1},
            "gamma": _GAMMA,
            "num_absorbing": {"type": "integer", "minimum": 0},
        },
    },
    "inline": {
        "type": "object",
        "additionalProperties": False,
        "required": ["num_states", "num_actions", "gamma", "reward", "transition"],
        "properties": {
            "kind": {"const": "inline"},
            "num_states": {"type": "integer", "minimum": 1},
            "num_actions": {"type": "integer", "minimum": 1},
            "gamma": _GAMMA,
            "absorbing": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "reward": {"type": "array"},
            "transition": {"type": "array"},
        },
    },
    "file": {
        "type": "object",
        "additionalProperties": False,
        "required": ["path"],
        "properties": {"kind": {"const": "file"}, "path": {"type": "string"}},
    },
}

_INLINE_TASK = MDP_SCHEMAS["inline"]

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "task": {"enum": list(TASKS)},
        "mdp": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": sorted(MDP_SCHEMAS)}},
        },
        "reg": {
            "type": "object",
            "additionalProperties": False,
            "required": ["beta"],
            "properties": {"beta": {"oneOf": [_POS, {"const": "standard"}]}},
        },
        "clip": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": list(METHODS)},
                "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
                "eta": _POS,
            },
        },
        "estimate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zeros", "random", "solution"]},
                "scale": {"type": "number", "minimum": 0},
            },
        },
        "compose": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tasks", "weights", "tau"],
            "properties": {
                "tasks": {"type": "array", "minItems": 1, "items": _INLINE_TASK},
                "weights": {"type": "array", "minItems": 1, "items": _POS},
                "tau": _POS,
                "rule": {"enum": ["logsumexp_weighted", "max", "mean", "identity"]},
            },
        },
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_steps": {"type": "integer", "minimum": 1},
                "goal_position": {"type": "number"},
                "force": _POS,
                "gravity": _POS,
            },
        },
        "dqn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": _POS,
                "batch_size": {"type": "integer", "minimum": 1},
                "buffer_size": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "gradient_steps": {"type": "integer", "minimum": 1},
                "learning_starts": {"type": "integer", "minimum": 0},
                "polyak": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "target_update_interval": {"type": "integer", "minimum": 1},
                "train_freq": {"type": "integer", "minimum": 1},
                "total_steps": {"type": "integer", "minimum": 1},
                "eps_start": _PROB,
                "eps_end": _PROB,
                "eps_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "method": {"enum": list(DQN_METHODS)},
                "methods": {"type": "array", "items": {"enum": list(DQN_METHODS)}, "minItems": 1},
                "eta": _POS,
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "eval_interval": {"type": "integer", "minimum": 1},
                "eval_episodes": {"type": "integer", "minimum": 1},
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {"kind": {"enum": ["maze", "dqn"]}},
        },
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output_dir": {"type": "string"},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "solve": _POS,
                "residual": _POS,
                "compose": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
    },
}

# sections each task needs
REQUIRED = {
    "solve": ("mdp", "reg"),
    "bounds": ("mdp", "reg"),
    "clip": ("mdp", "reg"),
    "compose-check": ("compose",),
    "dqn": (),
    "compare": ("compare",),
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def _path(prefix, error):
    parts = [str(p) for p in error.absolute_path]
    return ".".join([prefix, *parts] if prefix else parts)


def _check(schema, doc, prefix=""):
    validator = jsonschema.Draft202012Validator(schema)
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise ConfigError(_path(prefix, err), err.message)


def validate_config(doc, task):
    """Schema and cross-field checks. Raises ConfigError naming the field."""
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    _check(CONFIG_SCHEMA, doc)
    if "task" in doc and doc["task"] != task:
        raise ConfigError("task", f"config is for {doc['task']!r}, not {task!r}")
    for key in REQUIRED[task]:
        if key not in doc:
            raise ConfigError(key, "required section is missing")
    if "mdp" in doc:
        _check(MDP_SCHEMAS[doc["mdp"]["kind"]], doc["mdp"], "mdp")
        mdp = doc["mdp"]
        if mdp["kind"] == "maze" and "slip" in mdp and abs(sum(mdp["slip"]) - 1.0) > 1e-12:
            raise ConfigError("mdp.slip", "probabilities must sum to 1")
    if task == "compose-check":
        comp = doc["compose"]
        if len(comp["weights"]) != len(comp["tasks"]):
            raise ConfigError("compose.weights", "one weight per task is required")
    if task == "compare" and doc["compare"]["kind"] == "maze" and "mdp" not in doc:
        raise ConfigError("mdp", "maze comparison needs an mdp section")
    dq = doc.get("dqn", {})
    if dq.get("eps_end", 0.0) > dq.get("eps_start", 1.0):
        raise ConfigError("dqn.eps_end", "must not exceed eps_start")
    return doc


# ---------------------------------------------------------------- builders


def _resolve(path, base):
    if path == "default":
        return DEFAULT_MAZE_PATH
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


def build_mdp(section, base_dir, seed):
    kind = section["kind"]
    if kind == "maze":
        params = {k: section[k] for k in ("step_penalty", "goal_reward", "gamma", "goal_mode") if k in section}
        if "slip" in section:
            params["slip"] = tuple(section["slip"])
        if section.get("random_layout"):
            spec = MazeSpec(rows=random_maze_rows(derive_rng(seed, "maze")), **params)
        elif "rows" in section:
            spec = MazeSpec(rows=tuple(section["rows"]), **params)
        else:
            spec = load_maze(_resolve(section.get("path", "default"), base_dir), **params)
        return maze_to_mdp(spec)
    if kind == "random":
        return random_mdp(
            derive_rng(seed, "mdp"),
            section["num_states"],
            section["num_actions"],
            section["gamma"],
            section.get("num_absorbing", 0),
        )
    if kind == "inline":
        return TabularMdp.from_dict(section)
    return TabularMdp.from_json(Path(_resolve(section["path"], base_dir)).read_text())


def build_reg(section, mdp):
    beta = STANDARD if section["beta"] == "standard" else float(section["beta"])
    return RegularizationSpec.uniform(beta, *mdp.shape)


def _tol(doc, key, default):
    return doc.get("tolerances", {}).get(key, default)


def _fmt(x):
    return f"{x:.17g}"


def write_table_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else _fmt(v) for v in row) + "\n")


def emit_maze_figure_data(trace, path):
    """One CSV row per iteration: iteration,residual,inf_delta,sup_delta,mean_q,violation_sum."""
    write_trace_csv(trace, path)
    return Path(path)


def _write_json(path, doc):
    Path(path).write_text(dumps_json(doc) + "\n")


# ---------------------------------------------------------------- per-seed jobs


def _job_solve(doc, base_dir, seed, out):
    mdp = build_mdp(doc["mdp"], base_dir, seed)
    reg = build_reg(doc["reg"], mdp)
    rep = solve(mdp, reg, tol=_tol(doc, "solve", 1e-10), max_iter=_tol(doc, "max_iter", 100_000))
    q_path = out / "q.csv"
    rows = [(s, a, rep.q[s, a]) for s in range(mdp.num_states) for a in range(mdp.num_actions)]
    write_table_csv(q_path, ("state", "action", "q"), rows)
    s_path = out / "summary.json"
    _write_json(s_path, {"iterations": rep.iterations, "residual": rep.residual})
    return [q_path, s_path]


def _job_bounds(doc, base_dir, seed, out):
    mdp = build_mdp(doc["mdp"], base_dir, seed)
    reg = build_reg(doc["reg"], mdp)
    q_star = solve(mdp, reg, tol=_tol(doc, "solve", 1e-12), max_iter=_tol(doc, "max_iter", 100_000)).q
    est = doc.get("estimate", {})
    kind = est.get("kind", "random")
    if kind == "zeros":
        q = np.zeros(mdp.shape)
    elif kind == "solution":
        q = q_star.copy()
    else:
        q = est.get("scale", 1.0) * derive_rng(seed, "estimate").normal(size=mdp.shape)
    if reg.is_standard:
        v = hard_state_value(q)
        field = delta_standard(mdp, v)
    else:
        v = soft_state_value(q, reg)
        field = delta_soft(mdp, reg, q)
    bp = bounds_from_delta(mdp, v, field)
    b_path = out / "bounds.csv"
    rows = [
        (s, a, bp.lower[s, a], bp.upper[s, a], field.delta[s, a])
        for s in range(mdp.num_states)
        for a in range(mdp.num_actions)
    ]
    write_table_csv(b_path, ("state", "action", "lower", "upper", "delta"), rows)
    s_path = out / "summary.json"
    _write_json(
        s_path,
        {
            "inf_delta": bp.inf_delta,
            "sup_delta": bp.sup_delta,
            "max_gap": float(bp.gap.max()),
            "contains_q_star": bp.contains(q_star, 1e-9),
        },
    )
    return [b_path, s_path]


def _clip_methods(doc):
    clip = doc.get("clip", {})
    if "methods" in clip:
        return list(clip["methods"])
    return [clip.get("method", "hard")]


def _job_clip(doc, base_dir, seed, out):
    mdp = build_mdp(doc["mdp"], base_dir, seed)
    reg = build_reg(doc["reg"], mdp)
    eta = doc.get("clip", {}).get("eta", 1e-5)
    res_tol = _tol(doc, "residual", 1e-6)
    files, summary = [], {}
    for method in _clip_methods(doc):
        rep, trace = clipped_value_iteration(
            mdp, reg, ClipConfig(method, eta), tol=_tol(doc, "solve", 1e-10), max_iter=_tol(doc, "max_iter", 100_000)
        )
        files.append(emit_maze_figure_data(trace, out / f"trace_{method}.csv"))
        summary[method] = {
            "iterations": rep.iterations,
            "iterations_to_tol": trace.iterations_to(res_tol),
            "residual_tol": res_tol,
        }
    s_path = out / "summary.json"
    _write_json(s_path, summary)
    return files + [s_path]


def _dqn_config(doc, seed, method=None):
    section = {k: v for k, v in doc.get("dqn", {}).items() if k != "methods"}
    if method is not None:
        section["method"] = method
    return DqnConfig(seed=seed, **section)


def _env_params(doc):
    return MountainCarParams(**doc.get("env", {}))


def _job_dqn(doc, base_dir, seed, out, method=None):
    cfg = _dqn_config(doc, seed, method)
    log, net = dqn_train(_env_params(doc), cfg)
    tag = f"{cfg.method}_" if method is not None else ""
    log_path = out / f"{tag}train_log.csv"
    log.write_csv(log_path)
    ck_path = out / f"{tag}checkpoint.json"
    save_checkpoint(net, ck_path)
    s_path = out / f"{tag}summary.json"
    _write_json(s_path, {"method": cfg.method, "hard_violations": log.hard_violations, "gradient_steps": log.gradient_steps})
    return [log_path, ck_path, s_path]


JOBS = {"solve": _job_solve, "bounds": _job_bounds, "clip": _job_clip, "dqn": _job_dqn}


def _run_job(args):
    task, doc, base_dir, seed, out, method = args
    t0 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    if task == "compare-dqn":
        files = _job_dqn(doc, base_dir, seed, out, method)
    else:
        files = JOBS[task](doc, base_dir, seed, out)
    return seed, method, [str(f) for f in files], time.perf_counter() - t0


def _workers(n_jobs):
    cap = os.environ.get("VALBOUND_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def _execute(jobs):
    n = _workers(len(jobs))
    if n == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_job, jobs))


# ---------------------------------------------------------------- summaries


def half_width(values):
    """95% normal-approximation half-width ``1.96 s / sqrt(n)``; 0 (with a warning) for one value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        warnings.warn("a single seed gives no spread; half-width reported as 0", stacklevel=2)
        return 0.0
    return float(1.96 * values.std(ddof=1) / math.sqrt(values.size))


def _quartile_means(col):
    col = np.asarray(col, dtype=np.float64)
    col = col[np.isfinite(col)]
    k = max(1, math.ceil(col.size / 4))
    return float(col[:k].mean()), float(col[-k:].mean())


def compare_methods(logs):
    """Per-method, per-checkpoint mean and 95% half-width of eval reward and violation_sum.

    ``logs`` maps each method to a list of TrainLogs (one per seed). All runs
    must share the same checkpoints.
    """
    if not logs:
        raise ValueError("no runs to compare")
    steps = None
    for method, runs in logs.items():
        if not runs:
            raise ValueError(f"no runs for method {method!r}")
        for log in runs:
            s = log.column("env_step").tolist()
            if steps is None:
                steps = s
            elif s != steps:
                raise ValueError("mismatched budgets: runs log different checkpoints")
    out = {}
    for method, runs in logs.items():
        entry = {"env_step": [int(x) for x in steps], "seeds": len(runs)}
        for col in ("mean_eval_reward", "violation_sum"):
            mat = np.stack([log.column(col) for log in runs])
            entry[col] = {
                "mean": mat.mean(axis=0).tolist(),
                "half_width": [half_width(mat[:, k]) for k in range(mat.shape[1])],
            }
        firsts, lasts = zip(*(_quartile_means(log.column("violation_sum")) for log in runs))
        entry["violation_first_quartile"] = float(np.mean(firsts))
        entry["violation_last_quartile"] = float(np.mean(lasts))
        entry["final_eval_reward"] = float(np.mean([log.column("mean_eval_reward")[-1] for log in runs]))
        entry["hard_violations"] = int(sum(log.hard_violations for log in runs))
        out[method] = entry
    return out


def compare_maze_iterations(iterations):
    """``iterations`` maps method -> per-seed iterations-to-tolerance."""
    out = {}
    for method, its in iterations.items():
        vals = np.asarray(its, dtype=np.float64)
        out[method] = {"per_seed": [int(x) for x in its], "mean": float(vals.mean()), "half_width": half_width(vals)}
    if "none" in iterations:
        base = iterations["none"]
        for method, its in iterations.items():
            if method != "none":
                out[method]["le_none_all_seeds"] = bool(all(a <= b for a, b in zip(its, base)))
    return out


def read_train_log(path):
    log = TrainLog()
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in fh:
            vals = line.strip().split(",")
            log.rows.append((int(vals[0]), *(float(v) for v in vals[1:])))
    return log


# ---------------------------------------------------------------- main


def _manifest(path, doc, task, status, files, timings, extra=None):
    body = {
        "task": task,
        "version": __version__,
        "status": status,
        "config": doc,
        "files": files,
        "timings_seconds": timings,
    }
    if extra:
        body.update(extra)
    _write_json(path, body)


def run(task, config_path, output=None, seeds=None, stdout=None):
    """Run one subcommand. Returns the exit status."""
    stdout = stdout if stdout is not None else sys.stdout
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    try:
        validate_config(doc, task)
        if seeds is not None:
            doc["seeds"] = seeds
        doc.setdefault("seeds", [0])
        if task == "compose-check":
            comp = doc["compose"]
            spec = CompositionSpec(tuple(comp["weights"]), comp["tau"], comp.get("rule", "logsumexp_weighted"))
            tasks = [TabularMdp.from_dict(t) for t in comp["tasks"]]
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    base_dir = Path(config_path).resolve().parent
    out_dir = Path(output or doc.get("output_dir") or f"runs/{task}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = out_dir / "manifest.json"
        _manifest(manifest, doc, task, "running", [], {})
        t0 = time.perf_counter()
        extra = None
        if task == "compose-check":
            report = verify_exact_composition(tasks, spec, tol=_tol(doc, "compose", 1e-8)).to_dict()
            r_path = out_dir / "report.json"
            _write_json(r_path, report)
            print(dumps_json(report), file=stdout)
            files, timings = [str(r_path)], {"total": time.perf_counter() - t0}
            extra = {"pass": report["pass"]}
        elif task == "compare":
            files, timings, extra = _run_compare(doc, base_dir, out_dir, stdout)
        else:
            jobs = [(task, doc, base_dir, s, out_dir / f"seed_{s}", None) for s in doc["seeds"]]
            results = _execute(jobs)
            files = [f for _, _, fs, _ in results for f in fs]
            timings = {f"seed_{s}": t for s, _, _, t in results}
        timings["total"] = time.perf_counter() - t0
        _manifest(manifest, doc, task, "complete", files, timings, extra)
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if extra is not None and extra.get("pass") is False:
        return 1
    return 0


def _run_compare(doc, base_dir, out_dir, stdout):
    kind = doc["compare"]["kind"]
    seeds = doc["seeds"]
    if kind == "maze":
        methods = _clip_methods(doc) if "clip" in doc else ["none", "hard"]
        jobs = [("clip", dict(doc, clip={"methods": methods, **{k: v for k, v in doc.get("clip", {}).items() if k == "eta"}}),
                 base_dir, s, out_dir / f"seed_{s}", None) for s in seeds]
        results = _execute(jobs)
        its = {m: [] for m in methods}
        for s in seeds:
            summary = json.loads((out_dir / f"seed_{s}" / "summary.json").read_text())
            for m in methods:
                its[m].append(summary[m]["iterations_to_tol"])
        summary = {"kind": "maze", "seeds": seeds, "methods": compare_maze_iterations(its)}
    else:
        methods = doc.get("dqn", {}).get("methods", list(DQN_METHODS))
        jobs = [("compare-dqn", doc, base_dir, s, out_dir / f"seed_{s}", m) for m in methods for s in seeds]
        results = _execute(jobs)
        logs = {m: [read_train_log(out_dir / f"seed_{s}" / f"{m}_train_log.csv") for s in seeds] for m in methods}
        summary = {"kind": "dqn", "seeds": seeds, "methods": compare_methods(logs)}
    s_path = out_dir / "summary.json"
    _write_json(s_path, summary)
    print(dumps_json(summary), file=stdout)
    files = [f for _, _, fs, _ in results for f in fs] + [str(s_path)]
    timings = {f"{m or 'run'}_seed_{s}": t for s, m, _, t in results}
    return files, timings, None


def _parse_seeds(text):
    try:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("seeds must be comma-separated integers") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be nonnegative integers")
    return seeds


def main(argv=None):
    parser = argparse.ArgumentParser(prog="valbound", description="Value-bound experiments.")
    parser.add_argument("--version", action="version", version=f"valbound {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--output", help="output directory (overrides output_dir)")
        p.add_argument("--seeds", type=_parse_seeds, help="comma-separated seeds (overrides the config)")
    args = parser.parse_args(argv)
    return run(args.command, args.config, args.output, args.seeds)


if __name__ == "__main__":
    sys.exit(main())
