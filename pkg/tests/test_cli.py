import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from valbound.cli import (
    ConfigError,
    compare_maze_iterations,
    compare_methods,
    emit_maze_figure_data,
    half_width,
    main,
    run,
    validate_config,
)
from valbound.clipping import ClipTrace
from valbound.dqn import TrainLog

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def solve_doc(out):
    return {
        "task": "solve",
        "mdp": {"kind": "random", "num_states": 6, "num_actions": 3, "gamma": 0.9, "num_absorbing": 1},
        "reg": {"beta": 0.5},
        "seeds": [0, 3],
        "output_dir": str(out),
    }


def test_bundled_configs_validate():
    for path in sorted(CONFIGS.glob("*.json")):
        doc = json.loads(path.read_text())
        validate_config(doc, doc["task"])


def test_same_config_twice_is_bitwise_identical(tmp_path):
    for task, doc in (
        ("solve", solve_doc(None)),
        ("bounds", dict(solve_doc(None), task="bounds", estimate={"kind": "random", "scale": 2.0})),
        ("clip", dict(solve_doc(None), task="clip", clip={"methods": ["none", "hard"]})),
    ):
        outs = []
        for k in range(2):
            doc["output_dir"] = str(tmp_path / f"{task}_{k}")
            assert run(task, write(tmp_path, doc)) == 0
            outs.append(Path(doc["output_dir"]))
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
        assert files
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_negative_beta_exit_2(tmp_path, capsys):
    out = tmp_path / "never"
    doc = dict(solve_doc(out), reg={"beta": -1.0})
    assert run("solve", write(tmp_path, doc)) == 2
    assert "reg.beta" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"bogus": 1}, ""),
        ({"mdp": {"kind": "random", "num_states": 0, "num_actions": 3, "gamma": 0.9}}, "mdp.num_states"),
        ({"mdp": {"kind": "maze", "slip": [0.5, 0.5, 0.5]}}, "mdp.slip"),
        ({"reg": {"beta": "hot"}}, "reg.beta"),
    ],
)
def test_validation_names_field(tmp_path, patch, field):
    doc = dict(solve_doc(tmp_path / "x"), **patch)
    with pytest.raises(ConfigError) as err:
        validate_config(doc, "solve")
    assert err.value.field.startswith(field)
    assert run("solve", write(tmp_path, doc)) == 2
    assert not (tmp_path / "x").exists()


def test_missing_section_and_task_mismatch(tmp_path):
    with pytest.raises(ConfigError, match="reg"):
        validate_config({"task": "solve", "mdp": {"kind": "random", "num_states": 2, "num_actions": 1, "gamma": 0.5}}, "solve")
    with pytest.raises(ConfigError, match="task"):
        validate_config(solve_doc(tmp_path), "clip")


def test_manifest_complete(tmp_path):
    doc = solve_doc(tmp_path / "out")
    assert run("solve", write(tmp_path, doc)) == 0
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "complete" and man["config"]["seeds"] == [0, 3]
    assert man["files"] and all(Path(f).exists() for f in man["files"])
    assert set(man["timings_seconds"]) == {"seed_0", "seed_3", "total"}


def test_runtime_failure_exit_1(tmp_path, capsys):
    doc = dict(solve_doc(tmp_path / "out"), tolerances={"max_iter": 2})
    assert run("solve", write(tmp_path, doc)) == 1
    assert "ConvergenceError" in capsys.readouterr().err


def test_bundled_compose_check(tmp_path, capsys):
    assert main(["compose-check", "--config", str(CONFIGS / "compose_check.json"), "--output", str(tmp_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["pass"] is True and report["residual"] <= 1e-8


def test_compose_check_mean_rule_fails(tmp_path):
    doc = json.loads((CONFIGS / "compose_check.json").read_text())
    doc["compose"]["rule"] = "mean"
    assert run("compose-check", write(tmp_path, doc), output=tmp_path / "o") == 1
    assert json.loads((tmp_path / "o" / "report.json").read_text())["pass"] is False


def test_bounds_output_contains_q_star(tmp_path):
    doc = dict(solve_doc(tmp_path / "b"), task="bounds")
    assert run("bounds", write(tmp_path, doc)) == 0
    for s in (0, 3):
        summary = json.loads((tmp_path / "b" / f"seed_{s}" / "summary.json").read_text())
        assert summary["contains_q_star"] is True


def test_clip_maze_trace(tmp_path):
    out = tmp_path / "clip"
    assert main(["clip", "--config", str(CONFIGS / "clip_maze.json"), "--output", str(out)]) == 0
    summary = json.loads((out / "seed_0" / "summary.json").read_text())
    assert summary["hard"]["iterations_to_tol"] <= summary["none"]["iterations_to_tol"]
    rows = np.loadtxt(out / "seed_0" / "trace_hard.csv", delimiter=",", skiprows=1)
    assert np.all(np.isfinite(rows)) and rows[-1, -1] <= 1e-12


def test_seeds_override(tmp_path):
    doc = solve_doc(tmp_path / "o")
    assert main(["solve", "--config", str(write(tmp_path, doc)), "--seeds", "5"]) == 0
    assert (tmp_path / "o" / "seed_5" / "q.csv").exists()
    assert not (tmp_path / "o" / "seed_0").exists()
    with pytest.raises(SystemExit):
        main(["solve", "--config", "x.json", "--seeds", "a,b"])


def test_emit_maze_figure_data(tmp_path):
    tr = ClipTrace()
    for k in range(1, 4):
        tr.append(k, 0.5**k, -1.0, 1.0, 0.1, 0.0, 0)
    path = emit_maze_figure_data(tr, tmp_path / "fig.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "iteration,residual,inf_delta,sup_delta,mean_q,violation_sum"


def test_half_width():
    with pytest.warns(UserWarning, match="single seed"):
        assert half_width([3.0]) == 0.0
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    assert half_width(vals) == pytest.approx(1.96 * vals.std(ddof=1) / 2.0)


def _log(steps, rewards, viol):
    log = TrainLog()
    for s, r, v in zip(steps, rewards, viol):
        log.rows.append((s, r, 0.0, 0.0, v, 0.1))
    return log


def test_compare_methods_summary():
    logs = {
        "none": [_log([10, 20, 30, 40], [-200, -190, -180, -150], [5, 4, 3, 2]) for _ in range(3)],
        "hard": [_log([10, 20, 30, 40], [-200, -200, -170, -160], [6, 3, 1, 0])],
    }
    with pytest.warns(UserWarning):
        out = compare_methods(logs)
    assert out["none"]["mean_eval_reward"]["mean"] == [-200, -190, -180, -150]
    assert out["none"]["mean_eval_reward"]["half_width"] == [0.0] * 4
    assert out["hard"]["violation_first_quartile"] == 6.0 and out["hard"]["violation_last_quartile"] == 0.0
    assert out["hard"]["final_eval_reward"] == -160.0


def test_compare_methods_mismatched_budgets():
    logs = {"none": [_log([10, 20], [0, 0], [0, 0])], "hard": [_log([10, 20, 30], [0, 0, 0], [0, 0, 0])]}
    with pytest.raises(ValueError, match="mismatched"):
        compare_methods(logs)


def test_compare_maze_iterations():
    out = compare_maze_iterations({"none": [10, 12], "hard": [9, 12]})
    assert out["hard"]["le_none_all_seeds"] is True and out["none"]["mean"] == 11.0


def test_compare_maze_cli(tmp_path, capsys):
    doc = json.loads((CONFIGS / "compare_maze.json").read_text())
    doc["seeds"] = [0, 1, 2]
    doc["output_dir"] = str(tmp_path / "cmp")
    assert run("compare", write(tmp_path, doc)) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["methods"]["hard"]["le_none_all_seeds"] is True


def test_compare_dqn_cli_small(tmp_path):
    doc = {
        "task": "compare",
        "compare": {"kind": "dqn"},
        "dqn": {"methods": ["none", "hard"], "total_steps": 600, "learning_starts": 200, "eval_interval": 300,
                "eval_episodes": 1, "hidden": [8, 8]},
        "seeds": [0, 1],
        "output_dir": str(tmp_path / "dqn"),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert run("compare", write(tmp_path, doc)) == 0
    summary = json.loads((tmp_path / "dqn" / "summary.json").read_text())
    assert set(summary["methods"]) == {"none", "hard"}
    assert summary["methods"]["hard"]["hard_violations"] == 0
    assert summary["methods"]["none"]["env_step"] == [300, 600]
