"""End-to-end tests for the experiment runner.

Every test drives the real argv entry point.  Configs are written to
tmp_path, so file resolution (relative matrix refs, output dirs) is
exercised the same way a shell user would hit it.
"""

import csv
import json

import numpy as np
import pytest
import yaml

from regimelab import __version__
from regimelab.cli import main
from regimelab.ratematrix import validate, write_csv


def dump(tmp_path, cfg, name="config.yaml"):
    path = tmp_path / name
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh)
    return path


def fk_config(**overrides):
    cfg = {
        "schema_version": 1,
        "kind": "feynman-kac-check",
        "q": {"entries": [[-1.0, 1.0], [2.0, -2.0]]},
        "kappa": [0.3, -0.2],
        "p": 1.5,
        "times": [0.25, 0.5],
        "n_paths": 4000,
        "seed": 0,
    }
    cfg.update(overrides)
    return cfg


def t1_config(**overrides):
    cfg = {
        "schema_version": 1,
        "kind": "theorem1-sweep",
        "q": {"entries": [[-1.0, 1.0], [2.0, -2.0]]},
        "q_tilde": {"entries": [[-1.4, 1.4], [1.5, -1.5]]},
        "scales": [0.0, 1.0],
        "t": 0.5,
        "dt": 0.05,
        "n_paths": 400,
        "x0": 0.3,
        "seed": 3,
    }
    cfg.update(overrides)
    return cfg


def read_results(out_dir):
    with open(out_dir / "results.csv", newline="") as fh:
        reader = csv.reader(fh)
        return next(reader), list(reader)


class TestValidate:
    def test_reports_kind(self, tmp_path, capsys):
        path = dump(tmp_path, fk_config())
        assert main(["validate", "--config", str(path)]) == 0
        assert "config valid: kind = feynman-kac-check" in capsys.readouterr().out

    def test_defaults_listed(self, tmp_path, capsys):
        cfg = fk_config()
        del cfg["p"], cfg["seed"]
        path = dump(tmp_path, cfg)
        assert main(["validate", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "p = 2.0" in out
        assert "seed = 0" in out

    def test_no_defaults_when_fully_specified(self, tmp_path, capsys):
        cfg = fk_config(
            seed=5, threads=1, x0=0.0, t=1.0, dt=1e-3, n_paths=100, i0=0
        )
        path = dump(tmp_path, cfg)
        assert main(["validate", "--config", str(path)]) == 0
        assert "defaults applied: none" in capsys.readouterr().out

    def test_json_config(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(fk_config()))
        assert main(["validate", "--config", str(path)]) == 0

    def test_matrix_from_file(self, tmp_path):
        write_csv(validate([[-1.0, 1.0], [2.0, -2.0]]), tmp_path / "q.csv")
        path = dump(tmp_path, fk_config(q={"file": "q.csv"}))
        assert main(["validate", "--config", str(path)]) == 0

    def test_wrong_schema_version(self, tmp_path, capsys):
        path = dump(tmp_path, fk_config(schema_version=99))
        assert main(["validate", "--config", str(path)]) == 2
        assert "schema_version must be 1" in capsys.readouterr().err

    def test_unknown_kind_suggests(self, tmp_path, capsys):
        path = dump(tmp_path, fk_config(kind="feynman-kac-chek"))
        assert main(["validate", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "did you mean" in err
        assert "feynman-kac-check" in err

    def test_negative_dt(self, tmp_path, capsys):
        path = dump(tmp_path, t1_config(dt=-1e-3))
        assert main(["validate", "--config", str(path)]) == 2
        assert "dt must be positive" in capsys.readouterr().err

    def test_unknown_model_suggests(self, tmp_path, capsys):
        path = dump(tmp_path, t1_config(model={"name": "bounded_tanh"}))
        assert main(["validate", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "did you mean" in err
        assert "bounded-tanh" in err

    def test_missing_q(self, tmp_path, capsys):
        cfg = fk_config()
        del cfg["q"]
        path = dump(tmp_path, cfg)
        assert main(["validate", "--config", str(path)]) == 2
        assert "missing rate matrix" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["validate", "--config", str(tmp_path / "absent.yaml")]) == 2
        assert "file not found" in capsys.readouterr().err

    def test_top_level_must_be_mapping(self, tmp_path, capsys):
        path = tmp_path / "config.yaml"
        path.write_text("- 1\n- 2\n")
        assert main(["validate", "--config", str(path)]) == 2
        assert "top level must be a mapping" in capsys.readouterr().err

    def test_dt_must_divide_t(self, tmp_path, capsys):
        path = dump(tmp_path, t1_config(t=0.5, dt=0.03))
        assert main(["validate", "--config", str(path)]) == 2
        assert "evenly divide" in capsys.readouterr().err

    def test_kappa_length_mismatch(self, tmp_path, capsys):
        path = dump(tmp_path, fk_config(kappa=[1.0, 2.0, 3.0]))
        assert main(["validate", "--config", str(path)]) == 2
        assert "kappa has 3 entries" in capsys.readouterr().err

    def test_i0_out_of_range(self, tmp_path):
        path = dump(tmp_path, fk_config(i0=5))
        assert main(["validate", "--config", str(path)]) == 2

    def test_q_tilde_required(self, tmp_path, capsys):
        cfg = {
            "schema_version": 1,
            "kind": "lemma2-check",
            "q": {"entries": [[-1.0, 1.0], [2.0, -2.0]]},
        }
        path = dump(tmp_path, cfg)
        assert main(["validate", "--config", str(path)]) == 2
        assert "requires `q_tilde`" in capsys.readouterr().err

    def test_reduction_default_initial_state(self, tmp_path, capsys):
        cfg = {
            "schema_version": 1,
            "kind": "theorem2-reduction",
            "q": {
                "entries": [
                    [-1.5, 1.0, 0.5],
                    [0.4, -1.0, 0.6],
                    [0.7, 0.3, -1.0],
                ]
            },
            "m": 0,
            "q_hat": {"entries": [[-0.8, 0.8], [0.3, -0.3]]},
            "t": 0.5,
            "dt": 0.05,
        }
        path = dump(tmp_path, cfg)
        assert main(["validate", "--config", str(path)]) == 0
        assert "i0 = 1 (first kept state)" in capsys.readouterr().out

    def test_reduction_rejects_bad_split(self, tmp_path):
        cfg = {
            "schema_version": 1,
            "kind": "theorem2-reduction",
            "q": {
                "entries": [
                    [-1.5, 1.0, 0.5],
                    [0.4, -1.0, 0.6],
                    [0.7, 0.3, -1.0],
                ]
            },
            "m": 2,
            "q_hat": {"entries": [[0.0]]},
            "t": 0.5,
            "dt": 0.05,
        }
        path = dump(tmp_path, cfg)
        assert main(["validate", "--config", str(path)]) == 2


@pytest.fixture(scope="module")
def fk_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("fkrun")
    path = dump(base, fk_config())
    out = base / "out"
    code = main(["run", "--config", str(path), "--out", str(out)])
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    return code, out, manifest


class TestRun:
    def test_artifacts_and_verdict(self, fk_run):
        code, out, manifest = fk_run
        assert code == 0
        columns, rows = read_results(out)
        assert columns == ["t", "exact", "mc_estimate", "stderr", "holds"]
        assert len(rows) == 2
        assert all(r[-1] == "true" for r in rows)
        assert manifest["schema_version"] == 1
        assert manifest["kind"] == "feynman-kac-check"
        assert manifest["verdict"] is True
        assert manifest["n_rows"] == 2
        assert manifest["versions"]["package"] == __version__
        assert manifest["config"]["kappa"] == [0.3, -0.2]
        assert manifest["derived"]["clock_rate"] > 0

    def test_exact_column_matches_direct_call(self, fk_run):
        from regimelab.ratematrix import feynman_kac

        _, out, _ = fk_run
        _, rows = read_results(out)
        q = validate([[-1.0, 1.0], [2.0, -2.0]])
        for row in rows:
            t, exact = float(row[0]), float(row[1])
            assert exact == feynman_kac(q, np.array([0.3, -0.2]), 1.5, t, 0)

    def test_rerun_byte_identical(self, tmp_path):
        path = dump(tmp_path, fk_config(n_paths=500, times=[0.5]))
        for out in ("a", "b"):
            assert main(["run", "--config", str(path), "--out",
                         str(tmp_path / out)]) == 0
        for name in ("results.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_threads_do_not_change_results(self, tmp_path):
        path = dump(tmp_path, fk_config(n_paths=500, times=[0.5]))
        main(["run", "--config", str(path), "--out", str(tmp_path / "t1")])
        main(["run", "--config", str(path), "--threads", "3", "--out",
              str(tmp_path / "t3")])
        assert (tmp_path / "t1" / "results.csv").read_bytes() == \
            (tmp_path / "t3" / "results.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        path = dump(tmp_path, fk_config(n_paths=500, times=[0.5]))
        main(["run", "--config", str(path), "--out", str(tmp_path / "s0")])
        main(["run", "--config", str(path), "--seed", "99", "--out",
              str(tmp_path / "s99")])
        with open(tmp_path / "s99" / "manifest.json") as fh:
            assert json.load(fh)["seed"] == 99
        assert (tmp_path / "s0" / "results.csv").read_bytes() != \
            (tmp_path / "s99" / "results.csv").read_bytes()

    def test_failing_verdict_exits_one(self, tmp_path):
        # tail mass that 100 paths cannot see: the estimator lands far
        # below the exact value with a small in-sample stderr
        cfg = fk_config(
            q={"entries": [[-12.0, 12.0], [12.0, -12.0]]},
            kappa=[40.0, 0.0],
            p=1.0,
            times=[1.0],
            n_paths=100,
            seed=1,
        )
        path = dump(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 1
        with open(out / "manifest.json") as fh:
            manifest = json.load(fh)
        assert manifest["verdict"] is False
        assert manifest["verdict_text"] == "mismatch beyond 3 SE"

    def test_invalid_config_exits_two(self, tmp_path):
        path = dump(tmp_path, fk_config(schema_version=2))
        assert main(["run", "--config", str(path), "--out",
                     str(tmp_path / "out")]) == 2
        assert not (tmp_path / "out").exists()

    def test_theorem1_sweep_dominates(self, tmp_path):
        path = dump(tmp_path, t1_config())
        out = tmp_path / "out"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        columns, rows = read_results(out)
        assert columns[:4] == ["scale", "delta_l1", "empirical_w2sq", "stderr"]
        assert [r[columns.index("holds")] for r in rows] == ["true", "true"]
        with open(out / "manifest.json") as fh:
            manifest = json.load(fh)
        assert manifest["derived"]["bound_form"] == "T1-bounded"
        assert manifest["derived"]["N"] == 1

    def test_zero_perturbation_row_vanishes(self, tmp_path):
        path = dump(tmp_path, t1_config(scales=[0.0]))
        out = tmp_path / "out"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        columns, rows = read_results(out)
        row = dict(zip(columns, rows[0]))
        assert float(row["delta_l1"]) == 0.0
        assert float(row["empirical_w2sq"]) == 0.0
        assert float(row["stderr"]) == 0.0
        assert float(row["bound"]) == 0.0
        assert row["holds"] == "true"

    def test_lemma2_zero_perturbation(self, tmp_path):
        cfg = {
            "schema_version": 1,
            "kind": "lemma2-check",
            "q": {"entries": [[-1.0, 1.0], [2.0, -2.0]]},
            "q_tilde": {"entries": [[-1.0, 1.0], [2.0, -2.0]]},
            "times": [0.5, 1.0],
            "n_paths": 500,
        }
        path = dump(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        columns, rows = read_results(out)
        for row in rows:
            named = dict(zip(columns, row))
            assert float(named["empirical_integral"]) == 0.0
            assert float(named["exact_ode_integral"]) <= 1e-12
            assert float(named["bound"]) == 0.0


class TestSweep:
    def test_replicates_and_summary(self, tmp_path):
        path = dump(tmp_path, fk_config(n_paths=800, times=[0.5]))
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(path), "--replicates", "2",
                     "--out", str(out)])
        assert code == 0
        for r in range(2):
            assert (out / f"replicate-{r}" / "results.csv").exists()
            assert (out / f"replicate-{r}" / "manifest.json").exists()
        columns, rows = read_results(out)
        assert columns[:2] == ["replicate", "seed"]
        assert [r[0] for r in rows] == ["0", "1"]
        with open(out / "sweep.json") as fh:
            summary = json.load(fh)
        assert summary["seeds"] == [0, 1]
        assert summary["verdicts"] == [True, True]
        assert summary["all_hold"] is True

    def test_replicate_seeds_offset_from_base(self, tmp_path):
        path = dump(tmp_path, fk_config(n_paths=300, times=[0.5]))
        out = tmp_path / "sweep"
        main(["sweep", "--config", str(path), "--seed", "10",
              "--replicates", "2", "--out", str(out)])
        with open(out / "sweep.json") as fh:
            assert json.load(fh)["seeds"] == [10, 11]
        with open(out / "replicate-1" / "manifest.json") as fh:
            assert json.load(fh)["seed"] == 11


class TestReport:
    def test_renders_figure_and_summary(self, fk_run, capsys):
        _, out, _ = fk_run
        assert main(["report", "--run", str(out)]) == 0
        fig = out / "figure.png"
        assert fig.read_bytes()[:4] == b"\x89PNG"
        summary = (out / "summary.txt").read_text()
        assert "kind\tfeynman-kac-check" in summary
        assert "verdict\texact identity reproduced" in summary
        assert "wrote" in capsys.readouterr().out

    def test_report_to_other_directory(self, fk_run, tmp_path):
        _, out, _ = fk_run
        dest = tmp_path / "rendered"
        assert main(["report", "--run", str(out), "--out", str(dest)]) == 0
        assert (dest / "figure.png").exists()
        assert (dest / "summary.txt").exists()

    def test_missing_artifacts_exit_two(self, tmp_path, capsys):
        assert main(["report", "--run", str(tmp_path)]) == 2
        assert "missing manifest.json" in capsys.readouterr().err

    def test_theorem1_figure(self, tmp_path):
        path = dump(tmp_path, t1_config(scales=[0.5, 1.0], n_paths=300))
        out = tmp_path / "out"
        main(["run", "--config", str(path), "--out", str(out)])
        assert main(["report", "--run", str(out)]) == 0
        assert (out / "figure.png").stat().st_size > 0
