import json
from pathlib import Path

import numpy as np
import pytest

from vrpenalty import faults, harness, verify
from vrpenalty.cli import main
from vrpenalty.errors import InputError, ReportError
from vrpenalty.harness import PlanError, parse_plan
from vrpenalty.solvers import TRACE_COLUMNS

MINIMAL = """
[plan]
K = 100
seeds = 1
formats = csv, json

[problem.lin]
family = linear-eq
n = 4
m = 2
noise_sigma = 0.1

[algorithm.a2]
algorithm = alg2
"""

SMALL = """
[plan]
K = 400
seeds = 1-3
fit_window = 50, 400

[problem.lin]
family = linear-eq
n = 4
m = 2
noise_sigma = 0.3

[algorithm.a1]
algorithm = alg1
theta_hat = 1

[algorithm.a2]
algorithm = alg2
"""


def _plan_with(replacement, original="seeds = 1"):
    return MINIMAL.replace(original, replacement)


class TestPlanParsing:
    def test_minimal(self):
        plan = parse_plan(MINIMAL)
        assert plan.K == 100 and plan.seeds == [1]
        assert list(plan.cells()) == [("lin", "a2", 1)]
        assert plan.algorithms["a2"].schedule.kind == "alg2-general"

    def test_seed_range(self):
        plan = parse_plan(_plan_with("seeds = 1-4, 9"))
        assert plan.seeds == [1, 2, 3, 4, 9]

    def test_duplicate_seeds_name_the_key(self):
        with pytest.raises(PlanError, match="'seeds'.*duplicate seeds \\[2\\]"):
            parse_plan(_plan_with("seeds = 1, 2, 2"))

    def test_empty_seeds(self):
        with pytest.raises(PlanError, match="seeds"):
            parse_plan(_plan_with("seeds = "))

    def test_unknown_key(self):
        with pytest.raises(PlanError, match="'colour'"):
            parse_plan(_plan_with("seeds = 1\ncolour = red"))

    def test_short_horizon(self):
        with pytest.raises(PlanError, match="'K'"):
            parse_plan(_plan_with("K = 1", "K = 100"))

    def test_bad_section(self):
        with pytest.raises(PlanError, match="unexpected section"):
            parse_plan(MINIMAL + "\n[solver.x]\nalgorithm = alg1\n")

    def test_bad_problem_descriptor(self):
        with pytest.raises(PlanError, match="problem.lin"):
            parse_plan(MINIMAL.replace("family = linear-eq", "family = torus"))

    def test_schedule_algorithm_mismatch(self):
        with pytest.raises(PlanError, match="schedule"):
            parse_plan(MINIMAL + "\n[algorithm.bad]\nalgorithm = alg1\nschedule = alg2-general\n")

    def test_bad_window(self):
        with pytest.raises(PlanError, match="fit_window"):
            parse_plan(_plan_with("seeds = 1\nfit_window = 500, 100"))

    def test_digest_tracks_text(self):
        assert parse_plan(MINIMAL).digest != parse_plan(MINIMAL + "\n# note\n").digest

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(InputError):
            harness.load_plan(tmp_path / "absent.ini")


class TestOutputDirectory:
    def test_precedence(self, monkeypatch):
        plan = parse_plan(_plan_with("seeds = 1\nout = from-plan"))
        monkeypatch.delenv(harness.OUT_ENV, raising=False)
        assert harness.resolve_out(None, plan) == Path("from-plan")
        assert harness.resolve_out(None) == Path(harness.DEFAULT_OUT)
        monkeypatch.setenv(harness.OUT_ENV, "from-env")
        assert harness.resolve_out(None, plan) == Path("from-env")
        assert harness.resolve_out("from-flag", plan) == Path("from-flag")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    agg = harness.execute_plan(parse_plan(SMALL), out, jobs=1, log=lambda *a: None)
    return out, agg


class TestExecution:
    def test_minimal_plan(self, tmp_path):
        agg = harness.execute_plan(parse_plan(MINIMAL), tmp_path, jobs=1, log=lambda *a: None)
        assert set(harness.AGGREGATE_KEYS) <= set(agg)
        trace = (tmp_path / "traces" / "lin__a2__s1.csv").read_text().splitlines()
        assert trace[0] == ",".join(TRACE_COLUMNS)
        assert len(trace) - 1 <= 100
        cert = agg["terminal_certificates"]["lin__a2__s1"]
        assert 51 <= cert["iota"] <= 100
        on_disk = json.loads((tmp_path / "aggregate.json").read_text())
        assert on_disk["cells"] == ["lin__a2__s1"]
        assert (tmp_path / "slopes.csv").exists()

    def test_format_selection(self, tmp_path):
        harness.execute_plan(parse_plan(MINIMAL), tmp_path, jobs=1, formats=("csv",), log=lambda *a: None)
        assert (tmp_path / "slopes.csv").exists() and not (tmp_path / "aggregate.json").exists()

    def test_tallies_and_counters(self, small_run):
        _, agg = small_run
        tot = agg["monitor_tallies"]["total"]
        assert tot["violated"] == 0 and tot["boundedness_violations"] == 0 and tot["counter_mismatches"] == 0
        assert tot["holds"] + tot["not_applicable"] == 6 * 400
        assert agg["monitor_tallies"]["lin__a1__s2"]["counters"] == {"samples": 401, "grad_evals": 801,
                                                                     "constraint_evals": 401}

    def test_group_certificates(self, small_run):
        _, agg = small_run
        certs = agg["terminal_certificates"]
        per_seed = [certs[f"lin__a2__s{s}"]["c_norm"] ** 2 for s in (1, 2, 3)]
        assert certs["lin__a2"]["max_feasibility_sq_at_iota"] == max(per_seed)
        assert certs["lin__a2"]["mean_feasibility_sq_at_iota"] == pytest.approx(np.mean(per_seed), rel=1e-15)

    def test_parallel_matches_serial(self, small_run, tmp_path):
        out, _ = small_run
        harness.execute_plan(parse_plan(SMALL), tmp_path, jobs=2, log=lambda *a: None)
        for path in sorted((out / "traces").glob("*.csv")):
            assert (tmp_path / "traces" / path.name).read_bytes() == path.read_bytes()

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        plan = parse_plan(MINIMAL)
        harness.execute_plan(plan, a, jobs=1, log=lambda *x: None)
        harness.execute_plan(plan, b, jobs=1, log=lambda *x: None)
        assert (a / "traces" / "lin__a2__s1.csv").read_bytes() == (b / "traces" / "lin__a2__s1.csv").read_bytes()


class TestReport:
    def test_empty_directory(self, tmp_path):
        with pytest.raises(ReportError, match="no trace files"):
            harness.report(tmp_path, log=lambda *a: None)

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(ReportError):
            harness.report(tmp_path / "nope", log=lambda *a: None)

    def test_missing_cell_listed(self, small_run, tmp_path):
        out, _ = small_run
        import shutil
        copy = tmp_path / "run"
        shutil.copytree(out, copy)
        (copy / "traces" / "lin__a1__s2.csv").unlink()
        with pytest.raises(ReportError, match="lin__a1__s2"):
            harness.report(copy, log=lambda *a: None)

    def test_bad_header(self, tmp_path):
        (tmp_path / "p__a__s1.csv").write_text("k,h\n1,0.5\n")
        with pytest.raises(ReportError, match="header"):
            harness.report(tmp_path, log=lambda *a: None)

    def test_single_cell_envelope_is_the_seed(self, tmp_path):
        harness.execute_plan(parse_plan(MINIMAL), tmp_path, jobs=1, log=lambda *a: None)
        rep = harness.report(tmp_path / "traces", out_dir=tmp_path / "rep", log=lambda *a: None)
        assert list(rep["envelopes"]) == ["lin__a2"]
        cols = harness.parse_trace_csv((tmp_path / "traces" / "lin__a2__s1.csv").read_text())
        assert rep["envelopes"]["lin__a2"]["feasibility_sq_max"] == (2.0 * cols["h"]).tolist()

    def test_envelope_brute_force(self, small_run, tmp_path):
        out, agg = small_run
        rep = harness.report(out, out_dir=tmp_path, log=lambda *a: None)
        for gid in ("lin__a1", "lin__a2"):
            rows = {}
            for s in (1, 2, 3):
                text = (out / "traces" / f"{gid}__s{s}.csv").read_text().splitlines()[1:]
                for line in text:
                    fields = line.split(",")
                    k, h = int(fields[0]), float(fields[1])
                    rows[k] = max(rows.get(k, 0.0), 2.0 * h)
            env = rep["envelopes"][gid]
            assert env["k"] == sorted(rows)
            assert env["feasibility_sq_max"] == [rows[k] for k in sorted(rows)]
        assert rep["slopes"] == agg["slopes"]

    def test_plot_csv_layout(self, small_run, tmp_path):
        out, _ = small_run
        harness.report(out, out_dir=tmp_path, log=lambda *a: None)
        lines = (tmp_path / "plots" / "lin__a1.csv").read_text().splitlines()
        assert lines[0] == "k,quantity,seed,value"
        seeds = {line.split(",")[2] for line in lines[1:]}
        assert {"1", "2", "3", "mean", "max"} <= seeds
        assert (tmp_path / "slopes.csv").exists() and (tmp_path / "report.json").exists()


class TestCli:
    def test_run_and_report(self, tmp_path, capsys):
        plan = tmp_path / "plan.ini"
        plan.write_text(MINIMAL)
        assert main(["run", str(plan), "--out", str(tmp_path / "o"), "--jobs", "1"]) == 0
        assert main(["report", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "report" / "plots" / "lin__a2.csv").exists()

    def test_env_out(self, tmp_path, monkeypatch):
        plan = tmp_path / "plan.ini"
        plan.write_text(MINIMAL)
        monkeypatch.setenv(harness.OUT_ENV, str(tmp_path / "env-out"))
        assert main(["run", str(plan), "--jobs", "1"]) == 0
        assert (tmp_path / "env-out" / "manifest.json").exists()

    def test_malformed_plan_exit_code(self, tmp_path, capsys):
        plan = tmp_path / "plan.ini"
        plan.write_text(_plan_with("seeds = 3, 3"))
        assert main(["run", str(plan), "--out", str(tmp_path / "o")]) == 2
        assert "seeds" in capsys.readouterr().err

    def test_missing_plan_exit_code(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.ini")]) == 2

    def test_report_empty_exit_code(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 2

    def test_fault_without_gate(self, tmp_path, monkeypatch):
        monkeypatch.delenv(faults.ENABLE_VAR, raising=False)
        assert main(["verify", "--fault", "threshold-sign", "--out", str(tmp_path)]) == 2


class TestVerify:
    def test_pristine_build_passes(self):
        results = verify.run_all(log=lambda *a: None)
        assert len(results) == 10
        assert all(r.passed for r in results), [r.name for r in results if not r.passed]

    def test_truncation_fault_caught(self, monkeypatch):
        monkeypatch.setenv(faults.ENABLE_VAR, "1")
        with faults.injected("truncation-radius"):
            result = verify.check_boundedness()
        assert not result.passed

    def test_threshold_fault_caught(self, monkeypatch, tmp_path):
        monkeypatch.setenv(faults.ENABLE_VAR, "1")
        assert main(["verify", "--fault", "threshold-sign", "--out", str(tmp_path)]) == 1
        failures = json.loads((tmp_path / "verify-failures.json").read_text())
        assert failures
        assert not faults.active("threshold-sign")
