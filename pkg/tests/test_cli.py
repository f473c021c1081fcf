import io
import json

import numpy as np
import pytest

from cacetest import cli

SCHEMA = "id=id,cell=cell,z=z,d=d,y=emp_1_6:emp_7_18:emp_19_30"
FIXTURE = "tests/data/jtpa_synthetic.csv"
SMALL = "tests/data/small.csv"


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def table_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    header = lines[0].split("\t")
    return header, [dict(zip(header, ln.split("\t"))) for ln in lines[1:]]


class TestAnalyze:
    def test_tsv_report(self):
        code, out, _ = run("analyze", "--input", FIXTURE, "--schema", SCHEMA, "--statistic", "cace",
                           "--m", "400", "--alpha", ".05", "--seed", "7", "--adjust", "all",
                           "--cell-labels", "Female,Male")
        assert code == 0
        assert "# seed=7" in out and "# statistic=cace" in out and "# M=400" in out
        header, rows = table_rows(out)
        assert header == ["label", "effect", "p_nominal", "p_bonferroni", "p_holm", "p_hochberg",
                          "p_hommel", "p_randomization"]
        assert len(rows) == 6 and rows[0]["label"] == "Female/emp_1_6"
        for row in rows:
            for key in header[1:]:
                float(row[key])
            # p-values recover their count out of M exactly
            assert float(row["p_nominal"]) * 400 == pytest.approx(round(float(row["p_nominal"]) * 400))

    def test_jsonl(self):
        code, out, _ = run("analyze", "--input", FIXTURE, "--schema", SCHEMA, "--m", "300",
                           "--seed", "3", "--format", "jsonl", "--statistic", "itt")
        assert code == 0
        objs = [json.loads(ln) for ln in out.splitlines()]
        assert set(objs[0]) == {"label", "effect", "p_nominal", "p_bonferroni", "p_holm",
                                "p_hochberg", "p_hommel", "p_randomization"}
        assert objs[-1]["metadata"]["seed"] == 3 and len(objs) == 7

    def test_same_seed_identical(self):
        args = ("analyze", "--input", FIXTURE, "--schema", SCHEMA, "--m", "300", "--seed", "5")
        assert run(*args)[1] == run(*args)[1]

    def test_seed_generated_when_absent(self):
        code, out, _ = run("analyze", "--input", SMALL, "--schema", "z=z,d=d,y=y1", "--m", "50",
                           "--statistic", "itt")
        assert code == 0
        seed = next(ln for ln in out.splitlines() if ln.startswith("# seed="))
        assert int(seed.split("=")[1]) >= 0

    def test_iv_statistic(self):
        code, out, _ = run("analyze", "--input", SMALL, "--schema", "id=id,z=z,d=d,y=y1",
                           "--statistic", "cace_iv", "--m", "50", "--seed", "3")
        assert code == 0 and "# statistic=cace_iv" in out

    def test_custom_estimands(self):
        code, out, _ = run("analyze", "--input", FIXTURE, "--schema", SCHEMA, "--m", "100",
                           "--seed", "1", "--estimands", "F late=0:emp_19_30,all early=*:emp_1_6",
                           "--adjust", "bonferroni,randomization")
        assert code == 0
        header, rows = table_rows(out)
        assert [r["label"] for r in rows] == ["F late", "all early"]
        assert header[-2:] == ["p_bonferroni", "p_randomization"]


class TestErrors:
    def test_input_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("z,d,y\n1,1,0\n0,1,1\n")
        code, out, err = run("analyze", "--input", str(bad), "--schema", "z=z,d=d,y=y", "--seed", "1")
        assert code == 2 and out == ""
        assert err.count("\n") == 1 and err.startswith("error: input: one-sided violation at row 2")

    def test_missing_file(self):
        code, _, err = run("analyze", "--input", "nope.csv", "--schema", "z=z,d=d,y=y")
        assert code == 2 and err.startswith("error: input:")

    @pytest.mark.parametrize("extra", [["--alpha", "1.5"], ["--m", "0"], ["--tail", "up"],
                                       ["--adjust", "sidak"], ["--burn-in", "0"]])
    def test_config_errors(self, extra):
        code, _, err = run("analyze", "--input", SMALL, "--schema", "z=z,d=d,y=y1", *extra)
        assert code == 3 and err.startswith("error: config:") and err.count("\n") == 1

    def test_bad_schema(self):
        code, _, err = run("analyze", "--input", SMALL, "--schema", "z=z,y=y1")
        assert code == 3

    def test_no_command(self):
        assert run()[0] == 3

    def test_enumeration_limit(self, tmp_path):
        rows = ["z,d,y"] + [f"{int(i < 10)},{int(i < 10)},{i % 3}" for i in range(20)]
        path = tmp_path / "n20.csv"
        path.write_text("\n".join(rows) + "\n")
        code, _, err = run("exact", "--input", str(path), "--schema", "z=z,d=d,y=y",
                           "--enum-limit", "100000")
        assert code == 4 and "enumeration limit exceeded" in err


class TestExact:
    def test_small_file(self):
        code, out, _ = run("exact", "--input", SMALL, "--schema", "z=z,d=d,y=y1", "--tail", "right")
        assert code == 0
        _, rows = table_rows(out)
        assert float(rows[0]["p_exact"]) == pytest.approx(2 / 6)

    def test_needs_compliance_for_cace(self, tmp_path):
        path = tmp_path / "nc.csv"
        path.write_text("z,d,y,c\n1,1,1,1\n1,0,0,0\n0,0,1,1\n0,0,0,0\n")
        code, _, _ = run("exact", "--input", str(path), "--schema", "z=z,d=d,y=y", "--statistic", "cace")
        assert code == 3
        code, out, _ = run("exact", "--input", str(path), "--schema", "z=z,d=d,y=y,c=c",
                           "--statistic", "cace")
        assert code == 0 and "# assignments=6" in out


class TestSimulateReplicate:
    def test_simulate_round_trip(self, tmp_path):
        code, out, _ = run("simulate", "--scenario", "combined/alt1/partial/omega=.3", "--seed", "2")
        assert code == 0
        path = tmp_path / "sim.csv"
        path.write_text(out)
        code, out2, _ = run("analyze", "--input", str(path), "--schema", "z=z,d=d,y=y1:y2:y3",
                            "--m", "100", "--seed", "2")
        assert code == 0 and len(table_rows(out2)[1]) == 3

    def test_simulate_bad_scenario(self):
        assert run("simulate", "--scenario", "combined/alt9")[0] == 3

    def test_replicate_grid(self):
        code, out, _ = run("replicate", "--scenario", "multiple_no_compliance/alt/perfect",
                           "--reps", "3", "--m", "100", "--seed", "4", "--adjust", "bonferroni,randomization")
        assert code == 0
        header, rows = table_rows(out)
        assert header == ["statistic", "method", "rate", "se", "rejections"]
        assert [(r["statistic"], r["method"]) for r in rows] == [("itt", "bonferroni"), ("itt", "randomization")]
        assert "# scenario=multiple_no_compliance/alt/perfect/omega=1" in out
