from __future__ import annotations

import csv
import io
import json

import pytest

from iiatest import cli
from iiatest.bayes import SamplerError
from iiatest.files import ingest, questions_csv, read_questions, read_responses, responses_csv


def _synth(out, *extra):
    assert cli.main(["synth", "--out", str(out), "--m", "4", "--n", "12", "--seed", "3", *extra]) == 0


FAST = ["--chains", "2", "--warmup", "150", "--draws", "60"]


def test_synth_is_byte_identical(tmp_path):
    _synth(tmp_path / "a", "--kind", "additive", "--sigma-p", "0.3")
    _synth(tmp_path / "b", "--kind", "additive", "--sigma-p", "0.3")
    for name in ("questions.csv", "responses.csv", "ground_truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    truth = (tmp_path / "a" / "ground_truth.csv").read_text().splitlines()
    assert truth[0] == "target,parameter,question_id,item,value"
    assert any(",additive," in line for line in truth)


def test_ingest_emit_ingest_is_idempotent(tmp_path):
    _synth(tmp_path)
    ds = ingest(tmp_path / "questions.csv", tmp_path / "responses.csv")
    assert questions_csv(ds.questions) == (tmp_path / "questions.csv").read_text()
    assert responses_csv(ds.table()) == (tmp_path / "responses.csv").read_text()


def test_ingest_check_summary(tmp_path, capsys):
    _synth(tmp_path)
    capsys.readouterr()
    assert cli.main(["ingest-check", "--questions", str(tmp_path / "questions.csv"), "--responses", str(tmp_path / "responses.csv")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["question_sets"] == 4 and summary["questions"] == 20 and summary["responses"] == 240


@pytest.mark.parametrize(
    "questions,responses,needle",
    [
        ("question_id,target,opt1,opt2\nq1,t,a,b\nq1,t,a,c\n", "participant_id,question_id,selected\n", ":3: duplicate question id"),
        ("question_id,target,opt1,opt2\nq1,t,a,a\n", "participant_id,question_id,selected\n", ":2:"),
        ("question_id,target,opt1,opt2\nq1,t,a,b\n", "participant_id,question_id,selected\np,q1,a\np,q9,a\n", ":3: response to unknown question"),
        ("question_id,target,opt1,opt2\nq1,t,a,b\n", "participant_id,question_id,selected\np,q1,a\np,q1,b\n", ":3: participant 'p' already answered"),
        ("question_id,target,opt1,opt2\nq1,t,a,b\n", "participant_id,question_id,selected\np,q1,z\n", ":2: selected 'z'"),
        ("question_id,target,opt1,opt2\nq1,t,a,b\n", "question_id,selected,count\nq1,a,x\n", ":2: count 'x'"),
        ("question_id,target,opt1,opt2\nq1,t,a,b\n", "who,what\n", "header must be"),
    ],
)
def test_ingest_errors_name_the_row(tmp_path, capsys, questions, responses, needle):
    (tmp_path / "q.csv").write_text(questions)
    (tmp_path / "r.csv").write_text(responses)
    code = cli.main(["ingest-check", "--questions", str(tmp_path / "q.csv"), "--responses", str(tmp_path / "r.csv")])
    assert code == 2
    assert needle in capsys.readouterr().err


def test_aggregate_counts_are_accepted(tmp_path):
    (tmp_path / "q.csv").write_text("question_id,target,opt1,opt2,opt3\nq1,t,a,b,c\nq2,t,a,b,\n")
    (tmp_path / "r.csv").write_text("question_id,selected,count\nq1,a,4\nq1,c,2\nq2,b,3\n")
    qs = read_questions(tmp_path / "q.csv")
    t = read_responses(tmp_path / "r.csv", qs)
    assert t.aggregate_only and t.counts["q1"] == (4, 0, 2) and t.counts["q2"] == (0, 3)
    assert qs[1].choice_set == ("a", "b")


def _flat_json(report, prefix=""):
    if isinstance(report, dict):
        for k, v in report.items():
            yield from _flat_json(v, f"{prefix}{k}.")
    elif isinstance(report, list):
        for i, v in enumerate(report):
            yield from _flat_json(v, f"{prefix}{i}.")
    else:
        yield prefix[:-1], report


def test_report_json_and_csv_agree(tmp_path):
    _synth(tmp_path / "d")
    out = tmp_path / "o"
    args = ["test", "--questions", str(tmp_path / "d/questions.csv"), "--responses", str(tmp_path / "d/responses.csv"), "--out", str(out), *FAST]
    assert cli.main(args) == 0
    report = json.loads((out / "report.json").read_text())
    rows = dict(csv.reader(io.StringIO((out / "report.csv").read_text())))
    for k, v in _flat_json(report):
        cell = rows[k]
        if v is None:
            assert cell == ""
        elif isinstance(v, bool):
            assert cell == str(v).lower()
        elif isinstance(v, float):
            assert float(cell) == v
        else:
            assert cell == str(v)
    assert report["version"] and report["config"]["analysis"]["sampler"]["draws"] == 60
    assert len(report["sets"]) == 4
    assert (out / "posterior.npz").exists() and (out / "ppc_traces.npz").exists()
    exp = tmp_path / "e"
    assert cli.main(["export-traces", "--out", str(exp), "--posterior", str(out / "posterior.npz"), "--traces", str(out / "ppc_traces.npz")]) == 0
    sums = list(csv.DictReader(io.StringIO((exp / "ppc_sum_traces.csv").read_text())))
    p = sum(int(r["indicator"]) for r in sums) / len(sums)
    assert p == pytest.approx(report["aggregates"]["ppc_sum_p"])


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["synth", "--m", "2", "--n", "3"]) == 0
    assert (tmp_path / "env" / "questions.csv").exists()


def test_sampler_failure_exit_code(tmp_path, monkeypatch, capsys):
    _synth(tmp_path / "d")

    def boom(*a, **k):
        raise SamplerError("stuck")

    monkeypatch.setattr(cli, "analyze", boom)
    args = ["test", "--questions", str(tmp_path / "d/questions.csv"), "--responses", str(tmp_path / "d/responses.csv"), "--out", str(tmp_path)]
    assert cli.main(args) == 3
    assert "stuck" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--sigma", "0"]) == 2


def test_homogeneity_command(tmp_path):
    (tmp_path / "q.csv").write_text("question_id,target,opt1,opt2\nq1,t,a,b\nq2,u,a,b\n")
    rows = ["participant_id,question_id,selected"] + [f"p{i},q{j},{'ab'[(i + j) % 2]}" for i in range(12) for j in (1, 2)]
    (tmp_path / "r.csv").write_text("\n".join(rows) + "\n")
    out = tmp_path / "o"
    args = ["homogeneity", "--questions", str(tmp_path / "q.csv"), "--responses", str(tmp_path / "r.csv"), "--out", str(out), "--n-draws", "50"]
    assert cli.main(args) == 0
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["p_value"] <= 1.0
    assert (out / "information.csv").read_text().startswith("participant_id,information")


def test_sweep_rerun_is_byte_identical(tmp_path):
    base = ["sweep", "--m", "4", "--n", "20", "--repetitions", "2", "--grid", "0", "0.6", "--seed", "7", *FAST]
    for d in ("a", "b"):
        assert cli.main(base + ["--out", str(tmp_path / d)]) == 0
    for name in ("fig1_curves.csv", "fig2_rejections.csv", "sweep_runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "fig1_curves.csv").read_text().splitlines()[0]
    assert header.startswith("perturbation,")
