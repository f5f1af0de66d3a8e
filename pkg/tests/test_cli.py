import csv
import glob
import json
import os
import re
import subprocess
import sys
import time

import numpy as np
import pytest

from stealtheval.cli import main
from stealtheval.costlab import median_curve, read_trace
from stealtheval.oracles import make_oracle
from stealtheval.wire import connect_remote, serve_in_thread


def write_spec(tmp_path, **extra):
    spec = {
        "oracle": {"kind": "linear", "dim": 10, "seed": 0},
        "attacks": ["boundary", {"name": "rays"}],
        "samples": {"count": 3, "seed": 5},
        "flagged_budget": 60,
        "budgets": [5, 20, 60],
        "seed": 11,
    }
    spec.update(extra)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return str(path)


def test_run_writes_traces_reports_and_manifest(tmp_path):
    spec = write_spec(tmp_path)
    out = str(tmp_path / "out")
    assert main(["run", spec, "--out", out, "--workers", "2"]) == 0

    traces = sorted(glob.glob(os.path.join(out, "traces", "*.jsonl")))
    assert len(traces) == 6  # 2 attacks x 3 samples

    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert len(manifest["runs"]) == 6
    assert all(r["status"] == "ok" for r in manifest["runs"])
    assert all("config_digest" in r and "seed" in r for r in manifest["runs"])

    assert os.path.exists(os.path.join(out, "curves.csv"))
    # boundary is l2, rays is linf: one costs CSV and figure pair per norm
    for norm in ("l2", "linf"):
        assert os.path.exists(os.path.join(out, f"costs_{norm}.csv"))
        assert os.path.exists(os.path.join(out, f"curves_{norm}.png"))
        assert os.path.exists(os.path.join(out, f"frontier_{norm}.png"))


def test_run_is_byte_deterministic(tmp_path):
    spec = write_spec(tmp_path)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", spec, "--out", out1]) == 0
    assert main(["run", spec, "--out", out2]) == 0
    names = sorted(os.listdir(os.path.join(out1, "traces")))
    assert names == sorted(os.listdir(os.path.join(out2, "traces")))
    for name in names:
        a = open(os.path.join(out1, "traces", name), "rb").read()
        b = open(os.path.join(out2, "traces", name), "rb").read()
        assert a == b


def test_run_against_remote_oracle(tmp_path):
    # The server answers one connection at a time, so the run verb must
    # release each connection (sampling included) before the next dial.
    server, thread = serve_in_thread(
        make_oracle({"kind": "linear", "dim": 8, "seed": 3}))
    host, port = server.address
    out = str(tmp_path / "out")
    try:
        spec = write_spec(
            tmp_path,
            oracle={"kind": "remote", "endpoint": f"{host}:{port}"},
            samples={"count": 2, "seed": 5},
        )
        assert main(["run", spec, "--out", out]) == 0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert [r["status"] for r in manifest["runs"]] == ["ok"] * 4
    finally:
        server.stop()
        thread.join(timeout=5)
    # No re-query of final points: the oracle is gone, the traces stand alone.
    assert main(["verify", os.path.join(out, "traces")]) == 0


def test_run_rejects_unknown_attack(tmp_path, capsys):
    spec = write_spec(tmp_path, attacks=["opt", "fgsm"])
    assert main(["run", spec, "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "fgsm" in err and "stealthy_opt" in err


def test_run_rejects_bad_samples_and_budgets(tmp_path, capsys):
    spec = write_spec(tmp_path, samples={"count": 0}, budgets=[5, 2])
    assert main(["run", spec, "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "count" in err and "budgets" in err


def test_curves_csv_is_recomputable_from_traces(tmp_path):
    spec = write_spec(tmp_path)
    out = str(tmp_path / "out")
    assert main(["run", spec, "--out", out]) == 0
    rows = list(csv.DictReader(open(os.path.join(out, "curves.csv"))))
    traces = {}
    for path in glob.glob(os.path.join(out, "traces", "*.jsonl")):
        rec = read_trace(path)
        traces.setdefault(rec.attack, []).append(rec.to_trace())
    for attack, group in traces.items():
        want = median_curve(group, [5, 20, 60])
        got = [r for r in rows if r["attack"] == attack]
        assert len(got) == len(want)
        for row, p in zip(got, want):
            assert int(row["budget"]) == p.flagged_budget
            assert float(row["median"]) == pytest.approx(p.median_distance)


def test_verify_passes_then_catches_corruption(tmp_path, capsys):
    spec = write_spec(tmp_path)
    out = str(tmp_path / "out")
    assert main(["run", spec, "--out", out]) == 0
    trace_dir = os.path.join(out, "traces")
    assert main(["verify", trace_dir]) == 0
    assert "traces pass" in capsys.readouterr().out

    victim = sorted(glob.glob(os.path.join(trace_dir, "*.jsonl")))[0]
    lines = open(victim).read().splitlines()
    ev = json.loads(lines[1])
    ev["d"] = ev["d"] * 100  # best distance jumps upward mid-trace
    lines.insert(2, json.dumps(ev))
    open(victim, "w").write("\n".join(lines) + "\n")
    assert main(["verify", trace_dir]) == 1
    assert "distance increased" in capsys.readouterr().out


def test_verify_requeries_final_point(tmp_path, capsys):
    spec = write_spec(tmp_path, attacks=["rays"], samples={"count": 1, "seed": 5})
    out = str(tmp_path / "out")
    assert main(["run", spec, "--out", out]) == 0
    trace_dir = os.path.join(out, "traces")
    victim = glob.glob(os.path.join(trace_dir, "*.jsonl"))[0]
    lines = open(victim).read().splitlines()
    summary = json.loads(lines[-1])
    summary["final_point"] = [0.5] * 10  # cube center is flagged by design
    lines[-1] = json.dumps(summary, sort_keys=True)
    open(victim, "w").write("\n".join(lines) + "\n")
    assert main(["verify", trace_dir]) == 1
    assert "re-queries as flagged" in capsys.readouterr().out


def test_report_from_trace_dir(tmp_path):
    spec = write_spec(tmp_path)
    out = str(tmp_path / "out")
    assert main(["run", spec, "--out", out]) == 0
    reports = str(tmp_path / "reports")
    code = main(["report", os.path.join(out, "traces"), "--out", reports,
                 "--budgets", "5", "20", "60",
                 "--cost-model", "0:1", "--cost-model", "1:1"])
    assert code == 0
    assert os.path.exists(os.path.join(reports, "curves.csv"))
    assert os.path.exists(os.path.join(reports, "costs_l2.csv"))
    assert os.path.exists(os.path.join(reports, "curves_linf.png"))


def test_report_empty_dir_fails(tmp_path, capsys):
    assert main(["report", str(tmp_path), "--out", str(tmp_path)]) == 2
    assert "no trace files" in capsys.readouterr().err


def test_plan_eggdrop_prints_reference_values(capsys):
    assert main(["plan-eggdrop", "100", "2"]) == 0
    out = capsys.readouterr().out
    assert "worst-case probes: 14" in out
    assert main(["plan-eggdrop", "10000", "2"]) == 0
    assert "worst-case probes: 141" in capsys.readouterr().out


def test_plan_eggdrop_rejects_bad_args(capsys):
    assert main(["plan-eggdrop", "0", "2"]) == 2


def test_serve_synthetic_end_to_end(tmp_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "stealtheval.cli", "serve-synthetic",
         json.dumps({"kind": "linear", "dim": 4, "seed": 0}), "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        m = re.search(r"on ([\d.]+):(\d+)", line)
        assert m, f"no address line: {line!r}"
        oracle, descriptor = connect_remote((m.group(1), int(m.group(2))))
        assert descriptor.dimension == 4
        assert oracle.decide(np.full(4, 0.5))  # center is flagged by design
        oracle.close()
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_serve_synthetic_rejects_bad_spec(capsys):
    assert main(["serve-synthetic", '{"kind": "warp"}']) == 2
