import json

import pytest

from rtvlab.cli import build_parser, main

SMALL_VIDEO = {"pattern": "textured-noise", "width": 96, "height": 64, "frames": 12}


def _cfg(tmp_path, name, body):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return str(p)


def test_help_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("simulate", "loss-sweep", "grad-check", "codec-bench", "trace-tools", "pad-video"):
        assert cmd in text


def test_unknown_config_key(tmp_path, capsys):
    cfg = _cfg(tmp_path, "c.json", {"schemes": ["grace"], "bogus_knob": 1})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "bogus_knob" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_files(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    cfg = _cfg(tmp_path, "c.json", {"trace": str(tmp_path / "missing.csv"), "video": SMALL_VIDEO})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert main(["trace-tools", "validate", str(tmp_path / "missing.csv")]) == 2


def test_bad_values(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"rates": [0.0, 0.95]})
    assert main(["loss-sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    cfg = _cfg(tmp_path, "d.json", {"controller": "gcc"})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = _cfg(tmp_path, "sim.json", {
        "schemes": ["grace", "fec"], "video": SMALL_VIDEO,
        "trace": {"segments": [[0.2, 2e6], [0.3, 0.5e6]]},
    })
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    for name in ("grace/frames.csv", "grace/report.json", "fec/frames.csv", "summary.csv", "targets.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["command"] == "simulate" and "summary.csv" in man["outputs"]
    assert len(man["config_sha256"]) == 64


def test_loss_sweep_outputs(tmp_path, capsys):
    cfg = _cfg(tmp_path, "ls.json", {"video": SMALL_VIDEO | {"frames": 3}, "rates": [0.0, 0.6], "seeds": 2,
                                     "budget_bps": 1e6, "ipatch_k": 10})
    out = tmp_path / "ls"
    assert main(["loss-sweep", "--config", cfg, "--out", str(out), "--seed", "4"]) == 0
    lines = (out / "loss_sweep.csv").read_text().splitlines()
    assert lines[0] == "scheme,loss_rate,mean_psnr,ci95,decodable_frac,total_bytes"
    assert any(line.startswith("fec,0.6,undecodable") for line in lines)
    assert json.loads((out / "manifest.json").read_text())["seed"] == 4
    assert "grace_monotone_within_ci" in json.loads((out / "summary.json").read_text())


def test_grad_check(tmp_path, capsys):
    cfg = _cfg(tmp_path, "g.json", {"n": 100000})
    assert main(["grad-check", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
    out = capsys.readouterr().out
    assert out.rstrip().endswith("PASS")
    assert json.loads((tmp_path / "g" / "grad_check.json").read_text())["passed"] is True


def test_grad_check_fail_exit(tmp_path, capsys):
    cfg = _cfg(tmp_path, "g.json", {"n": 50, "tolerance": 0.001})
    assert main(["grad-check", "--config", cfg]) == 1
    assert capsys.readouterr().out.rstrip().endswith("FAIL")


def test_codec_bench(tmp_path, capsys):
    cfg = _cfg(tmp_path, "cb.json", {"video": SMALL_VIDEO | {"frames": 3}})
    assert main(["codec-bench", "--config", cfg, "--out", str(tmp_path / "cb")]) == 0
    rows = (tmp_path / "cb" / "rungs.csv").read_text().splitlines()
    assert rows[0] == "rung,step,bytes,packets,psnr_db" and len(rows) == 12
    assert "encode_fps" in json.loads((tmp_path / "cb" / "throughput.json").read_text())


def test_trace_tools(tmp_path, capsys):
    path = tmp_path / "step.csv"
    assert main(["trace-tools", "step", "--segments", "1:8e6,1:2e6", "--out", str(path)]) == 0
    assert main(["trace-tools", "validate", str(path)]) == 0
    assert capsys.readouterr().out.startswith("OK: ")
    assert main(["trace-tools", "step", "--segments", "1-8e6"]) == 2
    mm = tmp_path / "mm.txt"
    mm.write_text("".join(f"{t}\n" for t in range(0, 1000, 2)))
    assert main(["trace-tools", "convert", str(mm), "--out", str(tmp_path / "mm.csv")]) == 0
    assert main(["trace-tools", "validate", str(tmp_path / "mm.csv")]) == 0


def test_bad_trace_file(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time_s,bps\n0,1e6\n0.2,2e6\n0.1,2e6\n")
    assert main(["trace-tools", "validate", str(bad)]) == 2
    bad.write_text("time_s,bps\n0,1e6\n0.1,-5\n")
    assert main(["trace-tools", "validate", str(bad)]) == 2


def test_scheme_flag_rejects_unknown():
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--scheme", "h265", "--out", "x"])
    assert e.value.code == 2


def test_failed_run_leaves_nothing(tmp_path, monkeypatch, capsys):
    from rtvlab import experiments

    def boom(*a, **k):
        raise RuntimeError("simulated crash")

    monkeypatch.setattr(experiments, "compare", boom)
    cfg = _cfg(tmp_path, "sim.json", {"video": SMALL_VIDEO, "trace": {"bps": 1e6, "seconds": 1}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "run")]) == 1
    assert "simulated crash" in capsys.readouterr().err
    assert sorted(p.name for p in tmp_path.iterdir()) == ["sim.json"]
