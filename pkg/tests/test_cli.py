import json

import pytest

from slelab.cli import RunConfig, UsageError, main, parse_args, run


def manifest_of(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text())


# -- parsing ---------------------------------------------------------------------

def test_trace_echo():
    cfg = parse_args(["trace", "--kappa", "8", "--steps", "20000", "--seed", "42", "--out", "t.csv"])
    assert isinstance(cfg, RunConfig)
    assert cfg.command == "trace" and cfg.kappa == 8.0 and cfg.steps == 20000 and cfg.seed == 42
    assert cfg.out == "t.csv"


def test_negative_kappa_exit_2(capsys):
    assert main(["trace", "--kappa", "-1"]) == 2
    assert "kappa" in capsys.readouterr().err


def test_empty_argv_prints_help(capsys):
    assert main([]) == 0
    assert "usage" in capsys.readouterr().out.lower()


@pytest.mark.parametrize("argv", [
    ["trace"],
    ["trace", "--kappa", "2", "--kappa", "3"],
    ["drive", "--kappa", "2", "--rho", "1", "--rho", "2", "--at", "0.1"],
    ["drive", "--kappa", "2", "--steps", "10", "--dt", "0.1", "--T", "2"],
    ["drive", "--kappa", "2", "--param", "x=1"],
    ["experiment"],
    ["experiment", "--experiment", "nope"],
    ["experiment", "--experiment", "qv_limit", "--kappa", "0"],
    ["hcap", "--format", "svg"],
    ["hcap", "--fixture", "slit", "--input", "x.pgm"],
    ["trace", "--kappa", "2", "--threads", "0"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    with pytest.raises(UsageError):
        parse_args(argv)
    assert main(argv) == 2


def test_config_file_and_flag_override(tmp_path):
    conf = tmp_path / "run.ini"
    conf.write_text("kappa = 6\nsteps = 100\nseed = 3\n")
    cfg = parse_args(["trace", "--config", str(conf), "--seed", "9"])
    assert cfg.kappa == 6.0 and cfg.steps == 100 and cfg.seed == 9
    exp_conf = tmp_path / "exp.ini"
    exp_conf.write_text("[run]\nexperiment = driving_law\nparam.alpha = 0.01\nparam.pairs = [[6, 0]]\n")
    with pytest.raises(UsageError):
        parse_args(["trace", "--kappa", "1", "--config", str(exp_conf)])  # param.* only for experiments
    exp = parse_args(["experiment", "--config", str(exp_conf), "--param", "alpha=0.05"])
    assert exp.params["param"] == {"alpha": 0.05, "pairs": [[6, 0]]}


def test_unknown_config_key(tmp_path):
    conf = tmp_path / "run.ini"
    conf.write_text("kappa = 6\ncolour = blue\n")
    assert main(["trace", "--config", str(conf)]) == 2


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("SLE_LAB_THREADS", "3")
    assert parse_args(["trace", "--kappa", "1"]).threads == 3
    assert parse_args(["trace", "--kappa", "1", "--threads", "2"]).threads == 2
    monkeypatch.setenv("SLE_LAB_THREADS", "many")
    with pytest.raises(UsageError):
        parse_args(["trace", "--kappa", "1"])


# -- running -----------------------------------------------------------------------

def test_trace_twice_byte_identical(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["trace", "--kappa", "6", "--steps", "500", "--dt", "1e-3", "--seed", "5", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    m = manifest_of(tmp_path / "a.csv")
    assert m["exit_code"] == 0 and m["config"]["seed"] == 5
    assert set(m["artifacts"]) == {"a.csv"} and len(m["artifacts"]["a.csv"]) == 64
    assert "numpy" in m["versions"]


def test_experiment_threads_identical_json(tmp_path):
    reports = []
    for threads in (1, 8):
        out = tmp_path / f"run{threads}"
        code = main(["experiment", "--experiment", "bessel_hitting", "--samples", "200", "--dt", "1e-3",
                     "--threads", str(threads), "--out", str(out)])
        assert code == 0
        assert (out / "manifest.json").exists()
        reports.append((out / "bessel_hitting_report.json").read_bytes())
    assert reports[0] == reports[1]


def test_hcap_slit_fixture(tmp_path):
    out = tmp_path / "h.json"
    assert main(["hcap", "--fixture", "slit", "--height", "1", "--samples", "20000", "--out", str(out)]) == 0
    est = json.loads(out.read_text())
    assert abs(est["value"] - 0.5) <= 3 * est["stderr"]


def test_drive_formats(tmp_path):
    for fmt in ("csv", "json", "svg"):
        out = tmp_path / f"d.{fmt}"
        assert main(["drive", "--kappa", "4", "--rho", "1", "--at", "0.5", "--steps", "100",
                     "--dt", "1e-4", "--format", fmt, "--out", str(out)]) == 0
        assert out.stat().st_size > 0


def test_unwritable_output_exit_1(tmp_path, capsys):
    out = tmp_path / "missing" / "t.csv"
    assert main(["trace", "--kappa", "2", "--steps", "10", "--out", str(out)]) == 1
    assert "missing" in capsys.readouterr().err


def test_computational_failure_writes_manifest(tmp_path):
    out = tmp_path / "d.csv"
    # coarse grid next to a force point is refused
    code = main(["drive", "--kappa", "4", "--rho", "1", "--at", "0.01", "--steps", "10", "--dt", "0.1",
                 "--out", str(out)])
    assert code == 1
    m = manifest_of(out)
    assert m["exit_code"] == 1 and "Refusal" in m["message"]


def test_run_accepts_config_object(tmp_path):
    cfg = RunConfig("hcap", {"fixture": "rectangle", "samples": 500, "format": "csv"}, out=str(tmp_path / "r.csv"))
    assert run(cfg) == 0
    assert (tmp_path / "r.csv").read_text().startswith("value,stderr")
