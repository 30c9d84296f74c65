import json

import numpy as np
import pytest

from cma.cli_runner import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main, run
from cma.config import RunConfig, parse_config, parse_rhs, serialize_config, validate_config
from cma.errors import ConfigError
from cma.grid_domain import read_csv, unit_ball


# -- parsing ----------------------------------------------------------------------------

def test_minimal_config_fills_defaults():
    cfg = parse_config("command = solve\nn = 1\nh = 1/32\nrhs = 2\ng = 0  # zero data\n")
    assert cfg.n == 1 and cfg.h == pytest.approx(1 / 32)
    assert cfg.shape == "ball" and cfg.R == 1.0 and cfg.init == "over" and cfg.perron_refine is False
    assert parse_rhs(cfg.rhs)(np.zeros((1, 2)), 0.0)[0] == 2.0


def test_config_errors_are_line_anchored():
    with pytest.raises(ConfigError) as exc:
        parse_config("command = solve\nentry = radial-n1\nh = -1\n")
    [issue] = exc.value.issues
    assert issue.kind == "TypeMismatch" and issue.key == "h" and issue.line == 3
    with pytest.raises(ConfigError) as exc:
        parse_config("command = solve\nentry = radial-n1\ncolour = red\nperron_refine = maybe\n")
    assert [(i.kind, i.line) for i in exc.value.issues] == [("UnknownKey", 3), ("TypeMismatch", 4)]
    with pytest.raises(ConfigError) as exc:
        parse_config("h = 0.1\n")
    kinds = {(i.kind, i.key) for i in exc.value.issues}
    assert ("MissingRequired", "command") in kinds and ("MissingRequired", "rhs") in kinds


def test_round_trip_is_byte_identical():
    full = RunConfig(command="compare", n=2, h=0.1, shape="box", R=1.5, rhs="product(radial(1, 2); 0:1, 1:3)",
                     g="radial(0, 1; rate=-1/2)", u="power(0, 1, 0.5)", v="constant(3)", tol=0.01, tol_cmp=0.02,
                     tol_err=0.003, out="runs/x", perron_refine=True, init="under", max_iters=77, eps=0.25,
                     delta=0.1, seed=4, margin=2.0)
    text = serialize_config(validate_config(full))
    again = serialize_config(parse_config(text))
    assert text == again
    assert parse_config(text) == parse_config(again)


# -- end to end ---------------------------------------------------------------------------------

def write_cfg(path, **kw):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()), encoding="utf-8")
    return str(path)


def record(out):
    return json.loads((out / "record.json").read_text(encoding="utf-8"))


def test_solve_radial_n1(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", command="solve", entry="radial-n1", h="1/16")
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_PASS
    rec = record(out)
    assert rec["pass"] and rec["error_inf"] <= rec["tol_err"]
    sol = read_csv(out / "solution.csv", unit_ball(1, 1 / 16))
    assert np.isfinite(sol.values[sol.grid.mask]).all()
    assert "error_inf:" in (out / "report.txt").read_text(encoding="utf-8")


def test_solve_with_refine_flag(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", command="solve", entry="radial-n1", h="1/16")
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out), "--perron-refine"]) == EXIT_PASS
    hist = record(out)["refine_history"]
    assert len(hist) >= 2 and all(a > b for a, b in zip(hist, hist[1:]))


def test_abp_radial_n1(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", command="abp", entry="radial-n1", h="1/16")
    assert main(["abp", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_PASS
    rec = record(tmp_path / "o")
    assert rec["pass"] and rec["bound"] == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("side,rhs,code", [("sub", 2, EXIT_PASS), ("super", 2, EXIT_PASS),
                                           ("super", 1, EXIT_FAIL), ("sub", 3, EXIT_FAIL)])
def test_check_commands(tmp_path, side, rhs, code):
    cfg = write_cfg(tmp_path / "c.cfg", command=f"check-{side}", entry="radial-n1", h="1/16", rhs=rhs, tol=0.01)
    assert main([f"check-{side}", "--config", cfg, "--out", str(tmp_path / "o")]) == code


def test_compare_envelope_regularize_modulus(tmp_path):
    base = dict(entry="radial-n1", h="1/16")
    cases = [("compare", dict(v="radial(-0.7, 1)"), EXIT_PASS),
             ("compare", dict(v="radial(-1.3, 1)"), EXIT_FAIL),
             ("envelope", {}, EXIT_PASS), ("regularize", dict(eps=0.25), EXIT_PASS), ("modulus", {}, EXIT_PASS)]
    for k, (cmd, extra, code) in enumerate(cases):
        out = tmp_path / f"o{k}"
        cfg = write_cfg(tmp_path / f"c{k}.cfg", command=cmd, **base, **extra)
        assert main([cmd, "--config", cfg, "--out", str(out)]) == code, cmd
        assert (out / "report.txt").exists() and (out / "record.json").exists()
    assert (tmp_path / "o2" / "envelope.csv").exists() and (tmp_path / "o2" / "contact.csv").exists()
    assert (tmp_path / "o3" / "regularized.csv").exists() and (tmp_path / "o4" / "modulus.csv").exists()


def test_usage_errors(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.cfg", command="solve", entry="radial-n1", h="1/16")
    assert main(["abp", "--config", cfg]) == EXIT_USAGE
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE
    assert main(["bogus", "--config", cfg]) == EXIT_USAGE
    assert main(["solve", "--config", cfg, "--h", "-0.1"]) == EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("command = solve\nh = -1\n", encoding="utf-8")
    assert main(["solve", "--config", str(bad)]) == EXIT_USAGE
    assert "TypeMismatch [h]" in capsys.readouterr().err
    assert run(RunConfig(command="solve", entry="radial-n2", n=1), tmp_path / "x") == EXIT_USAGE
    assert run(RunConfig(command="solve", entry="no-such"), tmp_path / "y") == EXIT_USAGE


def test_thread_cap_validated(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path / "c.cfg", command="modulus", entry="radial-n1", h="1/8")
    for bad in ("0", "-2", "many"):
        monkeypatch.setenv("CMA_THREADS", bad)
        assert main(["modulus", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE
    monkeypatch.setenv("CMA_THREADS", "2")
    assert main(["modulus", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_PASS


@pytest.mark.parametrize("cmd", ["solve", "abp", "envelope"])
def test_determinism(tmp_path, cmd):
    cfg = write_cfg(tmp_path / "c.cfg", command=cmd, entry="radial-n1", h="1/16", seed=3)
    blobs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        main([cmd, "--config", cfg, "--out", str(out)])
        blobs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
    assert blobs[0] == blobs[1]
