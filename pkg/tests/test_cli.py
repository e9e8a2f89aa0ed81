import csv
import io
import json

import pytest

from lapsepricing.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main

BASE = {
    "model": {"kind": "brownian", "a": 1.0, "b": 0.1},
    "mortality": {"kind": "step", "knots": [], "values": [0.2]},
    "density": {"kind": "gaussian", "mean": 0.0, "stddev": 1.0},
    "contract": {"A": 1.0, "r": 0.05},
    "simulation": {"n_paths": 2000, "dt": 0.05},
    "backend": "bm-step",
    "seed": 7,
}


def run(tmp_path, cfg, *extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "out.csv"
    code = main([extra[0], "--config", str(path), "--out", str(out), *extra[1:]])
    rows = list(csv.reader(io.StringIO(out.read_text()))) if out.exists() else None
    return code, rows


def test_price_constant_rates(tmp_path):
    code, rows = run(tmp_path, dict(BASE, premiums=[0.2, 0.55]), "price")
    assert code == EXIT_OK
    assert rows[0] == ["p", "value", "std_error", "backend"]
    assert abs(float(rows[1][1])) < 1e-9
    assert float(rows[2][1]) == pytest.approx(0.35 / 0.25)
    assert rows[1][3] == "bm-step"


def test_price_empty_premium_list(tmp_path):
    code, rows = run(tmp_path, dict(BASE, premiums=[]), "price")
    assert code == EXIT_OK and rows == [["p", "value", "std_error", "backend"]]


def test_backend_mismatch_is_config_error(tmp_path, capsys):
    code, rows = run(tmp_path, dict(BASE, premiums=[0.1]), "price", "--backend", "bessel")
    assert code == EXIT_CONFIG and rows is None
    assert "config error" in capsys.readouterr().err


def test_missing_key_is_config_error(tmp_path):
    cfg = {k: v for k, v in BASE.items() if k != "mortality"}
    assert run(tmp_path, cfg, "price")[0] == EXIT_CONFIG


def test_seed_out_of_range(tmp_path):
    assert run(tmp_path, BASE, "price", "--seed", str(2 ** 64))[0] == EXIT_CONFIG


def test_solve_single_root_deterministic(tmp_path):
    cfg = dict(BASE, mortality={"kind": "step", "knots": [0.0], "values": [0.1, 0.3]})
    code, rows = run(tmp_path, cfg, "solve")
    assert code == EXIT_OK
    assert rows[0] == ["root", "bracket_lo", "bracket_hi", "residual", "status"]
    assert len(rows) == 2 and rows[1][4] == "UNIQUE"
    lo, root, hi = float(rows[1][1]), float(rows[1][0]), float(rows[1][2])
    assert lo <= root <= hi and 0.1 < root < 0.3
    assert run(tmp_path, cfg, "solve")[1] == rows


def test_solve_mc_backend_reproducible(tmp_path):
    cfg = dict(BASE, backend="mc", search={"grid_size": 8, "tolerance": 1e-8})
    first = run(tmp_path, cfg, "solve", "--threads", "1")[1]
    second = run(tmp_path, cfg, "solve", "--threads", "3")[1]
    assert first == second
    assert float(first[1][0]) == pytest.approx(0.2, abs=1e-7)


def test_solve_none_found(tmp_path):
    # root sits at p = 200, beyond the search range [0, 4]
    cfg = dict(BASE, contract={"A": 1000.0, "r": 0.05}, search={"max_expansions": 2})
    code, rows = run(tmp_path, cfg, "solve")
    assert code == EXIT_OK
    assert rows[1] == ["", "", "", "", "NONE_FOUND"]


def test_sweep_n(tmp_path):
    cfg = dict(BASE, backend="mc", sweep={"N_values": [5, 50]})
    code, rows = run(tmp_path, cfg, "sweep-n")
    assert code == EXIT_OK and [r[0] for r in rows[1:]] == ["5", "50", "inf"]
    assert all(float(r[1]) == pytest.approx(0.2, abs=1e-9) for r in rows[1:])


def test_bessel_price(tmp_path):
    cfg = {"model": {"kind": "bessel2"}, "mortality": {"kind": "affine", "slope": 1.0, "intercept": 0.01},
           "surrender": {"kind": "affine", "phi": [0.1, 0.0], "rho": [0.02, 0.0]},
           "density": {"kind": "exponential", "rate": 1.0}, "contract": {"A": 1.0, "r": 0.05},
           "backend": "bessel", "premiums": [0.0, 3.0]}
    code, rows = run(tmp_path, cfg, "price")
    assert code == EXIT_OK and float(rows[1][1]) < 0 < float(rows[2][1])
    assert rows[1][2] == "0.0"


def test_validate_zero_budget_skips(tmp_path):
    code, rows = run(tmp_path, {"simulation": {"n_paths": 0}}, "validate")
    assert code == EXIT_OK
    statuses = {r[1] for r in rows[1:]}
    assert "SKIPPED" in statuses and "FAIL" not in statuses


@pytest.mark.slow
def test_validate_detects_injected_factor(tmp_path):
    code, rows = run(tmp_path, {"simulation": {"n_paths": 20000}}, "validate", "--inject-gamma-factor2")
    assert code == EXIT_FAILED
    assert any(r[1] == "FAIL" and r[0].startswith("bm_step") for r in rows[1:])


def test_exit_code_constants_distinct():
    assert len({EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_BACKEND}) == 4
