import json
import math

import numpy as np
import pytest

from wgls import convergence
from wgls.convergence import (CSV_COLUMNS, ConvergenceReport, LevelResult, StudyConfig, compute_orders,
                              emit_report, make_problem, report_from_json, run_study)
from wgls.lsfem import SolverError
from wgls.polymesh import save_mesh, generate_triangular


@pytest.mark.parametrize("name, lam", [("sin", 1.0), ("sin", 100.0), ("linear", None), ("quadratic", None),
                                       ("zero", 1.0)])
def test_registry_residual_checks(name, lam):
    prob = make_problem(name, lam)
    assert prob.residual_check(100) <= 1e-12
    assert prob.gradient_check() <= 1e-6


def test_unknown_problem():
    with pytest.raises(ValueError):
        make_problem("nope")


def test_sin_reaction_coefficient():
    c = make_problem("sin", 100.0).c
    assert c(np.array([1.5, -0.5])) == pytest.approx(100 * 1.0 * -1.0)


@pytest.mark.parametrize("errors, expected", [
    ((0.1, 0.025), [2.0]),
    ((0.340e-3, 0.844e-4, 0.210e-4), [2.01, 2.01]),
    ((1.0, 1.0, 1.0), [0.0, 0.0]),
])
def test_compute_orders(errors, expected):
    np.testing.assert_allclose(compute_orders(errors), expected, atol=5e-3)


def test_compute_orders_sentinel():
    out = compute_orders([1.0, 0.0, 0.5, -1.0])
    assert all(math.isnan(v) for v in out)


@pytest.mark.parametrize("kwargs", [dict(k=0), dict(k=7), dict(k=2, r=1), dict(levels=(3, 2)),
                                    dict(family="polygonal", levels=(0, 2)), dict(family="file"),
                                    dict(family="hex"), dict(solver="gmres"), dict(problem="nope")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        StudyConfig(**kwargs)


def test_family_alias():
    assert StudyConfig(family="nonconvex-polygonal", levels=(1, 2)).family == "polygonal"


def fake_row(level, h, e):
    return LevelResult(level, 2, 8, 40, 32, h, e, 2 * e, 3 * e, 0, 0.0, 0.01)


def test_empty_report_is_header_only_csv():
    text = emit_report(ConvergenceReport(StudyConfig()), "csv")
    assert text == ",".join(CSV_COLUMNS) + "\n"


def test_three_level_report_counts():
    rep = ConvergenceReport(StudyConfig(), [fake_row(1, 1.0, 0.1), fake_row(2, 0.5, 0.025), fake_row(3, 0.25, 0.00625)])
    lines = emit_report(rep, "csv").splitlines()
    assert len(lines) == 4
    rows = [ln.split(",") for ln in lines[1:]]
    ords = [r[CSV_COLUMNS.index("ord_l2")] for r in rows]
    assert ords[0] == "" and float(ords[1]) == pytest.approx(2.0) and float(ords[2]) == pytest.approx(2.0)
    assert sum(o != "" for o in ords) == 2


def test_orders_skip_pairs_without_halving():
    rep = ConvergenceReport(StudyConfig(), [fake_row(1, 1.0, 0.1), fake_row(2, 0.3, 0.01)])
    assert rep.orders("err_l2") == [None, None]


def test_json_round_trip_exact():
    rows = [fake_row(1, 1.0, 1 / 3), fake_row(2, 0.5, np.pi * 1e-5), fake_row(3, 0.25, 2.0 ** -40)]
    rep = ConvergenceReport(StudyConfig(), rows, error="level 4: boom")
    back = report_from_json(emit_report(rep, "json"))
    assert back.rows == rep.rows
    assert back.config == rep.config
    assert back.error == rep.error
    assert emit_report(back, "json") == emit_report(rep, "json")


def test_json_nan_orders_are_null():
    rep = ConvergenceReport(StudyConfig(), [fake_row(1, 1.0, 0.1), fake_row(2, 0.5, 0.1)], exact=True)
    data = json.loads(emit_report(rep, "json"))
    assert data["orders"]["err_l2"] == [None, None]


def test_markdown_layout():
    rep = ConvergenceReport(StudyConfig(), [fake_row(1, 1.0, 0.649e-4), fake_row(2, 0.5, 0.1623e-4)])
    text = emit_report(rep, "markdown")
    assert "0.649E-4" in text
    assert "| 2 | 0.162E-4 | 2.0 |" in text


def test_emit_to_file(tmp_path):
    path = tmp_path / "r.csv"
    text = emit_report(ConvergenceReport(StudyConfig(), [fake_row(1, 1.0, 0.1)]), "csv", path)
    assert path.read_text() == text


def test_emit_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_report(ConvergenceReport(StudyConfig()), "csv", tmp_path / "missing" / "r.csv")


def test_run_study_rows_and_determinism():
    cfg = StudyConfig(levels=(1, 3), k=1)
    a, b = run_study(cfg), run_study(cfg)
    assert [r.level for r in a.rows] == [1, 2, 3]
    assert a.complete and not a.truncated
    assert [r.n_dofs for r in a.rows] == [r.n_dofs for r in b.rows]
    assert emit_report(a, "csv") == emit_report(b, "csv")


def test_patch_study_orders_are_sentinel():
    rep = run_study(StudyConfig(levels=(1, 2), k=1, problem="linear"))
    assert max(rep.errors("err_l2") + rep.errors("err_energy")) <= 1e-10
    assert math.isnan(rep.orders("err_l2")[1])
    assert "---" in emit_report(rep, "markdown")


def test_partial_report_on_solver_failure(monkeypatch):
    real = convergence.solve
    calls = []

    def flaky(system, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise SolverError("not SPD")
        return real(system, **kw)

    monkeypatch.setattr(convergence, "solve", flaky)
    rep = run_study(StudyConfig(levels=(1, 3)))
    assert len(rep.rows) == 1
    assert not rep.complete and "level 2" in rep.error


def test_dof_budget_truncates():
    rep = run_study(StudyConfig(levels=(1, 4), max_dofs=1000))
    assert rep.truncated
    assert all(r.n_free <= 1000 for r in rep.rows)
    assert len(rep.rows) < 4


def test_file_family(tmp_path):
    paths = []
    for level in (2, 3):
        p = tmp_path / f"m{level}.txt"
        save_mesh(generate_triangular(level), p)
        paths.append(p)
    rep = run_study(StudyConfig(family="file", k=1, mesh_files=paths))
    ref = run_study(StudyConfig(levels=(2, 3), k=1))
    np.testing.assert_allclose(rep.errors("err_l2"), ref.errors("err_l2"), rtol=1e-12)


@pytest.mark.parametrize("family, levels, k", [("triangular", (3, 5), 1), ("polygonal", (2, 4), 1),
                                               ("triangular", (2, 4), 2)])
def test_order_onset(family, levels, k):
    rep = run_study(StudyConfig(family=family, levels=levels, k=k))
    for name in ("err_l2", "err_wgrad", "err_energy"):
        o = rep.orders(name)
        assert o[-1] >= o[1] - 0.3


@pytest.mark.slow
def test_k1_triangular_levels_5_to_7():
    rep = run_study(StudyConfig(levels=(5, 7), k=1))
    assert rep.orders("err_l2")[-1] == pytest.approx(2.0, abs=0.2)
    assert rep.orders("err_energy")[-1] == pytest.approx(1.0, abs=0.2)
