"""Acceptance criteria 1 to 8, one PASS/FAIL line each.

The desk-scale runs take several minutes apiece on one core.  Each runs
once per session and is shared by the criteria that read from it.
"""
import pytest

from hpdpg.app import verify

# pinned tolerances
EXACT_ERR = 1e-9
EXACT_ETA = 1e-8
EXACT_SECONDS = 10.0
BL_EPS = 0.05
BL_MAX_DOFS = 30_000
BL_TARGET = 1e-3
BL_ADVANTAGE = 5
RUN_SECONDS = 15 * 60
CORRELATION = -0.97
ASPECT = 0.25
EJ_EPS = 0.1
EJ_MAX_DOFS = 40_000
EJ_TARGET = 1e-3
FICHERA_MAX_DOFS = 60_000
FICHERA_DROP = 10.0
FICHERA_GRADING = 1 / 16
ORACLE_SECONDS = 120.0
# stop the adaptive loop a minute early so the summary fits in the budget
LOOP_SECONDS = RUN_SECONDS - 60


@pytest.fixture
def report(capsys):
    def emit(label, checks):
        ok = all(c.passed for c in checks)
        detail = "; ".join(f"{c.name}: {c.detail}" for c in checks)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def boundary_layer():
    checks = verify.boundary_layer_checks(eps=BL_EPS, max_dofs=BL_MAX_DOFS,
                                          max_seconds=LOOP_SECONDS)
    return {c.name: c for c in checks}


@pytest.fixture(scope="module")
def oracle_results():
    return {c.name: c for c in verify.oracle_checks(seed=0)}


def test_criterion_1_exactness(report):
    checks = verify.exactness_checks(p_max=6)
    for c in checks:
        assert c.data["err"] < EXACT_ERR and c.data["eta"] < EXACT_ETA
        assert c.data["seconds"] < EXACT_SECONDS
    assert report("criterion 1 exactness", checks)


def test_criterion_2_boundary_layer_vs_iso(boundary_layer, report):
    c = boundary_layer["boundary layer hp vs iso-p2"]
    assert report("criterion 2 boundary layer hp vs iso-p2", [c])


def test_criterion_3_exponential_signature(boundary_layer, report):
    c = boundary_layer["exponential convergence signature"]
    assert report("criterion 3 exponential convergence", [c])


def test_criterion_4_anisotropy(boundary_layer, report):
    c = boundary_layer["anisotropy at the layer"]
    assert report("criterion 4 anisotropy at the layer", [c])


def test_criterion_5_eriksson_johnson(report):
    checks = verify.eriksson_johnson_checks(eps=EJ_EPS, max_dofs=EJ_MAX_DOFS,
                                            max_seconds=LOOP_SECONDS)
    assert report("criterion 5 eriksson-johnson", checks)


def test_criterion_6_fichera(report):
    checks = verify.fichera_checks(max_dofs=FICHERA_MAX_DOFS, max_seconds=LOOP_SECONDS)
    assert report("criterion 6 fichera", checks)


@pytest.mark.parametrize("name", ["dense oracle", "mesh oracle", "doerfler", "compete",
                                  "closure", "unrefine"])
def test_criterion_7_oracles(oracle_results, name, report):
    checks = [c for k, c in oracle_results.items() if k.startswith(name)]
    assert checks
    for c in checks:
        assert c.data["seconds"] < ORACLE_SECONDS
    assert report(f"criterion 7 {name}", checks)


def test_criterion_8_rate_bookkeeping(boundary_layer, report):
    c = boundary_layer["rate bookkeeping"]
    assert report("criterion 8 rate bookkeeping", [c])
