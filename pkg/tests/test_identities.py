import numpy as np

from anomalyflow import identities
from anomalyflow.identities import IDENTITIES, rel_err, run_identities


def test_small_suite_passes():
    results, _ = run_identities(seed=7, dims=(3, 4), trials=3)
    assert results and all(r.passed for r in results)
    assert {r.name for r in results} == {name for name, _, _ in IDENTITIES}


def test_zero_trials_gives_empty_report():
    assert run_identities(seed=0, dims=(3, 4, 5), trials=0) == ([], 0.0)


def test_n4_identity_skipped_in_three_dimensions():
    results, _ = run_identities(seed=0, dims=(3,), trials=1)
    skipped = [r for r in results if r.skipped]
    assert [r.name for r in skipped] == ["star-wedge-n-4"]
    assert skipped[0].passed and "SKIP" in skipped[0].line()


def test_seed_determines_errors():
    a, _ = run_identities(seed=3, dims=(3,), trials=2, names={"contract-2-2", "tr-iddb-omega"})
    b, _ = run_identities(seed=3, dims=(3,), trials=2, names={"contract-2-2", "tr-iddb-omega"})
    assert [r.max_rel_err for r in a] == [r.max_rel_err for r in b]


def test_wrong_coefficient_is_caught(monkeypatch):
    def broken(n, rng):
        return rel_err(1.0 + 1e-8, 1.0)

    monkeypatch.setattr(identities, "IDENTITIES", [("broken", 3, broken)])
    results, _ = run_identities(seed=0, dims=(3,), trials=2)
    assert not results[0].passed and results[0].line().startswith("FAIL")


def test_rel_err_uses_term_scale():
    assert rel_err(np.array([1e-12]), np.array([0.0]), scale=1.0) == 1e-12
