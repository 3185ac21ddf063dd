from stokes2p.selftest import ALL_CHECKS, run_selftest


def test_all_checks_pass():
    results = run_selftest()
    assert len(results) == len(ALL_CHECKS)
    failures = [r for r in results if not r.ok]
    assert not failures, [f"{r.name}: {r.detail}" for r in failures]


def test_filter():
    results = run_selftest("shoelace")
    assert len(results) == 1
    assert results[0].name == "shoelace_area"
