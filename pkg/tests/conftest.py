def pytest_runtest_logreport(report):
    # one visible verdict line per acceptance check, independent of verbosity
    if "test_acceptance.py" not in report.nodeid or report.when != "call":
        return
    status = "PASS" if report.passed else "FAIL"
    name = report.nodeid.split("::")[-1]
    print(f"\n[acceptance] {status} {name}")
