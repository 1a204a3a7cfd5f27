#!/usr/bin/env python3
"""
Test runner with coverage reporting for replay-sam.
Runs every test, including the method-ordering benchmark; pass --fast to skip it.
"""

import subprocess
import sys


def run_tests_with_coverage(include_slow: bool = True) -> int:
    """Run all tests with coverage and generate reports"""

    print("Running tests with coverage analysis...\n")

    cmd = [
        "pytest",
        "src",
        "--cov=src",
        "--cov-report=term-missing",
        "--cov-report=html",
        "--cov-report=xml",
        "--cov-fail-under=80",
        "-v",
    ]
    if not include_slow:
        cmd += ["-m", "not slow"]

    try:
        result = subprocess.run(cmd, check=False)
    except FileNotFoundError:
        print("pytest not found! Install with: pip install -r requirements.txt")
        return 1

    print("\n" + "=" * 60)
    if result.returncode == 0:
        print("ALL TESTS PASSED WITH SUFFICIENT COVERAGE")
        print("=" * 60)
        print("\nCoverage reports:")
        print("  - Terminal: see above")
        print("  - HTML: htmlcov/index.html")
        print("  - XML: coverage.xml")
        return 0

    print("TESTS FAILED OR COVERAGE BELOW THRESHOLD")
    print("=" * 60)
    return 1


if __name__ == "__main__":
    sys.exit(run_tests_with_coverage(include_slow="--fast" not in sys.argv[1:]))
