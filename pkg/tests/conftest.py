import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vfeel.waveform import IsacConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cfg():
    return IsacConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reduced_timed(request):
    """Reduced-profile config, dataset, generation seconds and whether it was generated now.

    The dataset is cached in pytest's cache directory; ``--cache-clear``
    forces regeneration.
    """
    from vfeel.harness import datafile, experiments
    from vfeel.harness.config import load_config

    cfg = load_config(profile="reduced")
    cfg.out = str(request.config.cache.mkdir("vfeel-reduced"))
    fresh = not all(p.is_file() for p in datafile.split_paths(experiments.dataset_base(cfg)))
    t0 = time.perf_counter()
    ds = experiments.load_or_generate(cfg)
    return cfg, ds, time.perf_counter() - t0, fresh


@pytest.fixture(scope="session")
def reduced(reduced_timed):
    return reduced_timed[:2]


# ---- acceptance report: one PASS/FAIL line per criterion

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, title, clause, ok, detail)`` records one checked clause."""
    def record(n, title, clause, ok, detail=""):
        ACCEPTANCE.setdefault(n, [title, []])[1].append((clause, bool(ok), detail))
        print(f"criterion {n} [{clause}]: {'PASS' if ok else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, clauses = ACCEPTANCE[n]
        ok = all(c[1] for c in clauses)
        failed = [c[0] for c in clauses if not c[1]]
        detail = "; ".join(f"{c[0]}: {c[2]}" if c[2] else c[0] for c in clauses)
        tail = f" (failed: {', '.join(failed)})" if failed else ""
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {n}. {title}{tail} | {detail}")
