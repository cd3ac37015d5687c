import sys

import numpy as np
import pytest

from addl.dataset import LabeledDataset, one_hot, partition
from addl.model import AddlModel, Codes, Hyperparams


def random_instance(seed, n=None, k=None, c=None, N=None, **hyper):
    """Small random dataset, model and codes (n <= 8, k <= 4, N <= 20)."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 9))
    k = k or int(rng.integers(1, 5))
    c = c or int(rng.integers(2, 5))
    N = N or int(rng.integers(max(c, 6), 21))
    labels = np.concatenate([np.arange(c), rng.integers(0, c, N - c)])
    rng.shuffle(labels)
    ds = LabeledDataset(rng.standard_normal((n, N)), labels, c)
    params = dict(alpha=float(rng.uniform(0.01, 1.0)), tau=float(rng.uniform(0.01, 1.0)),
                  lam=float(rng.uniform(0.01, 1.0)), k=k, seed=seed)
    params.update(hyper)
    hp = Hyperparams(**params)
    model = AddlModel(
        D=[rng.standard_normal((n, k)) for _ in range(c)],
        P=[rng.standard_normal((k, n)) for _ in range(c)],
        W=[rng.standard_normal((c, k)) for _ in range(c)],
        hyper=hp,
    )
    counts = ds.class_counts()
    codes = Codes(S=[rng.standard_normal((k, m)) for m in counts],
                  lam_diag=[rng.uniform(0.2, 3.0, k) for _ in range(c)])
    return ds, model, codes, partition(ds), one_hot(ds)


@pytest.fixture
def instance():
    return random_instance(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
