import numpy as np
import pytest

from maglorentz.randomness import RandomStream


@pytest.fixture
def stream():
    return RandomStream(20260809, 0)


def fresh_stream(index=0, seed=20260809):
    return RandomStream(seed, index)


def assert_close(a, b, tol, msg=""):
    assert abs(a - b) <= tol, f"{msg}: |{a} - {b}| = {abs(a - b)} > {tol}"


def chi2_pvalue(counts, probs):
    """Chi-square goodness-of-fit p-value against given cell probabilities."""
    from scipy.stats import chi2
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    expected = n * np.asarray(probs, dtype=float)
    stat = float(np.sum((counts - expected) ** 2 / expected))
    return chi2.sf(stat, df=counts.size - 1)
