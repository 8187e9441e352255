import random
import subprocess
import sys

import numpy as np
import pytest

from csbench import kernels


def oracle_distance(ref, hyp):
    """Exhaustive recursive edit distance (textbook recurrence, no memo)."""

    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        best = go(i - 1, j - 1) + (1 if ref[i - 1] != hyp[j - 1] else 0)
        return min(best, go(i - 1, j) + 1, go(i, j - 1) + 1)

    return go(len(ref), len(hyp))


def random_pair(rng, max_len=6, alphabet=4):
    ref = [rng.randrange(alphabet) for _ in range(rng.randrange(max_len + 1))]
    hyp = [rng.randrange(alphabet) for _ in range(rng.randrange(max_len + 1))]
    return ref, hyp


def test_both_variants_match_oracle_distance():
    rng = random.Random(7)
    for _ in range(400):
        ref, hyp = random_pair(rng)
        expected = oracle_distance(ref, hyp)
        ref_a = np.asarray(ref, dtype=np.int32)
        hyp_a = np.asarray(hyp, dtype=np.int32)
        assert sum(kernels.edit_counts_numpy(ref_a, hyp_a)) == expected
        if kernels.edit_counts_numba is not None:
            assert sum(kernels.edit_counts_numba(ref_a, hyp_a)) == expected


@pytest.mark.skipif(kernels.edit_counts_numba is None, reason="numba unavailable")
def test_numba_and_numpy_counts_identical():
    rng = random.Random(11)
    for _ in range(500):
        ref, hyp = random_pair(rng, max_len=12, alphabet=5)
        ref_a = np.asarray(ref, dtype=np.int32)
        hyp_a = np.asarray(hyp, dtype=np.int32)
        jit = tuple(int(x) for x in kernels.edit_counts_numba(ref_a, hyp_a))
        assert jit == kernels.edit_counts_numpy(ref_a, hyp_a)


def test_counts_reconcile_with_lengths():
    # Any alignment satisfies len(ref) - D + I == len(hyp).
    rng = random.Random(3)
    for _ in range(300):
        ref, hyp = random_pair(rng, max_len=10)
        subs, dels, ins = kernels.edit_counts(ref, hyp)
        assert len(ref) - dels + ins == len(hyp)
        assert subs + dels <= len(ref) and subs + ins <= len(hyp)


def test_empty_sequences():
    assert kernels.edit_counts([], []) == (0, 0, 0)
    assert kernels.edit_counts([1, 2], []) == (0, 2, 0)
    assert kernels.edit_counts([], [1, 2, 3]) == (0, 0, 3)


def test_env_flag_selects_numpy_fallback():
    code = (
        "import os; os.environ['CSB_NO_NUMBA'] = '1'; "
        "from csbench import kernels; "
        "assert kernels.active_backend() == 'numpy'; "
        "assert kernels.edit_counts([1, 2, 3], [1, 9, 3]) == (1, 0, 0); "
        "print('fallback-ok')"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, check=True
    )
    assert "fallback-ok" in out.stdout
