"""Token edit-distance alignment kernels.

The dynamic program that aligns reference and hypothesis token sequences is
the hot numeric loop of batch evaluation, so it ships in two variants: a
numba ``@njit`` kernel (default) and a vectorised pure-numpy fallback.
Setting ``CSB_NO_NUMBA=1`` in the environment selects the fallback; the
fallback is also used automatically when numba is unavailable. Both paths
use the same backtrack preference (diagonal, then deletion, then insertion)
and produce identical substitution/deletion/insertion counts.

``benchmarks/bench_kernels.py`` compares the two variants.
"""

from __future__ import annotations

import os

import numpy as np

BACKEND_ENV = "CSB_NO_NUMBA"


def _fallback_requested() -> bool:
    return os.environ.get(BACKEND_ENV, "").strip().lower() in ("1", "true", "yes")


def edit_counts_numpy(ref: np.ndarray, hyp: np.ndarray) -> tuple[int, int, int]:
    """Pure-numpy variant: row-vectorised DP, python backtrack."""
    n, m = len(ref), len(hyp)
    dp = np.empty((n + 1, m + 1), dtype=np.int32)
    cols = np.arange(m + 1, dtype=np.int32)
    dp[0] = cols
    for i in range(1, n + 1):
        prev = dp[i - 1]
        cand = np.empty(m + 1, dtype=np.int32)
        cand[0] = i
        if m:
            np.minimum(prev[:-1] + (ref[i - 1] != hyp), prev[1:] + 1, out=cand[1:])
        # Left-to-right insertion chain: cand[j] = min over k<=j of cand[k] + (j-k).
        dp[i] = np.minimum.accumulate(cand - cols) + cols
    return _backtrack(dp, ref, hyp)


def _backtrack(dp: np.ndarray, ref: np.ndarray, hyp: np.ndarray) -> tuple[int, int, int]:
    i, j = len(ref), len(hyp)
    subs = dels = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += int(ref[i - 1] != hyp[j - 1])
            i -= 1
            j -= 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


try:  # pragma: no cover - exercised indirectly via dispatch
    from numba import njit

    @njit(cache=True)
    def edit_counts_numba(ref, hyp):  # type: ignore[no-redef]
        n = ref.shape[0]
        m = hyp.shape[0]
        dp = np.empty((n + 1, m + 1), dtype=np.int32)
        for j in range(m + 1):
            dp[0, j] = j
        for i in range(1, n + 1):
            dp[i, 0] = i
            ri = ref[i - 1]
            for j in range(1, m + 1):
                cost = 0 if ri == hyp[j - 1] else 1
                best = dp[i - 1, j - 1] + cost
                if dp[i - 1, j] + 1 < best:
                    best = dp[i - 1, j] + 1
                if dp[i, j - 1] + 1 < best:
                    best = dp[i, j - 1] + 1
                dp[i, j] = best
        i = n
        j = m
        subs = 0
        dels = 0
        ins = 0
        while i > 0 or j > 0:
            if i > 0 and j > 0:
                cost = 0 if ref[i - 1] == hyp[j - 1] else 1
                if dp[i, j] == dp[i - 1, j - 1] + cost:
                    subs += cost
                    i -= 1
                    j -= 1
                    continue
            if i > 0 and dp[i, j] == dp[i - 1, j] + 1:
                dels += 1
                i -= 1
            else:
                ins += 1
                j -= 1
        return subs, dels, ins

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    edit_counts_numba = None
    _HAVE_NUMBA = False

_USE_NUMBA = _HAVE_NUMBA and not _fallback_requested()


def active_backend() -> str:
    """Name of the kernel variant selected at import time."""
    return "numba" if _USE_NUMBA else "numpy"


def edit_counts(ref_ids, hyp_ids) -> tuple[int, int, int]:
    """Substitution/deletion/insertion counts of a minimum-cost alignment.

    Accepts integer token-id sequences; their sum is the Levenshtein
    distance between the sequences.
    """
    ref = np.asarray(ref_ids, dtype=np.int32)
    hyp = np.asarray(hyp_ids, dtype=np.int32)
    if _USE_NUMBA:
        subs, dels, ins = edit_counts_numba(ref, hyp)
        return int(subs), int(dels), int(ins)
    subs, dels, ins = edit_counts_numpy(ref, hyp)
    return int(subs), int(dels), int(ins)
