import numpy as np
import pytest

from distmon import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("cap", [1, 3, 10, 17, 20, 40, 64])
def test_decode_heights_backends_agree(cap):
    dt = K.word_dtype(cap)
    words = np.random.default_rng(cap).integers(0, np.iinfo(dt).max, size=(7, 300), dtype=dt, endpoint=True)
    words[0, :3] = 0
    a = K.decode_heights(words, cap, backend="numpy")
    b = K.decode_heights(words, cap, backend="numba")
    assert np.array_equal(a, b)
    assert a.min() >= 1 and a.max() <= cap


def test_word_dtype_is_wide_enough():
    for cap in range(1, 65):
        assert np.iinfo(K.word_dtype(cap)).bits >= cap - 1


def test_rowwise_max_ties_backends_agree():
    keys = np.random.default_rng(0).integers(1, 6, size=(50, 40))
    for a, b in zip(K.rowwise_max_ties(keys, backend="numpy"), K.rowwise_max_ties(keys, backend="numba")):
        assert np.array_equal(a, b)
    best, rows, cols = K.rowwise_max_ties(keys)
    assert np.array_equal(best, keys.max(axis=1))
    assert np.all(keys[rows, cols] == best[rows])
    assert rows.size == int((keys == keys.max(axis=1, keepdims=True)).sum())


def test_group_kernels_backends_agree():
    rng = np.random.default_rng(1)
    groups = rng.integers(1, 9, size=500)
    keys = rng.integers(1, 7, size=500)
    a = K.group_max_mask(groups, keys, 9, backend="numpy")
    b = K.group_max_mask(groups, keys, 9, backend="numba")
    assert np.array_equal(a, b)
    for g in range(1, 9):
        sel = groups == g
        assert np.array_equal(a[sel], keys[sel] == keys[sel].max())
    vals = keys.copy()
    assert K.group_disagreements(groups, vals, 9, backend="numpy") == K.group_disagreements(groups, vals, 9, backend="numba") > 0
    same = groups * 3
    assert K.group_disagreements(groups, same, 9) == 0


@pytest.mark.parametrize("cap", [1, 3, 10, 20])
def test_public_kernels_backends_agree(cap):
    starts = np.arange(0, 5000, 7, dtype=np.int64)
    assert np.array_equal(K.zero_run_heights(99, starts, cap, backend="numpy"), K.zero_run_heights(99, starts, cap, backend="numba"))
    for q in (0, 1, 3):
        assert np.array_equal(K.zero_block_flags(99, starts, q, backend="numpy"), K.zero_block_flags(99, starts, q, backend="numba"))


def test_numpy_fallback_selected_by_env_gives_same_run():
    import os
    import subprocess
    import sys

    code = (
        "from distmon import _kernels\n"
        "from distmon.experiment import ExperimentConfig, run_experiment\n"
        "from distmon.workloads import WorkloadSpec\n"
        "wl = WorkloadSpec('sigma-similar', n=64, T=8, delta=4, sigma=0.2, seed=1)\n"
        "print(_kernels.BACKEND)\n"
        "print(run_experiment(ExperimentConfig('cd-cont', wl, 0.3, 0.2, 2, 5)).dumps())\n"
    )
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, DISTMON_DISABLE_NUMBA=flag)
        out[flag] = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out["0"].startswith("numba") and out["1"].startswith("numpy")
    assert out["0"].split("\n", 1)[1] == out["1"].split("\n", 1)[1]
