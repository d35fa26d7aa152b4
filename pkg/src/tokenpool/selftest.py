"""Built-in oracle checks runnable from the CLI without pytest."""

from __future__ import annotations

import numpy as np

from .kernels import conv2d, gap, l2_normalize, resample_bilinear, softmax
from .retrieval import RankedList, compute_ap


def reference_ap(ranking: list[str], positives: set[str], junk: set[str]) -> float:
    """Independent AP: explicit precision bookkeeping over the cleaned list."""
    cleaned = [r for r in ranking if r not in junk]
    total = 0.0
    found = 0
    for rank, item in enumerate(cleaned):
        if item in positives:
            prec_before = found / rank if rank > 0 else 1.0
            found += 1
            prec_at = found / (rank + 1)
            total += 0.5 * (prec_before + prec_at)
    return total / len(positives)


def check_ap_oracle(rng: np.random.Generator, trials: int = 1000) -> bool:
    for _ in range(trials):
        n = int(rng.integers(3, 21))
        items = [f"i{i:02d}" for i in range(n)]
        ranking = list(rng.permutation(items))
        n_pos = int(rng.integers(1, n))
        pool = list(rng.permutation(items))
        positives = set(pool[:n_pos])
        n_junk = int(rng.integers(0, n - n_pos + 1))
        junk = set(pool[n_pos : n_pos + n_junk])
        ranked = RankedList(ids=ranking, similarities=np.zeros(n))
        got = compute_ap(ranked, positives, junk)
        want = reference_ap(ranking, positives, junk)
        if abs(got - want) > 1e-12:
            return False
    return True


def check_conv_linearity(rng: np.random.Generator) -> bool:
    x = rng.standard_normal((5, 5, 2)).astype(np.float32)
    y = rng.standard_normal((5, 5, 2)).astype(np.float32)
    w = rng.standard_normal((3, 3, 2, 3)).astype(np.float32)
    b = np.zeros(3, dtype=np.float32)
    a, c = 1.7, -0.4
    lhs = conv2d(a * x + c * y, w, b)
    rhs = a * conv2d(x, w, b) + c * conv2d(y, w, b)
    scale = max(np.abs(rhs).max(), 1.0)
    return np.abs(lhs - rhs).max() / scale < 1e-5


def check_resample_identity(rng: np.random.Generator) -> bool:
    g = rng.standard_normal((4, 6, 3)).astype(np.float32)
    return np.array_equal(resample_bilinear(g, 4, 6), g)


def check_softmax(rng: np.random.Generator) -> bool:
    for _ in range(20):
        x = rng.standard_normal(int(rng.integers(1, 30))).astype(np.float32)
        s = softmax(x)
        if abs(float(s.sum()) - 1.0) > 1e-6 or np.any(s <= 0):
            return False
    return True


def check_gap_and_norm(rng: np.random.Generator) -> bool:
    y = rng.standard_normal((3, 4, 5)).astype(np.float32)
    ok = np.allclose(gap(y), y.mean(axis=(0, 1)), atol=1e-6)
    v = rng.standard_normal(8).astype(np.float32)
    return ok and abs(float(np.linalg.norm(l2_normalize(v))) - 1.0) < 1e-6


def run_selftest(seed: int = 0) -> tuple[int, int]:
    rng = np.random.default_rng(seed)
    checks = [
        ("ap-oracle", check_ap_oracle),
        ("conv-linearity", check_conv_linearity),
        ("resample-identity", check_resample_identity),
        ("softmax-simplex", check_softmax),
        ("gap-and-normalize", check_gap_and_norm),
    ]
    passed = 0
    failed = 0
    for name, fn in checks:
        ok = fn(rng)
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
        passed += ok
        failed += not ok
    return passed, failed
