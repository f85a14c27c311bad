from fractions import Fraction
import itertools

import numpy as np
import pytest

from vcecnn.autograd import Node, leaf, mul, sum_all
from vcecnn.tensor import Tensor


@pytest.fixture
def rs():
    return np.random.default_rng(20240611)


def naive_conv2d(x, w, b, padding):
    """Direct cross-correlation with explicit loops over every index."""
    n, c, h, wd = x.shape
    out_ch = w.shape[0]
    pad = 1 if padding == "same" else 0
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho, wo = h + 2 * pad - 2, wd + 2 * pad - 2
    out = np.zeros((n, out_ch, ho, wo))
    for ni in range(n):
        for o in range(out_ch):
            for i in range(ho):
                for j in range(wo):
                    acc = float(b[o])
                    for ci in range(c):
                        for ki in range(3):
                            for kj in range(3):
                                acc += xp[ni, ci, i + ki, j + kj] * w[o, ci, ki, kj]
                    out[ni, o, i, j] = acc
    return out


def bilinear_pixel(img, y, x, height, width):
    """Scalar half-pixel bilinear sample of ``img`` ([H, W]) at output pixel (y, x)."""
    in_h, in_w = img.shape
    sy = min(max((y + 0.5) * in_h / height - 0.5, 0.0), in_h - 1)
    sx = min(max((x + 0.5) * in_w / width - 0.5, 0.0), in_w - 1)
    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
    y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
    dy, dx = sy - y0, sx - x0
    return (
        img[y0, x0] * (1 - dy) * (1 - dx)
        + img[y0, x1] * (1 - dy) * dx
        + img[y1, x0] * dy * (1 - dx)
        + img[y1, x1] * dy * dx
    )


def pair_count_auc(labels, scores):
    """AUC as the fraction of (positive, negative) pairs ordered correctly, ties 1/2."""
    pos = [s for l, s in zip(labels, scores) if l]
    neg = [s for l, s in zip(labels, scores) if not l]
    if not pos or not neg:
        return None
    wins = Fraction(0)
    for p, q in itertools.product(pos, neg):
        if p > q:
            wins += 1
        elif p == q:
            wins += Fraction(1, 2)
    return wins / (len(pos) * len(neg))


def brute_class_metrics(true, pred, k):
    """Per-class metrics by scanning samples one at a time, in exact arithmetic."""
    rows = []
    for c in range(k):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        tn = sum(1 for t, p in zip(true, pred) if t != c and p != c)
        prec = Fraction(tp, tp + fp) if tp + fp else None
        rec = Fraction(tp, tp + fn) if tp + fn else None
        spec = Fraction(tn, tn + fp) if tn + fp else None
        if prec is None or rec is None:
            f1 = None
        elif prec + rec == 0:
            f1 = Fraction(0)
        else:
            f1 = 2 * prec * rec / (prec + rec)
        rows.append(dict(tp=tp, fp=fp, fn=fn, tn=tn, support=tp + fn, precision=prec, recall=rec, specificity=spec, f1=f1))
    return rows


def samples_from_confusion(cm):
    true, pred = [], []
    for t in range(cm.shape[0]):
        for p in range(cm.shape[1]):
            true += [t] * int(cm[t, p])
            pred += [p] * int(cm[t, p])
    return true, pred


def projected_loss(out: Node, weights: np.ndarray) -> Node:
    """sum(out * R) for a fixed random R: a scalar whose gradient is O(1) everywhere."""
    return sum_all(mul(out, Node(Tensor(weights, dtype=np.float64))))


def nudge_from_zero(a, margin=1e-3):
    """Push entries with |x| < margin out to +/-margin, keeping their sign."""
    a = a.copy()
    small = np.abs(a) < margin
    a[small] = np.where(a[small] >= 0, margin, -margin)
    return a


def f64_leaf(values, name=None):
    return leaf(np.asarray(values, dtype=np.float64), dtype=np.float64, name=name)


# One PASS/FAIL line per acceptance criterion, taken from the real test outcomes.

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if name not in _acceptance or outcome != "PASS":
            _acceptance[name] = (outcome, report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[2])):
        terminalreporter.write_line(f"{_acceptance[name][0]}  {name}")
