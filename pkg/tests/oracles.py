"""Independent reference implementations used to cross-check the package."""

from __future__ import annotations

import itertools
import math

import numpy as np


def runs_of(labels):
    """Maximal runs as ``(value, start, end)`` by a plain scan."""
    out = []
    i = 0
    while i < len(labels):
        j = i
        while j < len(labels) and labels[j] == labels[i]:
            j += 1
        out.append((labels[i], i, j))
        i = j
    return out


def correct_by_enumeration(labels, counts):
    """Brute-force count correction.

    For each element class, enumerate every subset of its runs of the
    required size and keep the unique subset in which every kept run beats
    every dropped run (longer, or equally long and earlier).
    """
    out = [0] * len(labels)
    runs = runs_of(list(labels))
    for cls, want in counts.items():
        mine = [r for r in runs if r[0] == cls]
        size = min(want, len(mine))
        chosen = None
        for subset in itertools.combinations(range(len(mine)), size):
            kept = [mine[i] for i in subset]
            dropped = [mine[i] for i in range(len(mine)) if i not in subset]

            def beats(a, b):
                la, lb = a[2] - a[1], b[2] - b[1]
                return la > lb or (la == lb and a[1] < b[1])

            if all(beats(k, d) for k in kept for d in dropped):
                assert chosen is None, "dominance rule must pick a unique subset"
                chosen = kept
        for _, s, e in chosen or []:
            out[s:e] = [cls] * (e - s)
    return out


def average_ranks(values):
    """Ranks by counting: rank = #smaller + (#equal + 1) / 2."""
    v = list(values)
    return [sum(1 for u in v if u < x) + (sum(1 for u in v if u == x) + 1) / 2.0 for x in v]


def pearson_textbook(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def spearman_textbook(x, y):
    return pearson_textbook(average_ranks(x), average_ranks(y))


def dice_one_hot(pred, truth, k=4):
    a = np.eye(k)[np.asarray(truth)].reshape(-1)
    b = np.eye(k)[np.asarray(pred)].reshape(-1)
    return 2.0 * float(a @ b) / float(a @ a + b @ b)


def iou_by_sets(pred, truth, k=4):
    scores = []
    for c in range(k):
        p = {i for i, v in enumerate(pred) if v == c}
        t = {i for i, v in enumerate(truth) if v == c}
        if p | t:
            scores.append(len(p & t) / len(p | t))
    return sum(scores) / len(scores)
