"""Independent reference implementations used as test oracles.

Written with plain Python loops and no graphloc imports so that a bug in the
vectorized library code cannot be mirrored here.
"""

import math


def edge_drop(g):
    """Keep an edge iff |w| reaches the middle of the range of |w|."""
    n = len(g)
    vals = [abs(g[i][j]) for i in range(n) for j in range(n)]
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return [row[:] for row in g]
    cut = lo + (hi - lo) / 2.0
    return [[g[i][j] if abs(g[i][j]) >= cut else 0.0 for j in range(n)] for i in range(n)]


def detection_runs(scores, threshold, duration):
    """Brute-force run enumeration: every maximal marked interval, per class.

    Returns sorted tuples (class, start, end, confidence).
    """
    out = []
    l = len(scores)
    c = len(scores[0]) if l else 0
    for k in range(c):
        for a in range(l):
            for b in range(a + 1, l + 1):
                inside = all(scores[t][k] > threshold for t in range(a, b))
                left_ok = a == 0 or not scores[a - 1][k] > threshold
                right_ok = b == l or not scores[b][k] > threshold
                if inside and left_ok and right_ok:
                    conf = max(scores[t][k] for t in range(a, b))
                    out.append((k, a * duration, b * duration, conf))
    return sorted(out)


def interval_iou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def greedy_flags(dets, gts, thresh):
    """dets: list of (conf, start, end) for one class and video, already ranked.

    Each detection in order claims the still-unclaimed gt with largest IoU
    if that IoU meets the threshold.
    """
    used = [False] * len(gts)
    flags = []
    for _, s, e in dets:
        best, best_iou = None, -1.0
        for i, g in enumerate(gts):
            if used[i]:
                continue
            v = interval_iou((s, e), g)
            if v >= thresh and v > best_iou:
                best, best_iou = i, v
        if best is None:
            flags.append(False)
        else:
            used[best] = True
            flags.append(True)
    return flags


def max_matching(dets, gts, thresh):
    """Exhaustive maximum number of detection/gt pairs with IoU >= thresh."""
    def search(i, used):
        if i == len(dets):
            return 0
        best = search(i + 1, used)
        for g in range(len(gts)):
            if g not in used and interval_iou(dets[i][1:], gts[g]) >= thresh:
                best = max(best, 1 + search(i + 1, used | {g}))
        return best

    return search(0, frozenset())


def ap_from_flags(flags, num_gt):
    tp = 0
    total = 0.0
    for i, f in enumerate(flags, start=1):
        if f:
            tp += 1
            total += tp / i
    return total / num_gt if num_gt else 0.0


def weighted_sum(weights, rows):
    d = len(rows[0])
    return [sum(w * r[j] for w, r in zip(weights, rows)) for j in range(d)]


def softmax(v):
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = sum(e)
    return [x / s for x in e]


def cos_dist(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return 0.5 * (1.0 - dot / (na * nb))


def casl_pair(fj, sj, fk, sk, cls, margin=0.5):
    """Scalar reference for the two-term co-activity hinge (time attention)."""
    def fgbg(f, s):
        att = softmax([row[cls] for row in s])
        return weighted_sum(att, f), weighted_sum([1.0 - a for a in att], f)

    fgj, bgj = fgbg(fj, sj)
    fgk, bgk = fgbg(fk, sk)
    same = cos_dist(fgj, fgk)
    return max(0.0, same - cos_dist(bgj, fgk) + margin) + max(0.0, same - cos_dist(bgk, fgj) + margin)


def mil_video(scores, labels, d):
    """Scalar reference for the top-k MIL cross entropy of one video."""
    l, c = len(scores), len(scores[0])
    k = max(1, l // d)
    pooled = []
    for j in range(c):
        col = sorted((scores[t][j] for t in range(l)), reverse=True)
        pooled.append(sum(col[:k]) / k)
    p = softmax(pooled)
    n = sum(labels)
    return -sum((labels[j] / n) * math.log(p[j]) for j in range(c))
