"""Independent straight-line reimplementations used as test oracles.

Everything here is written with explicit Python loops or plain numpy on raw
arrays and shares no code with the package beyond the data containers.
"""
import math

import numpy as np


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_loop(x):
    out = np.zeros_like(x, dtype=float)
    for i in range(x.shape[0]):
        row = [float(v) for v in x[i]]
        m = max(row)
        e = [math.exp(v - m) for v in row]
        z = sum(e)
        out[i] = [v / z for v in e]
    return out


def group_mean(values, groups):
    out = {}
    for v, g in zip(values, groups):
        out.setdefault(int(g), []).append(np.asarray(v, dtype=float))
    return np.array([np.mean(out[g], axis=0) for g in sorted(out)])


def fps_bruteforce(points, n):
    """Quadratic FPS recomputing every min-distance from scratch, start 0, ties low."""
    pts = [tuple(map(float, p)) for p in points]
    chosen = [0]
    while len(chosen) < n:
        best, best_d = None, -1.0
        for i, p in enumerate(pts):
            if i in chosen:
                continue
            d = min(sum((p[c] - pts[j][c]) ** 2 for c in range(3)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def bce_scalar(x, t):
    x, t = float(x), float(t)
    return max(x, 0.0) - x * t + math.log1p(math.exp(-abs(x)))


def sigmoid_scalar(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def mask_loss_oracle(logits, gts):
    """BCE averaged over superpoints plus Dice (eps 1), averaged over rows."""
    total = 0.0
    for row, gt in zip(logits, gts):
        bce = sum(bce_scalar(x, g) for x, g in zip(row, gt)) / len(row)
        p = [sigmoid_scalar(x) for x in row]
        inter = sum(pi * gi for pi, gi in zip(p, gt))
        dice = 1.0 - (2.0 * inter + 1.0) / (sum(p) + sum(gt) + 1.0)
        total += bce + dice
    return total / len(logits)


def contrastive_oracle(q, t, pos_words, pos_queries, tau):
    sim = [[sum(a * b for a, b in zip(qi, tj)) / tau for tj in t] for qi in q]
    n_q, n_t = len(q), len(t)
    q2w = 0.0
    for i in pos_queries:
        z = math.log(sum(math.exp(sim[i][k]) for k in range(n_t)))
        q2w += -sum(sim[i][j] - z for j in pos_words) / len(pos_words)
    w2q = 0.0
    for j in pos_words:
        z = math.log(sum(math.exp(sim[k][j]) for k in range(n_q)))
        w2q += -sum(sim[i][j] - z for i in pos_queries) / len(pos_queries)
    return q2w + w2q, q2w, w2q


def iou_oracle(pred_points, gt_points, confidences):
    if not any(gt_points):
        return 1.0 if all(c <= 0.5 for c in confidences) else 0.0
    inter = sum(1 for p, g in zip(pred_points, gt_points) if p and g)
    union = sum(1 for p, g in zip(pred_points, gt_points) if p or g)
    return inter / union


def final_mask_oracle(mask_logits, confidences, superpoint_id):
    sp_on = set()
    for q, c in enumerate(confidences):
        if c > 0.5:
            for s, v in enumerate(mask_logits[q]):
                if v > 0:
                    sp_on.add(s)
    return [1 if int(s) in sp_on else 0 for s in superpoint_id]


def report_oracle(ious, categories):
    n = len(ious)
    per = {}
    for c in ("zt_dis", "zt_nodis", "st_dis", "st_nodis", "mt"):
        sub = [v for v, k in zip(ious, categories) if k == c]
        per[c] = {
            "acc_025": (sum(1 for v in sub if v > 0.25) / len(sub)) if sub else 0.0,
            "acc_05": (sum(1 for v in sub if v > 0.5) / len(sub)) if sub else 0.0,
            "count": len(sub),
        }
    return {
        "miou": math.fsum(ious) / n,
        "acc_025": sum(1 for v in ious if v > 0.25) / n,
        "acc_05": sum(1 for v in ious if v > 0.5) / n,
        "per_category": per,
        "num_samples": n,
    }


def forward_oracle(scene, expr, arrays, cfg):
    """The whole network as one straight-line computation on raw arrays."""
    A = arrays
    relu = lambda x: np.maximum(x, 0.0)
    D = cfg.D
    x = np.concatenate([scene.positions - scene.positions.mean(axis=0), scene.colors], axis=1)
    f = relu(x @ A["encoder.0.weight"] + A["encoder.0.bias"]) @ A["encoder.1.weight"] + A["encoder.1.bias"]
    S = group_mean(f @ A["W_P"], scene.superpoint_id)
    T = A["token_embedding"][expr.token_ids] @ A["W_T"]
    cent = group_mean(scene.positions, scene.superpoint_id)
    seeds = fps_bruteforce(cent, cfg.N_seed)
    R = [float(np.mean([S[s] @ T[j] for j in range(T.shape[0])])) for s in seeds]
    order = sorted(range(len(seeds)), key=lambda i: (-R[i], i))[: cfg.N_Q]
    Q = S[[seeds[i] for i in order]]
    sc = 1.0 / math.sqrt(D)
    for i in range(cfg.layers):
        p = f"layers.{i}."
        a = softmax_loop((Q @ A[p + "W_sq"]) @ (S @ A[p + "W_sk"]).T * sc)
        Qs = Q + a @ (S @ A[p + "W_sv"])
        a = softmax_loop((Qs @ A[p + "W_qq"]) @ (Qs @ A[p + "W_qk"]).T * sc)
        Qr = a @ (Qs @ A[p + "W_qv"])
        a = softmax_loop((Qs @ A[p + "W_lq"]) @ (T @ A[p + "W_lk"]).T * sc)
        Ql = a @ T
        h = Qs + Qr + Ql
        Q = relu(h @ A[p + "fuse.0.weight"] + A[p + "fuse.0.bias"]) @ A[p + "fuse.1.weight"] + A[p + "fuse.1.bias"]
    logits = Q @ (S @ A["W_M"]).T
    conf_logit = (relu(Q @ A["conf.0.weight"] + A["conf.0.bias"]) @ A["conf.1.weight"] + A["conf.1.bias"])[:, 0]
    conf = np.array([sigmoid_scalar(v) for v in conf_logit])
    final = final_mask_oracle(logits, conf, scene.superpoint_id)
    return {"mask_logits": logits, "confidences": conf, "final": np.array(final), "R": np.array(R),
            "seeds": np.array(seeds), "query_sources": np.array([seeds[i] for i in order])}
