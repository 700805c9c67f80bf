"""Regenerates the toy evaluation set and its oracle JSON.

The oracle is computed independently of the Rust code: exhaustive
augmenting-path matching (Kuhn) over every threshold, dataset-level
accumulation, ODS F-measure and interpolated AP with an R=0 endpoint.
Probabilities are multiples of 1/16 so the f32 files hold them exactly.

Usage: python3 make_oracle.py  (writes pred/, gt/ and oracle.json here)
"""

import json
import math
import os
import random
import struct

HERE = os.path.dirname(os.path.abspath(__file__))
SIZE = 12
CLASSES = 2
TOL = 0.1
THRESHOLDS = 99
IMAGES = ["a", "b", "c"]


def write_fpm(path, values):
    with open(path, "wb") as f:
        f.write(b"FPM1\n%d %d %d\n" % (SIZE, SIZE, 1))
        for v in values:
            f.write(struct.pack("<f", v))


def write_pgm(path, bits):
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (SIZE, SIZE))
        f.write(bytes(255 if b else 0 for b in bits))


def make_gt(rng, empty):
    bits = [False] * (SIZE * SIZE)
    if empty:
        return bits
    for _ in range(rng.randint(1, 2)):
        x, y = rng.randrange(SIZE), rng.randrange(SIZE)
        dx, dy = rng.choice([(1, 0), (0, 1), (1, 1), (1, -1)])
        for _ in range(rng.randint(4, 9)):
            if 0 <= x < SIZE and 0 <= y < SIZE:
                bits[y * SIZE + x] = True
            x, y = x + dx, y + dy
            if rng.random() < 0.3:
                x += rng.choice([-1, 1])
    return bits


def make_pred(rng, gt):
    vals = [0.0] * (SIZE * SIZE)
    for i, on in enumerate(gt):
        if on:
            x, y = i % SIZE, i // SIZE
            if rng.random() < 0.35:
                x = min(SIZE - 1, max(0, x + rng.choice([-2, -1, 1, 2])))
            if rng.random() < 0.85:
                vals[y * SIZE + x] = max(vals[y * SIZE + x], rng.randint(4, 16) / 16)
    for _ in range(rng.randint(3, 8)):
        i = rng.randrange(SIZE * SIZE)
        vals[i] = max(vals[i], rng.randint(1, 12) / 16)
    return vals


def max_matching(pred, gt, d2max):
    adj = [[j for j, (gx, gy) in enumerate(gt) if (px - gx) ** 2 + (py - gy) ** 2 <= d2max] for (px, py) in pred]
    owner = [-1] * len(gt)

    def augment(u, seen):
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                if owner[v] == -1 or augment(owner[v], seen):
                    owner[v] = u
                    return True
        return False

    return sum(augment(u, [False] * len(gt)) for u in range(len(pred)))


def points(bits):
    return [(i % SIZE, i // SIZE) for i, b in enumerate(bits) if b]


def main():
    rng = random.Random(20240611)
    os.makedirs(os.path.join(HERE, "pred"), exist_ok=True)
    os.makedirs(os.path.join(HERE, "gt"), exist_ok=True)
    data = {}
    for image in IMAGES:
        for k in range(CLASSES):
            gt = make_gt(rng, empty=(image == "c" and k == 1))
            pred = make_pred(rng, gt)
            write_fpm(os.path.join(HERE, "pred", "%s_%d.fpm" % (image, k)), pred)
            write_pgm(os.path.join(HERE, "gt", "%s_%d.pgm" % (image, k)), gt)
            data[(image, k)] = (pred, gt)

    d_max = TOL * math.hypot(SIZE, SIZE)
    thresholds = [i / (THRESHOLDS + 1) for i in range(1, THRESHOLDS + 1)]
    classes = []
    for k in range(CLASSES):
        rows = []
        gt_total = sum(sum(data[(im, k)][1]) for im in IMAGES)
        for t in thresholds:
            matched = total_pred = 0
            for im in IMAGES:
                pred, gt = data[(im, k)]
                on = [v >= t for v in pred]
                matched += max_matching(points(on), points(gt), d_max * d_max)
                total_pred += sum(on)
            p = matched / total_pred if total_pred else 0.0
            r = matched / gt_total if gt_total else 0.0
            rows.append([t, p, r])
        if gt_total == 0:
            mf = ap = best_t = None
        else:
            fs = [(2 * p * r / (p + r) if p + r else 0.0) for _, p, r in rows]
            best = max(range(len(fs)), key=lambda i: (fs[i], -i))
            mf, best_t = fs[best], thresholds[best]
            pts = sorted([(r, p) for _, p, r in rows] + [(0.0, 0.0)])
            interp, run = [0.0] * len(pts), 0.0
            for i in reversed(range(len(pts))):
                run = max(run, pts[i][1])
                interp[i] = run
            ap = sum((pts[i][0] - pts[i - 1][0]) * interp[i] for i in range(1, len(pts)))
        classes.append({"class": k, "mf_ods": mf, "ap": ap, "optimal_threshold": best_t, "gt_pixels": gt_total, "pr": rows})

    def mean(key):
        vals = [c[key] for c in classes if c[key] is not None]
        return sum(vals) / len(vals) if vals else None

    oracle = {
        "classes": classes,
        "mean_mf_ods": mean("mf_ods"),
        "mean_ap": mean("ap"),
        "params": {"tolerance_fraction": TOL, "thin_predictions": False, "thresholds": THRESHOLDS},
    }
    with open(os.path.join(HERE, "oracle.json"), "w") as f:
        json.dump(oracle, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
