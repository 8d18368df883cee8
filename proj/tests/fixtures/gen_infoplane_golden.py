"""Writes infoplane_golden.json from a direct numpy/scipy implementation."""
import json
import math
import pathlib

import numpy as np
from scipy.ndimage import gaussian_filter1d

EPS = 1e-3


def entropy(cov):
    k = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov + EPS * np.eye(k))
    assert sign > 0
    return max(0.0, 0.5 * (k * math.log(2 * math.pi * math.e) + logdet))


def mi_point(x, y):
    n, d = x.shape
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / n
    ev, vec = np.linalg.eigh(cov)
    order = np.argsort(-ev, kind="stable")
    ev, vec = ev[order], vec[:, order]
    k = min(20, d, n // 4)
    rank = int(np.sum(ev > 10 * EPS))
    k_used = min(d, max(2, min(k, rank)))
    z = xc @ vec[:, :k_used]
    h = entropy(np.cov(z, rowvar=False, bias=True).reshape(k_used, k_used))
    cond = 0.0
    for c in np.unique(y):
        zc = z[y == c]
        hc = h if len(zc) < 2 else entropy(np.cov(zc, rowvar=False, bias=True).reshape(k_used, k_used))
        cond += len(zc) / n * hc
    return h, max(0.0, h - cond), k_used


def postprocess(points, kind):
    pts = list(points)
    if kind != "cbm":
        peak = int(np.argmax([p["I_CY"] for p in pts]))
        pts = pts[: peak + 4]
    if kind == "cem":
        kept = [pts[0]]
        for p in pts[1:]:
            if p["H_C"] > kept[-1]["H_C"] and p["I_CY"] > kept[-1]["I_CY"]:
                kept.append(p)
        pts = kept
    if len(pts) > 1:
        h = gaussian_filter1d(np.array([p["H_C"] for p in pts]), 2.0, mode="reflect", truncate=4.0)
        i = gaussian_filter1d(np.array([p["I_CY"] for p in pts]), 2.0, mode="reflect", truncate=4.0)
        pts = [dict(p, H_C=float(a), I_CY=float(b)) for p, a, b in zip(pts, h, i)]
    return pts


def main():
    rng = np.random.default_rng(20240611)
    n, d, classes = 40, 12, 3
    labels = np.arange(n) % classes
    centers = rng.normal(size=(classes, d))
    epochs = []
    for epoch in range(1, 9):
        gap = 0.3 * epoch if epoch != 5 else 0.6
        x = rng.normal(size=(n, d)) + gap * centers[labels]
        if epoch == 3:
            x[:, 6:] = 0.0
        epochs.append({"epoch": epoch, "features": x.tolist(), "labels": labels.tolist()})
    raw = []
    for e in epochs:
        h, i, k = mi_point(np.array(e["features"]), np.array(e["labels"]))
        raw.append({"epoch": e["epoch"], "H_C": h, "I_CY": i, "k_prime": k, "N": n})

    series = []
    h_vals = [1.0, 1.4, 1.3, 1.9, 2.4, 2.2, 2.8, 3.1, 3.6, 3.5, 3.9, 4.0, 4.2, 4.1, 4.3]
    i_vals = [0.1, 0.3, 0.35, 0.2, 0.6, 0.7, 0.65, 0.9, 1.2, 1.1, 1.0, 1.05, 0.9, 0.95, 1.0]
    for k, (h, i) in enumerate(zip(h_vals, i_vals)):
        series.append({"epoch": k + 1, "H_C": h, "I_CY": i, "k_prime": 2, "N": 10})

    out = {
        "pipeline": {
            "epochs": epochs,
            "raw": raw,
            "post": {k: postprocess(raw, k) for k in ("cem", "cbm", "latent")},
        },
        "series": {
            "points": series,
            "post": {k: postprocess(series, k) for k in ("cem", "cbm", "latent")},
        },
    }
    path = pathlib.Path(__file__).with_name("infoplane_golden.json")
    path.write_text(json.dumps(out))


if __name__ == "__main__":
    main()
