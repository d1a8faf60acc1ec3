"""Independent reference implementations shared by the test suites.

Everything here recomputes results from first principles (full scans,
exhaustive enumeration, finite differences, direct projection) so the
library's fast paths are checked against a second route.
"""

import itertools

import numpy as np

from plrefine.laser import build_boundaries


def brute_force_knn(points, query, k):
    """Full linear scan sorted by (distance, index)."""
    pts = np.asarray(points, dtype=float)
    q = np.asarray(query, dtype=float)
    dist = np.linalg.norm(pts - q, axis=1)
    order = np.lexsort((np.arange(len(pts)), dist))[: min(k, len(pts))]
    return order, dist[order]


def permutation_emd(a, b):
    """Exhaustive minimum over all bijections; mean-normalized Euclidean cost.

    Only feasible for small equal-size clouds (n! permutations).
    """
    pa = np.asarray(a, dtype=float)
    pb = np.asarray(b, dtype=float)
    n = pa.shape[0]
    assert pb.shape[0] == n
    cost = np.linalg.norm(pa[:, None] - pb[None, :], axis=2)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min() / n)


def nearest_neighbor_sq_sum(pred, reference):
    """Plain double-loop-free NN sum of squared distances."""
    pp = np.asarray(pred, dtype=float)
    rr = np.asarray(reference, dtype=float)
    d2 = ((pp[:, None] - rr[None, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def mask_envelope(cam, scan, below, above):
    """Per-column admissible (v_min, v_max) intervals of the band mask.

    Rebuilt from direct projections of the scan and its lifted boundaries:
    single-beam spans at each beam's rounded column plus linear bridging
    between consecutive in-view beams with a small angular gap, mirroring the
    documented rasterization geometry.
    """
    intervals = {}

    def add(col, v_a, v_b):
        if 0 <= col < cam.width:
            lo, hi = min(v_a, v_b), max(v_a, v_b)
            intervals.setdefault(col, []).append((lo, hi))

    bounds = build_boundaries(scan, below=below, above=above)
    proj_s = [cam.project_point(p) for p in scan.points]
    proj_l = [cam.project_point(p) for p in bounds.lower]
    proj_u = [cam.project_point(p) for p in bounds.upper]
    usable = [
        (s is not None and lo is not None and up is not None)
        for s, lo, up in zip(proj_s, proj_l, proj_u)
    ]
    for i, ok in enumerate(usable):
        if ok:
            add(int(round(proj_s[i][0])), proj_u[i][1], proj_l[i][1])

    center_xy = cam.center()[:2]
    rel = scan.points[:, :2] - center_xy
    theta = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    gaps = np.abs(np.diff(theta))
    nominal = float(np.median(gaps)) if gaps.size else 0.0
    for i in range(len(scan.points) - 1):
        j = i + 1
        if not (usable[i] and usable[j]):
            continue
        if nominal <= 0 or not (gaps[i] < 2.0 * nominal):
            continue
        ui, uj = proj_s[i][0], proj_s[j][0]
        ci, cj = int(round(ui)), int(round(uj))
        if ci == cj or abs(uj - ui) < 1e-9:
            continue
        step = 1 if cj > ci else -1
        for col in range(ci + step, cj, step):
            t = min(max((col - ui) / (uj - ui), 0.0), 1.0)
            va = proj_u[i][1] + t * (proj_u[j][1] - proj_u[i][1])
            vb = proj_l[i][1] + t * (proj_l[j][1] - proj_l[i][1])
            add(col, va, vb)
    return intervals


def mask_pixels_within_envelope(mask, envelope, slack=1e-6) -> bool:
    """True when every nonzero pixel row sits inside an admissible interval."""
    rows, cols = np.nonzero(mask.data)
    for r, c in zip(rows, cols):
        spans = envelope.get(int(c), [])
        if not any(lo - slack <= r <= hi + slack for lo, hi in spans):
            return False
    return True


def finite_difference_gradients(loss_fn, arrays, h=1e-5):
    """Central finite differences of a scalar loss over a list of arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads
