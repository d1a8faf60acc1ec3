"""Scan-constrained point cloud refinement.

Every cloud point gets two constraint feature vectors:

* an xy feature: interleaved (dx, dy) offsets to its k nearest scan returns
  in the ground plane, encoding where nearby laser-observed surfaces are;
* a z feature: interleaved (dz, confidence) pairs over its k nearest cloud
  neighbours, where confidence is the bird's-eye-view proximity-to-scan score
  of the neighbour, encoding whether the point hangs off an object boundary.

Two small MLP heads map these features to a planar offset and a height
offset; refined points are the inputs plus the clamped offsets. Training
minimizes the squared distance to argmin nearest neighbours in a dense local
map, recomputing the correspondences every optimizer step (they are treated
as constants inside a step, which is the true gradient almost everywhere
since the argmin is piecewise constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud
from .laser import LaserScan2D
from .local_map import LocalMap
from .mlp import Adam, Mlp, Sgd, clip_gradients
from .spatial import ConfidenceGrid, KdIndex, build_index, knn, knn_batch, sample_confidence

DEFAULT_K = 9
DEFAULT_HIDDEN = (64, 64)
DEFAULT_OFFSET_CLAMP = 2.0
DEFAULT_REJECT_RADIUS = 5.0

MODEL_MAGIC = "PLREFINE1"


@dataclass
class RefinementModel:
    """Two offset heads sharing the neighbour count k.

    mlp_xy: 2k -> 2 planar offset head; mlp_z: 2k -> 1 height offset head.
    """

    mlp_xy: Mlp
    mlp_z: Mlp
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mlp_xy.n_inputs != 2 * self.k or self.mlp_xy.n_outputs != 2:
            raise ValueError(f"mlp_xy must map {2 * self.k} -> 2")
        if self.mlp_z.n_inputs != 2 * self.k or self.mlp_z.n_outputs != 1:
            raise ValueError(f"mlp_z must map {2 * self.k} -> 1")

    @staticmethod
    def create(k: int = DEFAULT_K, hidden=DEFAULT_HIDDEN, seed: int = 0) -> "RefinementModel":
        rng = np.random.default_rng(seed)
        sizes_xy = (2 * k, *hidden, 2)
        sizes_z = (2 * k, *hidden, 1)
        return RefinementModel(
            mlp_xy=Mlp.initialized(sizes_xy, rng),
            mlp_z=Mlp.initialized(sizes_z, rng),
            k=k,
        )

    @staticmethod
    def zero(k: int = DEFAULT_K, hidden=DEFAULT_HIDDEN) -> "RefinementModel":
        """A model whose offsets are exactly zero (identity refinement)."""
        return RefinementModel(
            mlp_xy=Mlp.zeros((2 * k, *hidden, 2)),
            mlp_z=Mlp.zeros((2 * k, *hidden, 1)),
            k=k,
        )

    def parameters(self):
        return self.mlp_xy.parameters() + self.mlp_z.parameters()


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 1024
    seed: int = 0
    optimizer: str = "adam"
    grad_clip: float = 10.0
    offset_clamp: float = DEFAULT_OFFSET_CLAMP
    reject_radius: float = DEFAULT_REJECT_RADIUS

    def __post_init__(self):
        # A zero rate is allowed so a no-op pass can be tested; negative is not.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if self.offset_clamp <= 0:
            raise ValueError("offset_clamp must be positive")


def extract_xy_feature(p, scan_index: KdIndex, k: int) -> np.ndarray:
    """Interleaved (dx_i, dy_i) offsets to the k nearest scan returns.

    Neighbours are ordered by ascending planar distance (ties by lower
    index); the vector is zero-padded to length 2k when the scan has fewer
    than k returns.
    """
    if scan_index.dimension != 2:
        raise ValueError("xy features need a 2D index")
    q = np.asarray(p, dtype=float).reshape(-1)[:2]
    idx, _ = knn(scan_index, q, k)
    deltas = scan_index.points[idx] - q
    feat = np.zeros(2 * k)
    feat[: 2 * len(idx)] = deltas.reshape(-1)
    return feat


def extract_z_feature(p, cloud_index: KdIndex, grid: ConfidenceGrid, k: int) -> np.ndarray:
    """Interleaved (dz_i, confidence_i) pairs over k nearest cloud neighbours.

    ``p`` is expected to be one of the indexed points and is excluded from its
    own neighbour set (its dz would always be 0). Neighbours are ordered by
    ascending 3D distance; the vector is zero-padded to length 2k.
    """
    if cloud_index.dimension != 3:
        raise ValueError("z features need a 3D index")
    q = np.asarray(p, dtype=float).reshape(3)
    idx, dist = knn(cloud_index, q, k + 1)
    self_rows = np.nonzero((dist == 0) & np.all(cloud_index.points[idx] == q, axis=1))[0]
    if self_rows.size:
        idx = np.delete(idx, self_rows[0])
    idx = idx[:k]
    neigh = cloud_index.points[idx]
    dz = neigh[:, 2] - q[2]
    conf = sample_confidence(grid, neigh[:, 0], neigh[:, 1])
    feat = np.zeros(2 * k)
    feat[0 : 2 * len(idx) : 2] = dz
    feat[1 : 2 * len(idx) : 2] = np.atleast_1d(conf)
    return feat


def xy_features(points: np.ndarray, scan_index: KdIndex, k: int, reject_radius: float | None = None) -> np.ndarray:
    """Batch xy features, shape (n, 2k).

    With ``reject_radius`` set, points farther than it (in xy) from every
    scan return get an all-zero feature, so the planar head can learn to
    leave laser-shadowed points untouched.
    """
    pts2 = np.asarray(points, dtype=float)[:, :2]
    n = pts2.shape[0]
    idx, dist = knn_batch(scan_index, pts2, k)
    kk = idx.shape[1]
    deltas = scan_index.points[idx] - pts2[:, None, :]
    feat = np.zeros((n, 2 * k))
    feat[:, : 2 * kk] = deltas.reshape(n, 2 * kk)
    if reject_radius is not None:
        feat[dist[:, 0] > reject_radius] = 0.0
    return feat


def z_features(points: np.ndarray, cloud_index: KdIndex, grid: ConfidenceGrid, k: int) -> np.ndarray:
    """Batch z features for the indexed points themselves, shape (n, 2k).

    Row i corresponds to indexed point i, which is excluded from its own
    neighbour set by index.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    kk = min(k + 1, n)
    idx, dist = knn_batch(cloud_index, pts, kk)
    rows = np.arange(n)
    self_hit = idx == rows[:, None]
    # Drop the point itself; when duplicates crowd it out of the k+1 window,
    # drop the farthest entry instead (the zero-distance twins carry the same
    # feature values).
    drop = np.where(self_hit.any(axis=1), self_hit.argmax(axis=1), kk - 1)
    keep = drop[:, None] != np.arange(kk)[None, :]
    nidx = idx[keep].reshape(n, kk - 1)[:, :k]
    m = nidx.shape[1]
    neigh = cloud_index.points[nidx]
    dz = neigh[:, :, 2] - pts[:, None, 2]
    conf = sample_confidence(grid, neigh[:, :, 0].ravel(), neigh[:, :, 1].ravel()).reshape(n, m)
    feat = np.zeros((n, 2 * k))
    feat[:, 0 : 2 * m : 2] = dz
    feat[:, 1 : 2 * m : 2] = conf
    return feat


def _clamped_offsets(model: RefinementModel, fxy: np.ndarray, fz: np.ndarray, clamp: float):
    raw_xy = model.mlp_xy.forward(fxy)
    raw_z = model.mlp_z.forward(fz)
    return (
        np.clip(raw_xy, -clamp, clamp),
        np.clip(raw_z, -clamp, clamp),
    )


def apply_refinement(
    model: RefinementModel,
    cloud: PointCloud,
    scan: LaserScan2D,
    grid: ConfidenceGrid,
    offset_clamp: float = DEFAULT_OFFSET_CLAMP,
    reject_radius: float = DEFAULT_REJECT_RADIUS,
) -> PointCloud:
    """Refine every cloud point by its predicted planar and height offsets.

    Output preserves the input's length and order. Offsets are clamped to
    +-offset_clamp meters. A model with zero final layers returns the input
    cloud unchanged.
    """
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    if len(scan) == 0:
        raise ValueError("scan is empty")
    scan_index = build_index(scan.points, 2)
    cloud_index = build_index(cloud.points, 3)
    fxy = xy_features(cloud.points, scan_index, model.k, reject_radius)
    fz = z_features(cloud.points, cloud_index, grid, model.k)
    off_xy, off_z = _clamped_offsets(model, fxy, fz, offset_clamp)
    out = cloud.points.copy()
    out[:, :2] += off_xy
    out[:, 2:3] += off_z
    return PointCloud(out)


def refinement_loss(refined: PointCloud, map_index: KdIndex):
    """Summed squared distance to argmin nearest map points.

    The correspondence weights are one-hot at the nearest neighbour (so each
    row sums to one); returns (loss, correspondence indices) with the indices
    usable for gradient computation.
    """
    if len(refined) == 0:
        raise ValueError("refined cloud is empty")
    if map_index.dimension != 3:
        raise ValueError("map index must be 3D")
    if len(map_index) == 0:
        raise ValueError("map is empty")
    d, j = map_index.tree.query(refined.points)
    return float(np.sum(d**2)), np.asarray(j, dtype=int)


def _map_points(local_map) -> np.ndarray:
    if isinstance(local_map, LocalMap):
        return local_map.cloud.points
    if isinstance(local_map, PointCloud):
        return local_map.points
    return np.asarray(local_map, dtype=float).reshape(-1, 3)


def train_refinement(model: RefinementModel, samples, cfg: TrainConfig):
    """Fit the offset heads against dense local maps.

    ``samples`` is a list of (cloud, scan, grid, local_map) tuples. Each
    optimizer step draws a minibatch from one sample, applies the current
    model, recomputes argmin correspondences for the refined positions, and
    backpropagates the squared correspondence distance through both heads.
    Deterministic given cfg.seed. Returns (model, per-epoch mean loss); the
    model is updated in place.

    Raises RuntimeError when the loss turns non-finite.
    """
    if not samples:
        raise ValueError("at least one training sample is required")

    prepared = []
    for cloud, scan, grid, local_map in samples:
        if len(cloud) == 0 or len(scan) == 0:
            raise ValueError("training samples need non-empty clouds and scans")
        map_pts = _map_points(local_map)
        if map_pts.shape[0] == 0:
            raise ValueError("training samples need non-empty local maps")
        scan_index = build_index(scan.points, 2)
        cloud_index = build_index(cloud.points, 3)
        prepared.append(
            {
                "base": cloud.points,
                "fxy": xy_features(cloud.points, scan_index, model.k, cfg.reject_radius),
                "fz": z_features(cloud.points, cloud_index, grid, model.k),
                "map_pts": map_pts,
                "map_tree": cKDTree(map_pts),
            }
        )

    if cfg.optimizer == "adam":
        opt = Adam(lr=cfg.learning_rate)
    else:
        opt = Sgd(lr=cfg.learning_rate)
    params = model.parameters()

    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for s in prepared:
            n = s["base"].shape[0]
            if cfg.batch_size < n:
                batch = rng.choice(n, size=cfg.batch_size, replace=False)
            else:
                batch = np.arange(n)
            fxy = s["fxy"][batch]
            fz = s["fz"][batch]
            base = s["base"][batch]

            y_xy, cache_xy = model.mlp_xy.forward_cached(fxy)
            y_z, cache_z = model.mlp_z.forward_cached(fz)
            off_xy = np.clip(y_xy, -cfg.offset_clamp, cfg.offset_clamp)
            off_z = np.clip(y_z, -cfg.offset_clamp, cfg.offset_clamp)
            refined = base.copy()
            refined[:, :2] += off_xy
            refined[:, 2:3] += off_z

            _, j = s["map_tree"].query(refined)
            residual = refined - s["map_pts"][j]
            nb = base.shape[0]
            loss = float(np.sum(residual**2)) / nb
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite training loss {loss} at epoch {epoch}")

            d_refined = 2.0 * residual / nb
            d_xy = d_refined[:, :2] * (np.abs(y_xy) < cfg.offset_clamp)
            d_z = d_refined[:, 2:3] * (np.abs(y_z) < cfg.offset_clamp)
            dw_xy, db_xy, _ = model.mlp_xy.backward(cache_xy, d_xy)
            dw_z, db_z, _ = model.mlp_z.backward(cache_z, d_z)

            grads = []
            for dw, db in zip(dw_xy, db_xy):
                grads.extend([dw, db])
            for dw, db in zip(dw_z, db_z):
                grads.extend([dw, db])
            grads = clip_gradients(grads, cfg.grad_clip)
            opt.step(params, grads)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return model, history


def save_refinement_model(path, model: RefinementModel):
    """Write the model as a versioned plain-text file (magic PLREFINE1)."""
    lines = [MODEL_MAGIC, f"k {model.k}"]
    for name, net in (("xy", model.mlp_xy), ("z", model.mlp_z)):
        sizes = " ".join(str(s) for s in net.layer_sizes)
        lines.append(f"mlp {name} {sizes}")
        lines.append(f"leak {net.leak!r}")
        for W, b in zip(net.weights, net.biases):
            lines.append(f"W {W.shape[0]} {W.shape[1]}")
            for row in W:
                lines.append(" ".join(f"{x:.17g}" for x in row))
            lines.append(f"b {b.shape[0]}")
            lines.append(" ".join(f"{x:.17g}" for x in b))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


class ModelFormatError(ValueError):
    pass


def load_refinement_model(path) -> RefinementModel:
    """Read a PLREFINE1 model file; raises ModelFormatError on violations."""
    with open(path) as f:
        lines = f.read().splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"{path}: unexpected end of file at line {pos + 1}")
        line = lines[pos]
        pos += 1
        return line

    if take().strip() != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic, expected {MODEL_MAGIC}")
    tok = take().split()
    if len(tok) != 2 or tok[0] != "k":
        raise ModelFormatError(f"{path}: line 2 must be 'k <count>'")
    k = int(tok[1])

    nets = {}
    for expected in ("xy", "z"):
        tok = take().split()
        if len(tok) < 3 or tok[0] != "mlp" or tok[1] != expected:
            raise ModelFormatError(f"{path}: line {pos}: expected 'mlp {expected} <sizes>'")
        sizes = [int(t) for t in tok[2:]]
        tok = take().split()
        if len(tok) != 2 or tok[0] != "leak":
            raise ModelFormatError(f"{path}: line {pos}: expected 'leak <slope>'")
        leak = float(tok[1])
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            tok = take().split()
            if tok != ["W", str(fan_out), str(fan_in)]:
                raise ModelFormatError(f"{path}: line {pos}: expected 'W {fan_out} {fan_in}'")
            rows = []
            for _ in range(fan_out):
                vals = [float(t) for t in take().split()]
                if len(vals) != fan_in:
                    raise ModelFormatError(f"{path}: line {pos}: expected {fan_in} values")
                rows.append(vals)
            weights.append(np.array(rows))
            tok = take().split()
            if tok != ["b", str(fan_out)]:
                raise ModelFormatError(f"{path}: line {pos}: expected 'b {fan_out}'")
            vals = [float(t) for t in take().split()]
            if len(vals) != fan_out:
                raise ModelFormatError(f"{path}: line {pos}: expected {fan_out} values")
            biases.append(np.array(vals))
        nets[expected] = Mlp(weights=weights, biases=biases, leak=leak)
    return RefinementModel(mlp_xy=nets["xy"], mlp_z=nets["z"], k=k)
