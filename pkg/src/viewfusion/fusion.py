"""Back-projection of per-pixel class probabilities onto mesh vertices.

Every vertex is projected into every view; a pixel's distribution is
accumulated only when the rendered depth there matches the vertex-to-camera
distance within the tolerance. This point-to-view direction is much cheaper
than casting a ray per pixel: scenes have far fewer vertices than the view
set has pixels. Accumulation runs in double precision and is a commutative
reduction, so view order never changes the result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import camera_center, project_points
from .mesh import TriangleMesh, save_mesh
from .render import RenderedView
from .segmenter import FeatureMap

UNOBSERVED = -1

RESERVED_COLOR = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class FusionConfig:
    depth_tolerance: float = 0.02
    reduction: str = "average"  # or "max_probability"

    def __post_init__(self):
        if self.depth_tolerance <= 0:
            raise ValueError("depth_tolerance must be positive")
        if self.reduction not in ("average", "max_probability"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass
class FusionAccumulator:
    """Per-vertex running sums over views; float64 so order cannot matter."""

    feature_sum: np.ndarray   # (N, C) float64
    counts: np.ndarray        # (N,) int64
    best_peak: np.ndarray     # (N,) float64, max single-entry confidence seen
    best_feature: np.ndarray  # (N, C) float64
    best_view: np.ndarray     # (N,) int64, view id of best_feature

    @classmethod
    def zeros(cls, vertex_count: int, class_count: int) -> "FusionAccumulator":
        return cls(feature_sum=np.zeros((vertex_count, class_count)),
                   counts=np.zeros(vertex_count, dtype=np.int64),
                   best_peak=np.full(vertex_count, -1.0),
                   best_feature=np.zeros((vertex_count, class_count)),
                   best_view=np.full(vertex_count, -1, dtype=np.int64))


@dataclass
class FusedVertexFeatures:
    feature_sum: np.ndarray        # (N, C) float64
    counts: np.ndarray             # (N,) int64
    probabilities: np.ndarray      # (N, C) float32, zero rows where unobserved
    labels: np.ndarray             # (N,) int32, UNOBSERVED where counts == 0

    @property
    def coverage(self) -> float:
        return float(np.count_nonzero(self.counts) / max(1, len(self.counts)))


def accumulate_view(mesh: TriangleMesh, rendered: RenderedView,
                    feature_map: FeatureMap, cfg: FusionConfig,
                    accumulator: FusionAccumulator) -> FusionAccumulator:
    """Add one view's depth-matched pixel features into the accumulator."""
    view = rendered.view
    intr = view.intrinsics
    probs = feature_map.probabilities
    if probs.shape[:2] != (intr.height, intr.width):
        raise ValueError(
            f"feature map shape {probs.shape[:2]} does not match view size "
            f"{(intr.height, intr.width)}")
    if probs.shape[2] != accumulator.feature_sum.shape[1]:
        raise ValueError("feature map class count does not match accumulator")

    u, v, _, in_front = project_points(mesh.positions, intr, view.extrinsics,
                                       view.params.z_near)
    idx = np.nonzero(in_front)[0]
    if len(idx) == 0:
        return accumulator
    ix = np.floor(u[idx]).astype(np.int64)
    iy = np.floor(v[idx]).astype(np.int64)
    ok = (ix >= 0) & (ix < intr.width) & (iy >= 0) & (iy < intr.height)
    idx, ix, iy = idx[ok], ix[ok], iy[ok]
    if len(idx) == 0:
        return accumulator
    ok = rendered.valid_mask[iy, ix]
    idx, ix, iy = idx[ok], ix[ok], iy[ok]
    if len(idx) == 0:
        return accumulator
    cam = camera_center(view.extrinsics)
    dist = np.linalg.norm(mesh.positions[idx] - cam, axis=1)
    ok = np.abs(rendered.depth[iy, ix] - dist) < cfg.depth_tolerance
    idx, ix, iy = idx[ok], ix[ok], iy[ok]
    if len(idx) == 0:
        return accumulator

    contrib = probs[iy, ix].astype(np.float64)
    # zero rows mean "no feature here" (background that slipped past the
    # depth check); they must not dilute the average
    nz = contrib.sum(axis=1) > 0.0
    idx, contrib = idx[nz], contrib[nz]
    if len(idx) == 0:
        return accumulator
    accumulator.feature_sum[idx] += contrib
    accumulator.counts[idx] += 1

    peak = contrib.max(axis=1)
    cur = accumulator.best_peak[idx]
    cur_view = accumulator.best_view[idx]
    take = (peak > cur) | ((peak == cur) & (view.id < cur_view))
    sel = idx[take]
    accumulator.best_peak[sel] = peak[take]
    accumulator.best_feature[sel] = contrib[take]
    accumulator.best_view[sel] = view.id
    return accumulator


def finalize(accumulator: FusionAccumulator, cfg: FusionConfig) -> FusedVertexFeatures:
    """Reduce accumulated features to per-vertex probabilities and labels.

    average divides the running sum by the contribution count;
    max_probability keeps the single most confident contribution (ties to
    the earlier view id). Vertices with no contributions are UNOBSERVED.
    """
    counts = accumulator.counts
    observed = counts > 0
    n, c = accumulator.feature_sum.shape
    probabilities = np.zeros((n, c), dtype=np.float32)
    if cfg.reduction == "average":
        probabilities[observed] = (accumulator.feature_sum[observed]
                                   / counts[observed, None]).astype(np.float32)
    else:
        probabilities[observed] = accumulator.best_feature[observed].astype(np.float32)
    labels = np.full(n, UNOBSERVED, dtype=np.int32)
    labels[observed] = np.argmax(probabilities[observed], axis=1)  # argmax ties go low
    return FusedVertexFeatures(feature_sum=accumulator.feature_sum.copy(),
                               counts=counts.copy(),
                               probabilities=probabilities, labels=labels)


def fuse_views(mesh, rendered_views, feature_maps, cfg: FusionConfig) -> FusedVertexFeatures:
    """Convenience reduction over (rendered view, feature map) pairs."""
    acc = FusionAccumulator.zeros(mesh.vertex_count,
                                  next(iter(feature_maps)).probabilities.shape[2]
                                  if feature_maps else 1)
    for rendered, fmap in zip(rendered_views, feature_maps):
        accumulate_view(mesh, rendered, fmap, cfg, acc)
    return finalize(acc, cfg)


def default_palette(class_count: int) -> np.ndarray:
    """Deterministic distinct RGB palette in [0, 1], one row per class."""
    hues = (np.arange(class_count) * 0.61803398875) % 1.0
    sat = np.where(np.arange(class_count) % 2 == 0, 0.85, 0.55)
    val = np.where(np.arange(class_count) % 3 == 0, 0.95, 0.75)
    k = (hues * 6.0).astype(np.int64) % 6
    f = hues * 6.0 - np.floor(hues * 6.0)
    p, q, t = val * (1 - sat), val * (1 - sat * f), val * (1 - sat * (1 - f))
    table = np.stack([
        np.stack([val, t, p], axis=1), np.stack([q, val, p], axis=1),
        np.stack([p, val, t], axis=1), np.stack([p, q, val], axis=1),
        np.stack([t, p, val], axis=1), np.stack([val, p, q], axis=1)], axis=0)
    return table[k, np.arange(class_count)]


def export_labeled_mesh(mesh: TriangleMesh, fused: FusedVertexFeatures,
                        palette: np.ndarray, path,
                        label_property: str = "label") -> None:
    """Write the mesh with fused labels and palette colors.

    UNOBSERVED vertices keep the UNOBSERVED label and get the reserved
    color.
    """
    palette = np.asarray(palette, dtype=np.float64).reshape(-1, 3)
    labels = fused.labels
    valid = labels >= 0
    if valid.any() and labels[valid].max() >= len(palette):
        raise ValueError("palette has fewer entries than the largest fused label")
    colors = np.tile(np.asarray(RESERVED_COLOR), (mesh.vertex_count, 1))
    colors[valid] = palette[labels[valid]]
    save_mesh(replace(mesh, colors=colors, labels=labels), path,
              label_property=label_property)


def fusion_report(fused: FusedVertexFeatures, cfg: FusionConfig,
                  view_count: int, class_count: int) -> dict:
    """Structured summary: per-class vertex counts, coverage, settings."""
    per_class = np.bincount(fused.labels[fused.labels >= 0],
                            minlength=class_count).tolist()
    return {
        "per_class_vertex_counts": per_class,
        "unobserved_vertices": int(np.count_nonzero(fused.labels == UNOBSERVED)),
        "coverage": fused.coverage,
        "reduction": cfg.reduction,
        "depth_tolerance": cfg.depth_tolerance,
        "view_count": view_count,
    }


def write_fusion_report(report: dict, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
