"""Per-pixel class-probability sources for rendered views.

Three interchangeable providers: a ground-truth oracle, a noisy oracle
(label flips plus confidence smoothing), and ingestion of externally
produced probability files, which is where a real trained 2D model plugs
in. Probabilities, not logits, are the interchange quantity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_MAGIC = b"PRBMAP01"

PROB_FILE_PATTERN = "view_{:05d}.prob"


class ProbabilityMapError(ValueError):
    pass


@dataclass
class FeatureMap:
    """H x W x C class probabilities for one view; zero rows off-surface."""

    view_id: int
    probabilities: np.ndarray  # float32

    def __post_init__(self):
        self.probabilities = np.ascontiguousarray(self.probabilities, dtype=np.float32)
        if self.probabilities.ndim != 3:
            raise ProbabilityMapError("probabilities must be H x W x C")


def oracle_segment(rendered, class_count: int) -> FeatureMap:
    """One-hot distributions from the rendered ground-truth label channel.

    BACKGROUND and UNLABELED pixels get all-zero rows so they contribute
    nothing downstream.
    """
    label = rendered.label
    if label.max(initial=-1) >= class_count:
        raise ProbabilityMapError(
            f"label {int(label.max())} out of range for class_count {class_count}")
    h, w = label.shape
    probs = np.zeros((h, w, class_count), dtype=np.float32)
    iy, ix = np.nonzero(label >= 0)
    probs[iy, ix, label[iy, ix]] = 1.0
    return FeatureMap(view_id=rendered.view.id, probabilities=probs)


def noisy_oracle_segment(rendered, class_count: int, flip_rate: float,
                         smoothing: float, seed) -> FeatureMap:
    """Oracle with label noise and calibration smoothing.

    Each valid labeled pixel flips to a uniformly random wrong class with
    probability flip_rate; the emitted row is
    (1 - smoothing) * one_hot + smoothing / class_count. Deterministic per
    seed.
    """
    if not 0.0 <= flip_rate < 1.0:
        raise ValueError("flip_rate must be in [0, 1)")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must be in [0, 1)")
    label = rendered.label
    if label.max(initial=-1) >= class_count:
        raise ProbabilityMapError(
            f"label {int(label.max())} out of range for class_count {class_count}")
    rng = np.random.default_rng(seed)
    h, w = label.shape
    probs = np.zeros((h, w, class_count), dtype=np.float32)
    iy, ix = np.nonzero(label >= 0)
    lab = label[iy, ix].astype(np.int64)
    if len(lab):
        flip = rng.random(len(lab)) < flip_rate
        if class_count > 1:
            # uniform over the wrong classes: draw in [0, C-1) and skip the truth
            wrong = rng.integers(0, class_count - 1, size=len(lab))
            wrong = np.where(wrong >= lab, wrong + 1, wrong)
            lab = np.where(flip, wrong, lab)
        probs[iy, ix, lab] = 1.0 - smoothing
        probs[iy, ix] += smoothing / class_count
    return FeatureMap(view_id=rendered.view.id, probabilities=probs)


def write_probability_map(fmap: FeatureMap, path) -> None:
    """Emit the probability file format: magic, JSON header line, raw f32."""
    h, w, c = fmap.probabilities.shape
    header = json.dumps({"view_id": fmap.view_id, "height": h, "width": w,
                         "classes": c, "dtype": "float32", "layout": "row-major HWC"},
                        sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(PROB_MAGIC)
        fh.write(header.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(fmap.probabilities, dtype="<f4").tobytes())


def read_probability_map(path) -> FeatureMap:
    data = Path(path).read_bytes()
    if not data.startswith(PROB_MAGIC):
        raise ProbabilityMapError(f"{path}: bad magic")
    nl = data.find(b"\n", len(PROB_MAGIC))
    if nl < 0:
        raise ProbabilityMapError(f"{path}: missing header")
    try:
        header = json.loads(data[len(PROB_MAGIC):nl].decode("ascii"))
        h, w, c = int(header["height"]), int(header["width"]), int(header["classes"])
        view_id = int(header["view_id"])
    except (ValueError, KeyError) as exc:
        raise ProbabilityMapError(f"{path}: malformed header: {exc}") from None
    payload = data[nl + 1:]
    expect = h * w * c * 4
    if len(payload) != expect:
        raise ProbabilityMapError(
            f"{path}: payload is {len(payload)} bytes, expected {expect}")
    probs = np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()
    return FeatureMap(view_id=view_id, probabilities=probs)


def load_probability_maps(directory, views, renorm_tolerance: float = 1e-3
                          ) -> dict[int, FeatureMap]:
    """Load and validate one probability file per view.

    Shapes are checked against each view's image size. Rows are treated as
    valid when they are not all-zero; valid rows within renorm_tolerance of
    summing to 1 are renormalized, anything else is rejected with the pixel
    coordinate.
    """
    directory = Path(directory)
    missing = [v.id for v in views
               if not (directory / PROB_FILE_PATTERN.format(v.id)).exists()]
    if missing:
        raise ProbabilityMapError(
            f"missing probability files for view ids {missing}")
    out = {}
    for view in views:
        fmap = read_probability_map(directory / PROB_FILE_PATTERN.format(view.id))
        h, w, _ = fmap.probabilities.shape
        if (h, w) != (view.intrinsics.height, view.intrinsics.width):
            raise ProbabilityMapError(
                f"view {view.id}: shape {(h, w)} does not match image size "
                f"{(view.intrinsics.height, view.intrinsics.width)}")
        if fmap.view_id != view.id:
            raise ProbabilityMapError(
                f"view {view.id}: file carries view id {fmap.view_id}")
        probs = fmap.probabilities
        if probs.min() < 0:
            iy, ix, _ = np.unravel_index(int(probs.argmin()), probs.shape)
            raise ProbabilityMapError(
                f"view {view.id}: negative probability at pixel ({ix}, {iy})")
        sums = probs.sum(axis=2, dtype=np.float64)
        occupied = sums > 0.0
        bad = occupied & (np.abs(sums - 1.0) > renorm_tolerance)
        if bad.any():
            iy, ix = np.argwhere(bad)[0]
            raise ProbabilityMapError(
                f"view {view.id}: pixel ({int(ix)}, {int(iy)}) sums to "
                f"{sums[iy, ix]:.6f}, outside tolerance {renorm_tolerance}")
        fix = occupied & (sums != 1.0)
        if fix.any():
            probs[fix] = probs[fix] / sums[fix, None].astype(np.float32)
        out[view.id] = fmap
    return out
