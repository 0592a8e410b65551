"""Virtual view records and their line-delimited JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraExtrinsics, CameraIntrinsics
from .render import RenderParams

SOURCE_TAGS = ("uniform_topdown", "uniform_center", "scale_invariant",
               "class_balanced", "original")


class ViewRecordError(ValueError):
    """Malformed view record. Carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__(f"{message} (line {line_number})")
        self.line_number = line_number


@dataclass(frozen=True)
class VirtualView:
    """One virtual camera: intrinsics, pose, render params, and provenance."""

    id: int
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    params: RenderParams
    source: str

    def __post_init__(self):
        if self.source not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source!r}")


def view_to_record(view: VirtualView) -> dict:
    intr, extr = view.intrinsics, view.extrinsics
    return {
        "view_id": view.id,
        "width": intr.width,
        "height": intr.height,
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "rotation": [float(x) for x in extr.rotation.reshape(-1)],
        "translation": [float(x) for x in extr.translation],
        "backface_culling": view.params.backface_culling,
        "z_near": view.params.z_near,
        "z_far": view.params.z_far,
        "source": view.source,
    }


def view_from_record(rec: dict, line_number: int = 0) -> VirtualView:
    try:
        intr = CameraIntrinsics(fx=float(rec["fx"]), fy=float(rec["fy"]),
                                cx=float(rec["cx"]), cy=float(rec["cy"]),
                                width=int(rec["width"]), height=int(rec["height"]))
        rot = np.array(rec["rotation"], dtype=np.float64).reshape(3, 3)
        extr = CameraExtrinsics(rotation=rot,
                                translation=np.array(rec["translation"], dtype=np.float64))
        z_far = rec.get("z_far")
        params = RenderParams(backface_culling=bool(rec["backface_culling"]),
                              z_near=float(rec.get("z_near", 0.01)),
                              z_far=None if z_far is None else float(z_far))
        return VirtualView(id=int(rec["view_id"]), intrinsics=intr, extrinsics=extr,
                           params=params, source=str(rec["source"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ViewRecordError(f"bad view record: {exc}", line_number) from None


def save_views(views, path) -> None:
    """Write views as one canonical JSON object per line."""
    with open(path, "w", encoding="ascii") as fh:
        for view in views:
            fh.write(json.dumps(view_to_record(view), sort_keys=True) + "\n")


def load_views(path) -> list[VirtualView]:
    views = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ViewRecordError(f"invalid JSON: {exc.msg}", lineno) from None
        views.append(view_from_record(rec, lineno))
    return views
