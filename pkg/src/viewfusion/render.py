"""Deterministic CPU rasterizer for the multi-channel view images.

Produces color, normal, normalized-coordinate, depth, and label channels
plus the valid-pixel mask. Rasterization is perspective-correct and
z-buffered with a top-left edge rule, triangles are clipped against the
near plane, and z ties resolve to the lower face index, so identical
inputs yield bit-identical buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .camera import camera_center, project_points
from .mesh import TriangleMesh, SceneBounds, face_normals, scene_bounds

if TYPE_CHECKING:
    from .views import VirtualView

BACKGROUND = -2

_Z_TIE = 1e-9


@dataclass(frozen=True)
class RenderParams:
    """Per-view rasterization settings.

    z_far of None resolves to twice the scene diagonal at render time.
    background is the depth sentinel stored at uncovered pixels.
    """

    backface_culling: bool = True
    z_near: float = 0.01
    z_far: float | None = None
    background: float = math.inf

    def __post_init__(self):
        if self.z_near <= 0:
            raise ValueError("z_near must be positive")
        if self.z_far is not None and self.z_far <= self.z_near:
            raise ValueError("z_far must exceed z_near")


@dataclass
class RenderedView:
    """Channel images for one virtual view.

    valid_mask is True exactly where depth lies in [z_near, z_far]; label
    is BACKGROUND exactly where valid_mask is False. vertex_ids records the
    max-barycentric-weight vertex per covered pixel (-1 at background),
    which is what the label channel reads from.
    """

    view: "VirtualView"
    color: np.ndarray       # (H, W, 3) float32
    normal: np.ndarray      # (H, W, 3) float32
    coords: np.ndarray      # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray       # (H, W) float64, params.background where invalid
    label: np.ndarray       # (H, W) int32
    valid_mask: np.ndarray  # (H, W) bool
    vertex_ids: np.ndarray  # (H, W) int32


def _clip_near(cam, bary, z_near):
    """Sutherland-Hodgman clip of one triangle against z = z_near.

    cam is (3, 3) camera-space vertices, bary the matching barycentric rows
    of the original triangle. Returns (cam_poly, bary_poly) with 0, 3, or 4
    vertices in winding order.
    """
    out_cam, out_bary = [], []
    for i in range(3):
        j = (i + 1) % 3
        za, zb = cam[i, 2], cam[j, 2]
        ina, inb = za > z_near, zb > z_near
        if ina:
            out_cam.append(cam[i])
            out_bary.append(bary[i])
        if ina != inb:
            s = (z_near - za) / (zb - za)
            out_cam.append(cam[i] + s * (cam[j] - cam[i]))
            out_bary.append(bary[i] + s * (bary[j] - bary[i]))
    return out_cam, out_bary


def _rasterize(mesh, intr, extr, z_near):
    """Core scan conversion.

    Returns (depth, face_idx, bary) buffers; face_idx is -1 and depth +inf
    where no front geometry landed.
    """
    h, w = intr.height, intr.width
    depth = np.full((h, w), np.inf, dtype=np.float64)
    face_idx = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3), dtype=np.float64)
    if mesh.face_count == 0 or mesh.vertex_count == 0:
        return depth, face_idx, bary

    cam_pts = mesh.positions @ extr.rotation.T + extr.translation
    fx, fy, cx, cy = intr.fx, intr.fy, intr.cx, intr.cy
    eye3 = np.eye(3)
    areas2 = np.linalg.norm(face_normals(mesh, normalize=False), axis=1)

    for fid in range(mesh.face_count):
        if areas2[fid] <= 1e-12:
            continue
        tri = cam_pts[mesh.faces[fid]]
        zs = tri[:, 2]
        if zs.max() <= z_near:
            continue
        if zs.min() > z_near:
            polys = [(tri, eye3)]
        else:
            cam_poly, bary_poly = _clip_near(tri, eye3, z_near)
            if len(cam_poly) < 3:
                continue
            polys = [(np.array([cam_poly[0], cam_poly[k], cam_poly[k + 1]]),
                      np.array([bary_poly[0], bary_poly[k], bary_poly[k + 1]]))
                     for k in range(1, len(cam_poly) - 1)]
        for sub, sub_bary in polys:
            sz = sub[:, 2]
            su = fx * sub[:, 0] / sz + cx
            sv = fy * sub[:, 1] / sz + cy
            area = (su[1] - su[0]) * (sv[2] - sv[0]) - (su[2] - su[0]) * (sv[1] - sv[0])
            if area == 0.0:
                continue
            if area < 0.0:
                su, sv, sz = su[[0, 2, 1]], sv[[0, 2, 1]], sz[[0, 2, 1]]
                sub_bary = sub_bary[[0, 2, 1]]
                area = -area
            ix0 = max(0, math.ceil(su.min() - 0.5))
            ix1 = min(w - 1, math.floor(su.max() - 0.5))
            iy0 = max(0, math.ceil(sv.min() - 0.5))
            iy1 = min(h - 1, math.floor(sv.max() - 0.5))
            if ix0 > ix1 or iy0 > iy1:
                continue
            px = np.arange(ix0, ix1 + 1, dtype=np.float64) + 0.5
            py = np.arange(iy0, iy1 + 1, dtype=np.float64) + 0.5

            covered = None
            ws = []
            for a, b in ((1, 2), (2, 0), (0, 1)):
                dx, dy = su[b] - su[a], sv[b] - sv[a]
                wk = dx * (py[:, None] - sv[a]) - dy * (px[None, :] - su[a])
                tl = dy < 0.0 or (dy == 0.0 and dx > 0.0)
                inside = wk > 0.0 if not tl else wk >= 0.0
                covered = inside if covered is None else covered & inside
                ws.append(wk)
            if not covered.any():
                continue

            inv_z = np.float64(1.0) / sz
            q = (ws[0] * inv_z[0] + ws[1] * inv_z[1] + ws[2] * inv_z[2]) / area
            with np.errstate(divide="ignore", invalid="ignore"):
                z_pix = 1.0 / q

            win = depth[iy0:iy1 + 1, ix0:ix1 + 1]
            better = covered & (z_pix < win - _Z_TIE)
            if not better.any():
                continue
            wsum = ws[0][better] * inv_z[0] + ws[1][better] * inv_z[1] + ws[2][better] * inv_z[2]
            pb = (ws[0][better, None] * inv_z[0] * sub_bary[0]
                  + ws[1][better, None] * inv_z[1] * sub_bary[1]
                  + ws[2][better, None] * inv_z[2] * sub_bary[2]) / wsum[:, None]
            win[better] = z_pix[better]
            face_idx[iy0:iy1 + 1, ix0:ix1 + 1][better] = fid
            bary[iy0:iy1 + 1, ix0:ix1 + 1][better] = pb

    return depth, face_idx, bary


def render(mesh: TriangleMesh, view: "VirtualView",
           params: RenderParams | None = None,
           bounds: SceneBounds | None = None) -> RenderedView:
    """Rasterize all channels of a view.

    params defaults to view.params; bounds (for the normalized coordinate
    channel) defaults to the mesh AABB. Backfaces are dropped before
    rasterization when params.backface_culling is set, so cameras can see
    past them into the scene.
    """
    if params is None:
        params = view.params
    intr, extr = view.intrinsics, view.extrinsics
    h, w = intr.height, intr.width

    if mesh.face_count and mesh.normals is None:
        raise ValueError("mesh lacks vertex normals; run compute_vertex_normals first")
    if bounds is None and mesh.vertex_count:
        bounds = scene_bounds(mesh)
    z_far = params.z_far
    if z_far is None:
        z_far = 2.0 * bounds.diagonal if bounds is not None else math.inf
        z_far = max(z_far, params.z_near * 2.0)

    if mesh.face_count and params.backface_culling:
        work = _cull_backfaces(mesh, extr)
    else:
        work = mesh
    depth, face_idx, bary = _rasterize(work, intr, extr, params.z_near)

    valid = np.isfinite(depth) & (depth >= params.z_near) & (depth <= z_far)
    depth = np.where(valid, depth, params.background)
    face_idx[~valid] = -1

    color = np.zeros((h, w, 3), dtype=np.float32)
    normal = np.zeros((h, w, 3), dtype=np.float32)
    coords = np.zeros((h, w, 3), dtype=np.float32)
    label = np.full((h, w), BACKGROUND, dtype=np.int32)
    vertex_ids = np.full((h, w), -1, dtype=np.int32)

    if valid.any():
        iy, ix = np.nonzero(valid)
        vids = work.faces[face_idx[iy, ix]]          # (K, 3) vertex indices
        b = bary[iy, ix]                             # (K, 3)
        winners = vids[np.arange(len(vids)), np.argmax(b, axis=1)]
        vertex_ids[iy, ix] = winners
        label[iy, ix] = work.labels[winners]

        color[iy, ix] = np.einsum("kj,kjc->kc", b, work.colors[vids]).astype(np.float32)
        nrm = np.einsum("kj,kjc->kc", b, work.normals[vids])
        lens = np.linalg.norm(nrm, axis=1)
        lens[lens <= 1e-12] = 1.0
        normal[iy, ix] = (nrm / lens[:, None]).astype(np.float32)
        pos = np.einsum("kj,kjc->kc", b, work.positions[vids])
        extent = np.where(bounds.extent > 1e-12, bounds.extent, 1.0)
        coords[iy, ix] = np.clip((pos - bounds.min_corner) / extent, 0.0, 1.0).astype(np.float32)

    return RenderedView(view=view, color=color, normal=normal, coords=coords,
                        depth=depth, label=label, valid_mask=valid,
                        vertex_ids=vertex_ids)


def _cull_backfaces(mesh, extr):
    """Subset mesh containing only faces whose front side faces the camera."""
    tri_normals = face_normals(mesh, normalize=False)
    ray = mesh.positions[mesh.faces[:, 0]] - camera_center(extr)
    keep = np.einsum("ij,ij->i", tri_normals, ray) <= 0.0
    return replace(mesh, faces=mesh.faces[keep])


def visible_vertices(mesh: TriangleMesh, rendered: RenderedView,
                     delta: float) -> np.ndarray:
    """Vertex ids whose projection depth-matches the rendered depth buffer.

    A vertex is visible when it projects in front of the near plane, its
    pixel lies in the valid set, and the rendered depth there agrees with
    the point-to-camera distance within delta.
    """
    mask = visibility_mask(mesh.positions, rendered, delta)
    return np.nonzero(mask)[0]


def visibility_mask(points, rendered: RenderedView, delta: float) -> np.ndarray:
    """Boolean depth-matched visibility for an (N, 3) point array."""
    view = rendered.view
    intr, extr = view.intrinsics, view.extrinsics
    u, v, _, in_front = project_points(points, intr, extr, view.params.z_near)
    mask = np.zeros(len(in_front), dtype=bool)
    idx = np.nonzero(in_front)[0]
    if not len(idx):
        return mask
    ix = np.floor(u[idx]).astype(np.int64)
    iy = np.floor(v[idx]).astype(np.int64)
    ok = (ix >= 0) & (ix < intr.width) & (iy >= 0) & (iy < intr.height)
    idx, ix, iy = idx[ok], ix[ok], iy[ok]
    if not len(idx):
        return mask
    valid = rendered.valid_mask[iy, ix]
    idx, ix, iy = idx[valid], ix[valid], iy[valid]
    if not len(idx):
        return mask
    cam = camera_center(extr)
    dist = np.linalg.norm(np.asarray(points, dtype=np.float64)[idx] - cam, axis=1)
    mask[idx] = np.abs(rendered.depth[iy, ix] - dist) < delta
    return mask
