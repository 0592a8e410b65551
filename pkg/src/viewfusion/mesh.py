"""Triangle mesh container, PLY file I/O, and derived geometry.

The mesh format is a PLY subset: ASCII or binary little-endian, a `vertex`
element with float32 x/y/z (optionally uchar red/green/blue and an int32
per-vertex label property), and a `face` element with triangle index lists.
Vertex labels are class ids in [0, class_count) or UNLABELED.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

UNLABELED = -1

log = logging.getLogger(__name__)


class MeshFormatError(ValueError):
    """Malformed mesh file. Carries the byte offset of the offending data."""

    def __init__(self, message, byte_offset):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class MeshValidationError(ValueError):
    """Structurally parseable mesh that violates a content constraint."""


@dataclass
class TriangleMesh:
    """Vertices with attributes plus CCW-wound triangle faces.

    positions are meters, colors are RGB in [0, 1], labels are int32 class
    ids or UNLABELED. normals is None until compute_vertex_normals runs.
    """

    positions: np.ndarray          # (N, 3) float64
    faces: np.ndarray              # (M, 3) int32
    colors: np.ndarray | None = None    # (N, 3) float64 in [0, 1]
    labels: np.ndarray | None = None    # (N,) int32
    normals: np.ndarray | None = None   # (N, 3) float64, unit
    class_count: int = 1

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32).reshape(-1, 3)
        n = len(self.positions)
        if self.colors is None:
            self.colors = np.full((n, 3), 0.5, dtype=np.float64)
        else:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if self.labels is None:
            self.labels = np.full(n, UNLABELED, dtype=np.int32)
        else:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int32).reshape(-1)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.class_count = int(self.class_count)
        self._validate()

    def _validate(self):
        n = len(self.positions)
        if len(self.colors) != n or len(self.labels) != n:
            raise MeshValidationError("vertex attribute arrays disagree on vertex count")
        if self.normals is not None and len(self.normals) != n:
            raise MeshValidationError("normal array disagrees on vertex count")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            bad = int(self.faces.max() if self.faces.max() >= n else self.faces.min())
            raise MeshValidationError(f"face references vertex {bad} of {n}")
        if self.class_count < 1:
            raise MeshValidationError("class_count must be positive")
        lab = self.labels
        bad = lab[(lab != UNLABELED) & ((lab < 0) | (lab >= self.class_count))]
        if bad.size:
            raise MeshValidationError(
                f"label {int(bad[0])} outside [0, {self.class_count}) and not UNLABELED")

    @property
    def vertex_count(self):
        return len(self.positions)

    @property
    def face_count(self):
        return len(self.faces)


@dataclass(frozen=True)
class SceneBounds:
    """Tight axis-aligned bounding box of a scene, in meters."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_corner", np.asarray(self.min_corner, dtype=np.float64))
        object.__setattr__(self, "max_corner", np.asarray(self.max_corner, dtype=np.float64))
        if np.any(self.min_corner > self.max_corner):
            raise ValueError("min_corner must be <= max_corner componentwise")

    @property
    def center(self):
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def extent(self):
        return self.max_corner - self.min_corner

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.extent))


def scene_bounds(mesh: TriangleMesh) -> SceneBounds:
    """Tight AABB over all vertices. Raises on an empty mesh."""
    if mesh.vertex_count == 0:
        raise MeshValidationError("cannot compute bounds of an empty mesh")
    return SceneBounds(mesh.positions.min(axis=0), mesh.positions.max(axis=0))


def face_normals(mesh: TriangleMesh, normalize: bool = True) -> np.ndarray:
    """Per-face normals from CCW winding. Degenerate faces get zero vectors."""
    p = mesh.positions
    f = mesh.faces
    n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    if normalize:
        lens = np.linalg.norm(n, axis=1)
        ok = lens > 1e-12
        n[ok] /= lens[ok, None]
        n[~ok] = 0.0
    return n


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(mesh, normalize=False), axis=1)


def degenerate_faces(mesh: TriangleMesh, area_eps: float = 1e-12) -> np.ndarray:
    """Boolean mask of zero-area faces (kept in the mesh, skipped elsewhere)."""
    return face_areas(mesh) <= area_eps


def compute_vertex_normals(mesh: TriangleMesh) -> TriangleMesh:
    """Return a copy with unit vertex normals (area-weighted face average).

    Degenerate faces contribute nothing. Vertices with no valid incident
    face fall back to +Z and are logged.
    """
    cross = face_normals(mesh, normalize=False)  # magnitude 2*area: already area-weighted
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    ok = areas > 1e-12
    acc = np.zeros((mesh.vertex_count, 3), dtype=np.float64)
    for k in range(3):
        np.add.at(acc, mesh.faces[ok, k], cross[ok])
    lens = np.linalg.norm(acc, axis=1)
    flat = lens <= 1e-12
    if np.any(flat):
        log.warning("%d vertices with no usable incident face; normals set to +Z",
                    int(flat.sum()))
        acc[flat] = (0.0, 0.0, 1.0)
        lens[flat] = 1.0
    return replace(mesh, normals=acc / lens[:, None])


def isolated_vertices(mesh: TriangleMesh) -> np.ndarray:
    """Mask of vertices not referenced by any non-degenerate face."""
    mask = np.ones(mesh.vertex_count, dtype=bool)
    ok = ~degenerate_faces(mesh)
    mask[np.unique(mesh.faces[ok])] = False
    return mask


def face_adjacency(mesh: TriangleMesh) -> list[np.ndarray]:
    """Shared-edge adjacency: for each face, the sorted neighbor face ids."""
    f = mesh.faces
    m = len(f)
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    owner = np.tile(np.arange(m, dtype=np.int64), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    adjacency: list[list[int]] = [[] for _ in range(m)]
    start = 0
    for i in range(1, len(edges) + 1):
        if i == len(edges) or (edges[i] != edges[start]).any():
            group = owner[start:i]
            if len(group) > 1:
                for a in group:
                    for b in group:
                        if a != b:
                            adjacency[a].append(int(b))
            start = i
    return [np.unique(np.array(nbrs, dtype=np.int64)) for nbrs in adjacency]


# ---------------------------------------------------------------------------
# PLY I/O

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise MeshFormatError("missing 'ply' magic", 0)
    end = data.find(b"end_header")
    if end < 0:
        raise MeshFormatError("missing end_header", len(data))
    nl = data.find(b"\n", end)
    if nl < 0:
        raise MeshFormatError("end_header line not terminated", end)
    body_offset = nl + 1
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_code)] , line_offset); list props use ("list", ct, it)
    offset = 0
    for raw in data[:body_offset].splitlines(keepends=True):
        line = raw.decode("ascii", errors="replace").strip()
        tokens = line.split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info", "end_header"):
            offset += len(raw)
            continue
        if tokens[0] == "format":
            if len(tokens) != 3 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise MeshFormatError(f"unsupported format line {line!r}", offset)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise MeshFormatError(f"bad element line {line!r}", offset)
            elements.append({"name": tokens[1], "count": int(tokens[2]),
                             "props": [], "offset": offset})
        elif tokens[0] == "property":
            if not elements:
                raise MeshFormatError("property before any element", offset)
            if tokens[1] == "list":
                if len(tokens) != 5 or tokens[2] not in _PLY_TYPES or tokens[3] not in _PLY_TYPES:
                    raise MeshFormatError(f"bad list property {line!r}", offset)
                elements[-1]["props"].append(
                    (tokens[4], ("list", _PLY_TYPES[tokens[2]], _PLY_TYPES[tokens[3]])))
            else:
                if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                    raise MeshFormatError(f"bad property {line!r}", offset)
                elements[-1]["props"].append((tokens[2], _PLY_TYPES[tokens[1]]))
        else:
            raise MeshFormatError(f"unknown header keyword {tokens[0]!r}", offset)
        offset += len(raw)
    if fmt is None:
        raise MeshFormatError("missing format line", 0)
    return fmt, elements, body_offset


def _read_ascii_element(lines, element, line_offsets, cursor):
    names = [p[0] for p in element["props"]]
    is_list = [isinstance(p[1], tuple) for p in element["props"]]
    rows = {name: [] for name in names}
    for _ in range(element["count"]):
        if cursor >= len(lines):
            raise MeshFormatError(
                f"unexpected end of file in element {element['name']!r}",
                line_offsets[-1] if line_offsets else 0)
        tokens = lines[cursor].split()
        pos = 0
        for name, lst in zip(names, is_list):
            try:
                if lst:
                    count = int(tokens[pos])
                    values = [float(v) for v in tokens[pos + 1:pos + 1 + count]]
                    if len(values) != count:
                        raise IndexError
                    rows[name].append(values)
                    pos += 1 + count
                else:
                    rows[name].append(float(tokens[pos]))
                    pos += 1
            except (ValueError, IndexError):
                raise MeshFormatError(
                    f"malformed record in element {element['name']!r}",
                    line_offsets[cursor]) from None
        cursor += 1
    return rows, cursor


def load_mesh(path, label_property: str = "label", class_count: int | None = None) -> TriangleMesh:
    """Load a mesh from a PLY file in the supported subset.

    Labels come from the named int vertex property; all-UNLABELED if the
    property is absent. class_count defaults to max(label)+1 (min 1).
    """
    data = Path(path).read_bytes()
    fmt, elements, body_offset = _parse_header(data)

    vertex_el = next((e for e in elements if e["name"] == "vertex"), None)
    face_el = next((e for e in elements if e["name"] == "face"), None)
    if vertex_el is None or face_el is None:
        raise MeshFormatError("file must contain vertex and face elements", 0)

    parsed: dict[str, dict] = {}
    if fmt == "ascii":
        body = data[body_offset:]
        raw_lines = body.splitlines(keepends=True)
        line_offsets, off = [], body_offset
        lines = []
        for raw in raw_lines:
            line_offsets.append(off)
            off += len(raw)
            lines.append(raw.decode("ascii", errors="replace"))
        cursor = 0
        for element in elements:
            rows, cursor = _read_ascii_element(lines, element, line_offsets, cursor)
            parsed[element["name"]] = rows
    else:
        offset = body_offset
        for element in elements:
            rows = {}
            lists = [(n, t) for n, t in element["props"] if isinstance(t, tuple)]
            if not lists:
                dtype = np.dtype([(n, "<" + t) for n, t in element["props"]])
                need = dtype.itemsize * element["count"]
                if len(data) - offset < need:
                    raise MeshFormatError(
                        f"truncated element {element['name']!r}", offset)
                arr = np.frombuffer(data, dtype=dtype, count=element["count"], offset=offset)
                for n, _ in element["props"]:
                    rows[n] = arr[n]
                offset += need
            else:
                if len(element["props"]) != 1:
                    raise MeshFormatError(
                        "mixed list and scalar properties are unsupported", element["offset"])
                name, (_, ct, it) = element["props"][0]
                # optimistic fixed-triangle parse; fall back to a scan on mismatch
                cdt, idt = np.dtype("<" + ct), np.dtype("<" + it)
                rec = np.dtype([("n", cdt), ("v", idt, (3,))])
                need = rec.itemsize * element["count"]
                ok = len(data) - offset >= need
                if ok:
                    arr = np.frombuffer(data, dtype=rec, count=element["count"], offset=offset)
                    ok = bool((arr["n"] == 3).all())
                if not ok:
                    scan = offset
                    for i in range(element["count"]):
                        if len(data) - scan < cdt.itemsize:
                            raise MeshFormatError(f"truncated face {i}", scan)
                        cnt = int(np.frombuffer(data, dtype=cdt, count=1, offset=scan)[0])
                        if cnt != 3:
                            raise MeshFormatError(
                                f"face {i} has {cnt} vertices; only triangles are supported",
                                scan)
                        scan += cdt.itemsize + 3 * idt.itemsize
                    raise MeshFormatError("truncated face element", scan)
                rows[name] = arr["v"]
                offset += need
            parsed[element["name"]] = rows

    vrows = parsed["vertex"]
    for coord in ("x", "y", "z"):
        if coord not in vrows:
            raise MeshFormatError(f"vertex element lacks property {coord!r}",
                                  vertex_el["offset"])
    positions = np.stack([np.asarray(vrows["x"], dtype=np.float64),
                          np.asarray(vrows["y"], dtype=np.float64),
                          np.asarray(vrows["z"], dtype=np.float64)], axis=1)
    colors = None
    if all(c in vrows for c in ("red", "green", "blue")):
        colors = np.stack([np.asarray(vrows[c], dtype=np.float64)
                           for c in ("red", "green", "blue")], axis=1) / 255.0
    labels = None
    if label_property in vrows:
        labels = np.asarray(vrows[label_property], dtype=np.float64).astype(np.int32)

    frows = parsed["face"]
    key = "vertex_indices" if "vertex_indices" in frows else "vertex_index"
    if key not in frows:
        raise MeshFormatError("face element lacks a vertex index list", face_el["offset"])
    fv = frows[key]
    if fmt == "ascii":
        lengths = {len(row) for row in fv}
        if lengths - {3}:
            raise MeshFormatError(
                f"face with {max(lengths)} vertices; only triangles are supported",
                face_el["offset"])
        faces = np.asarray(fv, dtype=np.float64).astype(np.int64) if fv else np.zeros((0, 3), np.int64)
    else:
        faces = np.asarray(fv, dtype=np.int64)

    if class_count is None:
        class_count = int(labels.max()) + 1 if labels is not None and labels.size and labels.max() >= 0 else 1
    return TriangleMesh(positions=positions, faces=faces, colors=colors,
                        labels=labels, class_count=class_count)


def save_mesh(mesh: TriangleMesh, path, label_property: str = "label",
              binary: bool = True) -> None:
    """Write the mesh in the PLY subset (binary little-endian by default)."""
    path = Path(path)
    n, m = mesh.vertex_count, mesh.face_count
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {n}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"property int {label_property}",
        f"element face {m}",
        "property list uchar uint vertex_indices",
        "end_header",
    ]
    pos = mesh.positions.astype(np.float32)
    rgb = np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)
    lab = mesh.labels.astype(np.int32)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            vdt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                            ("red", "u1"), ("green", "u1"), ("blue", "u1"),
                            ("label", "<i4")])
            varr = np.empty(n, dtype=vdt)
            varr["x"], varr["y"], varr["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
            varr["red"], varr["green"], varr["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
            varr["label"] = lab
            fh.write(varr.tobytes())
            fdt = np.dtype([("n", "u1"), ("v", "<u4", (3,))])
            farr = np.empty(m, dtype=fdt)
            farr["n"] = 3
            farr["v"] = mesh.faces.astype(np.uint32)
            fh.write(farr.tobytes())
        else:
            for i in range(n):
                x, y, z = (repr(float(c)) for c in pos[i])
                fh.write((f"{x} {y} {z} {rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]} "
                          f"{lab[i]}\n").encode("ascii"))
            for i in range(m):
                f = mesh.faces[i]
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))
