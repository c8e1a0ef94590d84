"""Tetrahedral meshes, NASTRAN bulk-data I/O, and boundary-face utilities.

Node coordinates are millimeters throughout this module, exactly as read
from the input file; the physics modules convert to SI units where needed.

Supported NASTRAN bulk-data subset:

* ``GRID`` nodes in the basic coordinate system (``CP`` blank or 0)
* ``CTETRA`` 4-node solids; 10-node solids are accepted with the six
  midside nodes discarded
* ``PSOLID`` property cards, whose PIDs double as region labels
* optional ``BEGIN BULK`` / ``ENDDATA`` framing, ``$`` comments,
  small-field (8-column) and free-field (comma) formats, continuations
* ``$REGION <pid> <name>`` comments attach a readable region name to a PID

Other card types are skipped with a warning. Solid elements of other
shapes (CHEXA, CPENTA, CPYRAM) and non-basic coordinate systems are
rejected because silently dropping them would change the physics.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

from .errors import MeshError, NastranParseError

log = logging.getLogger(__name__)

# Local node triples of the four faces, ordered so the cross product
# (b - a) x (c - a) points out of a positively oriented tetrahedron.
# Face i is the face opposite local node i.
TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))

_REJECTED_CARDS = {"CHEXA", "CPENTA", "CPYRAM"}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 4-node tetrahedral mesh with integer region labels.

    ``elements`` holds 0-based positional node indices; the original file
    ids are kept in ``node_ids`` / ``element_ids`` for reporting and I/O.
    """

    nodes: np.ndarray                     # (n, 3) float64, mm
    elements: np.ndarray                  # (m, 4) int64, positional
    region_ids: np.ndarray                # (m,) int64
    region_names: Mapping[int, str]
    node_ids: np.ndarray = None           # (n,) int64, defaults to 1..n
    element_ids: np.ndarray = None        # (m,) int64, defaults to 1..m

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        regions = np.ascontiguousarray(self.region_ids, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError(f"nodes must be (n, 3), got {nodes.shape}")
        if elements.ndim != 2 or elements.shape[1] != 4:
            raise MeshError(f"elements must be (m, 4), got {elements.shape}")
        if regions.shape != (elements.shape[0],):
            raise MeshError("region_ids length must match element count")
        node_ids = self.node_ids
        if node_ids is None:
            node_ids = np.arange(1, len(nodes) + 1, dtype=np.int64)
        node_ids = np.ascontiguousarray(node_ids, dtype=np.int64)
        element_ids = self.element_ids
        if element_ids is None:
            element_ids = np.arange(1, len(elements) + 1, dtype=np.int64)
        element_ids = np.ascontiguousarray(element_ids, dtype=np.int64)
        if node_ids.shape != (len(nodes),) or element_ids.shape != (len(elements),):
            raise MeshError("id array lengths must match node/element counts")
        for arr in (nodes, elements, regions, node_ids, element_ids):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "region_ids", regions)
        object.__setattr__(self, "region_names", dict(self.region_names))
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "element_ids", element_ids)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def element_count(self) -> int:
        return len(self.elements)

    def signed_volumes(self) -> np.ndarray:
        """Signed element volumes in mm^3 (positive for valid orientation)."""
        p = self.nodes[self.elements]
        d = p[:, 1:, :] - p[:, :1, :]
        return np.linalg.det(d) / 6.0

    def centroids(self) -> np.ndarray:
        """Element centroids in mm."""
        return self.nodes[self.elements].mean(axis=1)

    def region_id_for(self, name: str) -> list[int]:
        """All region ids whose name matches ``name`` (case-insensitive)."""
        wanted = name.casefold()
        return [rid for rid, rname in self.region_names.items()
                if rname.casefold() == wanted]

    def with_region_names(self, mapping: Mapping) -> "Mesh":
        """New mesh with region names replaced per ``mapping`` (pid -> name).

        Keys may be ints or their string forms, as in the JSON sidecar.
        """
        renamed = dict(self.region_names)
        for key, name in mapping.items():
            pid = int(key)
            if pid not in renamed:
                raise MeshError(f"region map names unknown region id {pid}")
            renamed[pid] = str(name)
        return Mesh(self.nodes, self.elements, self.region_ids, renamed,
                    self.node_ids, self.element_ids)


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Boundary triangles, each owned by exactly one tetrahedron.

    Normals are unit vectors pointing out of the mesh; areas are mm^2.
    """

    element_index: np.ndarray     # (f,) positional index of the owning tet
    local_face: np.ndarray        # (f,) 0..3
    node_indices: np.ndarray      # (f, 3) positional node indices
    normals: np.ndarray           # (f, 3) unit outward
    areas: np.ndarray             # (f,) mm^2

    def __post_init__(self):
        for name in ("element_index", "local_face", "node_indices",
                     "normals", "areas"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.element_index)

    @property
    def total_area(self) -> float:
        """Total patch area in mm^2."""
        return float(self.areas.sum())

    def subset(self, mask: np.ndarray) -> "FaceSet":
        return FaceSet(self.element_index[mask], self.local_face[mask],
                       self.node_indices[mask], self.normals[mask],
                       self.areas[mask])

    def face_keys(self) -> set[tuple[int, int]]:
        """(owner element index, local face) pairs identifying each face."""
        return set(zip(self.element_index.tolist(), self.local_face.tolist()))


@dataclass(frozen=True)
class Defect:
    kind: str          # negative_volume, duplicate_node_ref, dangling_node_ref,
                       # dangling_region, orphan_node
    ids: tuple


@dataclass(frozen=True)
class ValidationReport:
    node_count: int
    element_count: int
    region_count: int
    defects: tuple[Defect, ...]

    @property
    def is_valid(self) -> bool:
        return not self.defects

    def summary(self) -> str:
        head = (f"{self.node_count} nodes, {self.element_count} elements, "
                f"{self.region_count} regions")
        if self.is_valid:
            return f"{head}; no defects"
        kinds: dict[str, int] = {}
        for d in self.defects:
            kinds[d.kind] = kinds.get(d.kind, 0) + 1
        detail = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))
        return f"{head}; {len(self.defects)} defects ({detail})"


# ---------------------------------------------------------------------------
# NASTRAN parsing
# ---------------------------------------------------------------------------

# NASTRAN reals may carry an embedded exponent with no E, e.g. 1.5+3 == 1.5e3.
_EMBEDDED_EXPONENT = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+))([+-]\d+)$")


def _parse_real(text: str, line_no: int, card: str, default: float = 0.0) -> float:
    text = text.strip()
    if not text:
        return default
    try:
        return float(text)
    except ValueError:
        pass
    m = _EMBEDDED_EXPONENT.match(text)
    if m:
        return float(m.group(1) + "e" + m.group(2))
    raise NastranParseError(f"bad real field {text!r}", line_no, card)


def _parse_int(text: str, line_no: int, card: str, what: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        raise NastranParseError(f"bad {what} field {text!r}", line_no, card) from None


def _is_real(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return bool(_EMBEDDED_EXPONENT.match(text))


def _split_fields(line: str) -> list[str]:
    """Fields 1..9 of one physical line (field 10 is a continuation marker).

    In free-field form the trailing token is a continuation marker when it
    sits in field 10 or is a non-numeric ``+tag``; signed reals like
    ``+2.5`` in data fields are kept.
    """
    if "," in line:
        tokens = [t.strip() for t in line.split(",")]
        if tokens and tokens[-1].startswith("+") and (
                len(tokens) > 9 or not _is_real(tokens[-1])):
            tokens = tokens[:-1]
        return tokens
    line = line.expandtabs(8)
    return [line[i:i + 8].strip() for i in range(0, min(len(line), 72), 8)]


def _logical_cards(lines: Sequence[str]):
    """Yield (first_line_no, fields, first_line) with continuations merged.

    A physical line is a continuation when its first field is blank or
    starts with ``+``. Region-name annotations are collected from
    ``$REGION`` comments and returned through the generator's return value.
    """
    annotations: dict[int, str] = {}
    current: list[str] | None = None
    current_no = 0
    current_img = ""

    # Skip any header in files framed with BEGIN BULK.
    start = 0
    for i, line in enumerate(lines):
        if line.upper().lstrip().startswith("BEGIN") and "BULK" in line.upper():
            start = i + 1
            break

    for offset, raw in enumerate(lines[start:]):
        line_no = start + offset + 1
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        stripped = line.lstrip()
        if stripped.startswith("$"):
            body = stripped[1:].strip()
            if body.upper().startswith("REGION"):
                parts = body[6:].strip().split(None, 1)
                if len(parts) == 2:
                    try:
                        annotations[int(parts[0])] = parts[1].strip()
                    except ValueError:
                        pass
            continue
        fields = _split_fields(line)
        if not fields:
            continue
        name = fields[0]
        if name.upper() == "ENDDATA":
            break
        if name == "" or name.startswith("+"):
            if current is None:
                raise NastranParseError("continuation without a parent card",
                                        line_no, line)
            current.extend(fields[1:])
            continue
        if current is not None:
            yield current_no, current, current_img
        current = fields
        current_no = line_no
        current_img = line
    if current is not None:
        yield current_no, current, current_img
    return annotations


def parse_nastran(source: str | IO[str] | Path) -> Mesh:
    """Parse NASTRAN bulk data into a :class:`Mesh`.

    ``source`` may be a string of bulk data, an open text stream, or a
    path. Elements are reoriented to positive signed volume; zero-volume
    elements are rejected because they poison the stiffness matrix.
    """
    if isinstance(source, Path):
        text = source.read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    lines = text.splitlines()

    node_id_list: list[int] = []
    coords: list[tuple[float, float, float]] = []
    elem_ids: list[int] = []
    elem_nodes: list[tuple[int, int, int, int]] = []
    elem_pids: list[int] = []
    psolid_pids: list[int] = []
    skipped: dict[str, int] = {}

    gen = _logical_cards(lines)
    annotations: dict[int, str] = {}
    while True:
        try:
            line_no, fields, image = next(gen)
        except StopIteration as stop:
            annotations = stop.value or {}
            break
        name = fields[0].upper()
        data = fields[1:]
        if name == "GRID":
            if len(data) < 1:
                raise NastranParseError("GRID card missing id", line_no, image)
            nid = _parse_int(data[0], line_no, image, "GRID id")
            cp = data[1].strip() if len(data) > 1 else ""
            if cp not in ("", "0"):
                raise NastranParseError(
                    f"GRID {nid} uses coordinate system CP={cp}; only the "
                    "basic system (CP blank or 0) is supported", line_no, image)
            x = _parse_real(data[2] if len(data) > 2 else "", line_no, image)
            y = _parse_real(data[3] if len(data) > 3 else "", line_no, image)
            z = _parse_real(data[4] if len(data) > 4 else "", line_no, image)
            node_id_list.append(nid)
            coords.append((x, y, z))
        elif name == "CTETRA":
            if len(data) < 6:
                raise NastranParseError("CTETRA card too short", line_no, image)
            eid = _parse_int(data[0], line_no, image, "CTETRA eid")
            pid = _parse_int(data[1], line_no, image, "CTETRA pid")
            g_fields = [f for f in data[2:12]]
            while g_fields and not g_fields[-1].strip():
                g_fields.pop()
            g = [_parse_int(f, line_no, image, "CTETRA node") for f in g_fields]
            if len(g) == 10:
                g = g[:4]           # corner nodes only; midside nodes dropped
            elif len(g) != 4:
                raise NastranParseError(
                    f"CTETRA {eid} has {len(g)} nodes; expected 4 or 10",
                    line_no, image)
            elem_ids.append(eid)
            elem_nodes.append(tuple(g))
            elem_pids.append(pid)
        elif name == "PSOLID":
            if not data:
                raise NastranParseError("PSOLID card missing pid", line_no, image)
            psolid_pids.append(_parse_int(data[0], line_no, image, "PSOLID pid"))
        elif name in _REJECTED_CARDS:
            raise NastranParseError(
                f"{name} elements are not supported", line_no, image)
        else:
            skipped[name] = skipped.get(name, 0) + 1

    if skipped:
        total = sum(skipped.values())
        log.warning("skipped %d unsupported card(s): %s", total,
                    ", ".join(f"{k} x{v}" for k, v in sorted(skipped.items())))

    if not node_id_list:
        raise NastranParseError("no GRID cards found")

    node_ids = np.asarray(node_id_list, dtype=np.int64)
    if len(np.unique(node_ids)) != len(node_ids):
        raise NastranParseError("duplicate GRID ids")
    index_of = {int(nid): i for i, nid in enumerate(node_ids)}

    elements = np.empty((len(elem_nodes), 4), dtype=np.int64)
    for k, conn in enumerate(elem_nodes):
        try:
            elements[k] = [index_of[g] for g in conn]
        except KeyError as missing:
            raise NastranParseError(
                f"CTETRA {elem_ids[k]} references missing GRID {missing.args[0]}"
            ) from None

    nodes = np.asarray(coords, dtype=np.float64)
    region_ids = np.asarray(elem_pids, dtype=np.int64)

    # Canonical orientation fix: make every signed volume positive.
    if len(elements):
        d = nodes[elements][:, 1:, :] - nodes[elements][:, :1, :]
        vol = np.linalg.det(d) / 6.0
        degenerate = np.flatnonzero(vol == 0.0)
        if degenerate.size:
            raise NastranParseError(
                f"degenerate (zero-volume) CTETRA ids "
                f"{[elem_ids[i] for i in degenerate[:5].tolist()]}")
        flip = vol < 0.0
        elements[flip] = elements[flip][:, [0, 2, 1, 3]]

    names: dict[int, str] = {}
    for pid in psolid_pids + sorted(set(region_ids.tolist())):
        if pid not in names:
            names[pid] = annotations.get(pid, str(pid))

    return Mesh(nodes, elements, region_ids, names,
                node_ids=node_ids,
                element_ids=np.asarray(elem_ids, dtype=np.int64))


def load_region_map(path: str | Path) -> dict[int, str]:
    """Read the JSON sidecar mapping region ids to tissue names."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise MeshError(f"region map {path} must be a JSON object")
    return {int(k): str(v) for k, v in raw.items()}


def write_nastran(mesh: Mesh, target: str | IO[str] | Path) -> None:
    """Write the mesh as free-field bulk data, one card per line.

    Coordinates use shortest round-trip decimal form, so parsing the file
    back reproduces them exactly. Region names that differ from the bare
    PID are recorded as ``$REGION`` comments.
    """
    out: list[str] = ["BEGIN BULK"]
    for pid in sorted(mesh.region_names):
        name = mesh.region_names[pid]
        if name != str(pid):
            out.append(f"$REGION {pid} {name}")
        out.append(f"PSOLID,{pid},{pid}")
    for nid, (x, y, z) in zip(mesh.node_ids.tolist(), mesh.nodes.tolist()):
        out.append(f"GRID,{nid},,{x!r},{y!r},{z!r}")
    node_ids = mesh.node_ids
    for eid, conn, pid in zip(mesh.element_ids.tolist(), mesh.elements.tolist(),
                              mesh.region_ids.tolist()):
        g = ",".join(str(int(node_ids[i])) for i in conn)
        out.append(f"CTETRA,{eid},{pid},{g}")
    out.append("ENDDATA")
    text = "\n".join(out) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_mesh(mesh: Mesh) -> ValidationReport:
    """List every invariant violation without mutating the mesh.

    Defects are data, not errors: downstream operations decide whether a
    given defect is fatal for them.
    """
    defects: list[Defect] = []
    n = mesh.node_count
    elements = mesh.elements
    eids = mesh.element_ids

    out_of_range = (elements < 0) | (elements >= n)
    bad_ref = out_of_range.any(axis=1)
    for i in np.flatnonzero(bad_ref):
        defects.append(Defect("dangling_node_ref", (int(eids[i]),)))

    srt = np.sort(elements, axis=1)
    dup = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
    for i in np.flatnonzero(dup & ~bad_ref):
        defects.append(Defect("duplicate_node_ref", (int(eids[i]),)))

    clean = ~(bad_ref | dup)
    if clean.any():
        p = mesh.nodes[elements[clean]]
        vol = np.linalg.det(p[:, 1:, :] - p[:, :1, :]) / 6.0
        clean_idx = np.flatnonzero(clean)
        for i in clean_idx[np.flatnonzero(vol <= 0.0)]:
            defects.append(Defect("negative_volume", (int(eids[i]),)))

    known = np.asarray(sorted(mesh.region_names), dtype=np.int64)
    for i in np.flatnonzero(~np.isin(mesh.region_ids, known)):
        defects.append(Defect("dangling_region", (int(eids[i]),)))

    used = np.zeros(n, dtype=bool)
    in_range = elements[~out_of_range]
    used[in_range.ravel()] = True
    for i in np.flatnonzero(~used):
        defects.append(Defect("orphan_node", (int(mesh.node_ids[i]),)))

    return ValidationReport(n, mesh.element_count, len(mesh.region_names),
                            tuple(defects))


# ---------------------------------------------------------------------------
# Boundary extraction and patch selection
# ---------------------------------------------------------------------------

def extract_boundary(mesh: Mesh) -> FaceSet:
    """All faces owned by exactly one tetrahedron, with outward normals."""
    report = validate_mesh(mesh)
    if not report.is_valid:
        raise MeshError(f"invalid mesh, run validate_mesh: {report.summary()}")

    tri = mesh.elements[:, TET_FACES]                     # (m, 4, 3)
    flat = tri.reshape(-1, 3)
    key = np.sort(flat, axis=1)
    order = np.lexsort((key[:, 2], key[:, 1], key[:, 0]))
    sk = key[order]
    same = np.zeros(len(sk), dtype=bool)
    if len(sk) > 1:
        eq = (sk[1:] == sk[:-1]).all(axis=1)
        same[1:] |= eq
        same[:-1] |= eq
    boundary_pos = np.sort(order[~same])

    elem_idx = boundary_pos // 4
    local = boundary_pos % 4
    nodes3 = flat[boundary_pos]

    p = mesh.nodes[nodes3]                                # (f, 3, 3) mm
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    if np.any(norm == 0.0):
        raise MeshError("boundary face with zero area")
    normals = cross / norm[:, None]
    areas = norm / 2.0

    # Orient against the owning tetrahedron's centroid.
    tet_centroid = mesh.nodes[mesh.elements[elem_idx]].mean(axis=1)
    face_centroid = p.mean(axis=1)
    inward = np.einsum("fd,fd->f", normals, face_centroid - tet_centroid) < 0.0
    normals[inward] *= -1.0
    nodes3 = nodes3.copy()
    nodes3[inward] = nodes3[inward][:, [0, 2, 1]]

    return FaceSet(elem_idx, local, nodes3, normals, areas)


def select_patch(mesh: Mesh, faces: FaceSet, *, box: Sequence[float] = None,
                 region: str = None) -> FaceSet:
    """Subset of boundary faces inside a closed box or adjacent to a region.

    ``box`` is (xmin, ymin, zmin, xmax, ymax, zmax) in mm; a face is
    selected when all three vertices lie inside the closed bounds. With
    ``region``, faces owned by an element of the named region are selected.
    An empty selection is an error: a zero-area electrode cannot carry
    current.
    """
    if (box is None) == (region is None):
        raise MeshError("select_patch needs exactly one of box= or region=")
    if box is not None:
        lo = np.asarray(box[:3], dtype=float)
        hi = np.asarray(box[3:6], dtype=float)
        if np.any(lo > hi):
            raise MeshError(f"degenerate selection box {tuple(box)}")
        p = mesh.nodes[faces.node_indices]                # (f, 3, 3)
        inside = ((p >= lo) & (p <= hi)).all(axis=(1, 2))
        what = f"box {tuple(float(v) for v in box)}"
    else:
        rids = mesh.region_id_for(region)
        if not rids:
            raise MeshError(f"unknown region name {region!r}")
        inside = np.isin(mesh.region_ids[faces.element_index], rids)
        what = f"region {region!r}"
    if not inside.any():
        raise MeshError(f"empty electrode patch selection for {what}")
    return faces.subset(inside)
