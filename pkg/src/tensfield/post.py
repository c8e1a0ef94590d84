"""Derived fields and reporting: E = -grad V, J = sigma E, region maxima.

P1 gradients are constant per element, so |J| is evaluated per element
and point-valued maxima are reported at the centroid of the maximizing
element. Smoothing or nodal recovery would invent data the discretization
does not have.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .errors import PostprocessError
from .fem import _element_gradients_m
from .materials import ConductivityField
from .mesh import FaceSet, Mesh

_M2_PER_MM2 = 1.0e-6

#: Default display cap for |J| renderings, A/m^2.
DEFAULT_J_CAP = 0.4

CSV_COLUMNS = ("region", "max_j", "argmax_x", "argmax_y", "argmax_z",
               "mean_j", "volume")


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Nodal potential plus element-constant derived fields."""

    potential: np.ndarray      # (n,) volts
    e_field: np.ndarray        # (m, 3) V/m
    j_field: np.ndarray        # (m, 3) A/m^2
    j_mag: np.ndarray          # (m,) A/m^2


@dataclass(frozen=True)
class RegionReport:
    """Per-region current density statistics, the row schema of reports."""

    region: str
    max_j: float                      # A/m^2
    argmax_mm: tuple[float, float, float]
    argmax_element_id: int
    mean_j: float                     # volume-weighted, A/m^2
    volume_mm3: float


def element_gradient(mesh: Mesh, potential: np.ndarray) -> np.ndarray:
    """E = -grad V per element, exact for the P1 interpolant, in V/m."""
    potential = np.asarray(potential, dtype=np.float64)
    if potential.shape != (mesh.node_count,):
        raise PostprocessError(
            f"potential length {potential.shape} does not match node count "
            f"{mesh.node_count}")
    g, _ = _element_gradients_m(mesh)
    grad_v = np.einsum("ei,eid->ed", potential[mesh.elements], g)
    return -grad_v


def current_density(conductivity: ConductivityField,
                    e_field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """J = sigma E per element and its Euclidean magnitude."""
    e_field = np.asarray(e_field, dtype=np.float64)
    if len(e_field) != len(conductivity):
        raise PostprocessError("conductivity and field lengths differ")
    j = conductivity.values[:, None] * e_field
    return j, np.linalg.norm(j, axis=1)


def compute_fields(mesh: Mesh, conductivity: ConductivityField,
                   potential: np.ndarray) -> FieldSolution:
    """Bundle potential with the derived E and J fields."""
    e = element_gradient(mesh, potential)
    j, j_mag = current_density(conductivity, e)
    return FieldSolution(np.asarray(potential, dtype=np.float64), e, j, j_mag)


def region_stats(mesh: Mesh, solution: FieldSolution,
                 region: str) -> RegionReport:
    """Max / volume-weighted mean |J| over one region.

    The argmax is the centroid (mm) of the maximizing element; exact ties
    resolve to the lowest element id so reports are deterministic.
    """
    rids = mesh.region_id_for(region)
    if not rids:
        raise PostprocessError(f"unknown region {region!r}")
    mask = np.isin(mesh.region_ids, rids)
    if not mask.any():
        raise PostprocessError(f"region {region!r} contains no elements")

    jm = solution.j_mag[mask]
    vols = mesh.signed_volumes()[mask]
    eids = mesh.element_ids[mask]
    centroids = mesh.centroids()[mask]

    max_j = float(jm.max())
    ties = np.flatnonzero(jm == max_j)
    winner = ties[np.argmin(eids[ties])]
    total_volume = float(vols.sum())
    mean_j = float((jm * vols).sum() / total_volume)
    cx, cy, cz = centroids[winner]
    return RegionReport(region=region, max_j=max_j,
                        argmax_mm=(float(cx), float(cy), float(cz)),
                        argmax_element_id=int(eids[winner]),
                        mean_j=mean_j, volume_mm3=total_volume)


def region_reports(mesh: Mesh, solution: FieldSolution,
                   regions: Sequence[str] | None = None) -> list[RegionReport]:
    """Reports for the named regions, or all mesh regions in id order."""
    if regions is None:
        regions = [mesh.region_names[rid] for rid in sorted(mesh.region_names)
                   if np.any(mesh.region_ids == rid)]
    return [region_stats(mesh, solution, r) for r in regions]


def electrode_flux(mesh: Mesh, solution: FieldSolution,
                   patch: FaceSet) -> float:
    """Net current through a boundary patch in amperes.

    Uses the owning element's constant J; positive means current leaving
    the domain.
    """
    j_owner = solution.j_field[patch.element_index]
    normal_j = np.einsum("fd,fd->f", j_owner, patch.normals)
    return float((normal_j * patch.areas * _M2_PER_MM2).sum())


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    """Fixed 9-significant-digit formatting for byte-stable output."""
    return f"{value:.9g}"


def export_vtk(mesh: Mesh, solution: FieldSolution, path: str | Path | IO[str],
               cap: float = DEFAULT_J_CAP) -> None:
    """Write a legacy ASCII VTK unstructured grid.

    Cell data carries ``j_mag`` (uncapped) and ``j_mag_capped``
    (min(|J|, cap)) so threshold renderings need no post-processing;
    point data carries the potential. Output is byte-identical across
    runs for identical inputs.
    """
    n, m = mesh.node_count, mesh.element_count
    out: list[str] = [
        "# vtk DataFile Version 3.0",
        "tensfield current density",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    out.extend(" ".join(_fmt(c) for c in row) for row in mesh.nodes.tolist())
    out.append(f"CELLS {m} {5 * m}")
    out.extend("4 " + " ".join(str(i) for i in conn)
               for conn in mesh.elements.tolist())
    out.append(f"CELL_TYPES {m}")
    out.extend(["10"] * m)
    out.append(f"CELL_DATA {m}")
    out.append("SCALARS j_mag double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(_fmt(v) for v in solution.j_mag.tolist())
    out.append("SCALARS j_mag_capped double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(_fmt(v) for v in np.minimum(solution.j_mag, cap).tolist())
    out.append(f"POINT_DATA {n}")
    out.append("SCALARS potential double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(_fmt(v) for v in solution.potential.tolist())
    text = "\n".join(out) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        Path(path).write_text(text)


def reports_to_csv(reports: Sequence[RegionReport],
                   path: str | Path | IO[str] | None = None) -> str:
    """Serialize region reports as CSV; returns the text, optionally writing it."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow([r.region, _fmt(r.max_j), _fmt(r.argmax_mm[0]),
                         _fmt(r.argmax_mm[1]), _fmt(r.argmax_mm[2]),
                         _fmt(r.mean_j), _fmt(r.volume_mm3)])
    text = buf.getvalue()
    if path is not None:
        if hasattr(path, "write"):
            path.write(text)
        else:
            Path(path).write_text(text)
    return text


def report_as_dict(report: RegionReport) -> dict:
    """JSON-ready form of a region report."""
    return {
        "region": report.region,
        "max_j": report.max_j,
        "argmax_mm": list(report.argmax_mm),
        "argmax_element_id": report.argmax_element_id,
        "mean_j": report.mean_j,
        "volume_mm3": report.volume_mm3,
    }


def report_from_dict(data: dict) -> RegionReport:
    return RegionReport(region=data["region"], max_j=data["max_j"],
                        argmax_mm=tuple(data["argmax_mm"]),
                        argmax_element_id=data["argmax_element_id"],
                        mean_j=data["mean_j"], volume_mm3=data["volume_mm3"])
