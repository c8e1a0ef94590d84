"""Shared fixtures and independent oracles for the test suite.

The oracle helpers deliberately use different algorithms from the library
code: dense assembly goes through the Vandermonde-matrix inverse instead
of edge-matrix gradients, and the VTK reader is a from-scratch parser of
the legacy ASCII format.
"""

import numpy as np
import pytest

from tensfield.mesh import Mesh
from tensfield.phantom import HeadPhantomSpec, SlabSpec, make_head_phantom, \
    make_slab

# ---------------------------------------------------------------------------
# Small meshes
# ---------------------------------------------------------------------------

UNIT_TET_MM = np.array([
    [0.0, 0.0, 0.0],
    [1000.0, 0.0, 0.0],
    [0.0, 1000.0, 0.0],
    [0.0, 0.0, 1000.0],
])  # one meter on edge once converted


@pytest.fixture
def unit_tet_mesh():
    """Single tetrahedron whose metric coordinates are the unit tet."""
    return Mesh(UNIT_TET_MM, [[0, 1, 2, 3]], [7], {7: "Skin"})


@pytest.fixture
def two_tet_mesh():
    """Two tetrahedra sharing the face (0, 1, 2)."""
    nodes = np.array([
        [0.0, 0.0, 0.0],
        [10.0, 0.0, 0.0],
        [0.0, 10.0, 0.0],
        [0.0, 0.0, 10.0],
        [4.0, 4.0, -8.0],
    ])
    elements = [[0, 1, 2, 3], [0, 2, 1, 4]]
    return Mesh(nodes, elements, [1, 1], {1: "Skin"})


@pytest.fixture
def small_slab():
    spec = SlabSpec(length=20.0, width=10.0, height=10.0, pitch=5.0,
                    layers=(("Skin", 20.0, 0.465),))
    return spec, make_slab(spec)


# Coarse symmetric head used for solver-oracle and laterality checks;
# small enough for dense linear algebra.
COARSE_HEAD_SPEC = HeadPhantomSpec(
    size=(80.0, 140.0, 100.0), pitch=10.0,
    skin_thickness=10.0, skull_thickness=10.0,
    nerve_offset=20.0, nerve_size=20.0, nerve_span_y=(30.0, 60.0),
    nerve_center_z=50.0, electrode_size=20.0, electrode_thickness=10.0,
    bridge_shift=20.0, bridge_center_z=50.0,
    cheek_center_y=40.0, cheek_center_z=30.0)


@pytest.fixture(scope="session")
def coarse_head():
    return make_head_phantom(COARSE_HEAD_SPEC)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def dense_assemble(mesh: Mesh, sigma_per_element) -> np.ndarray:
    """Brute-force dense stiffness assembly via shape-function coefficients.

    Solves [1 x y z] a = e_i per element for the P1 coefficients and reads
    the gradients from them, an independent route from the library's
    edge-matrix formulation. Coordinates are converted mm -> m to match.
    """
    n = mesh.node_count
    K = np.zeros((n, n))
    for conn, sigma in zip(mesh.elements, np.asarray(sigma_per_element)):
        p = mesh.nodes[conn] * 1.0e-3
        vandermonde = np.hstack([np.ones((4, 1)), p])
        coeff = np.linalg.inv(vandermonde)          # rows: 1, x, y, z
        grads = coeff[1:4, :].T                     # (4, 3)
        vol = abs(np.linalg.det(vandermonde)) / 6.0
        K[np.ix_(conn, conn)] += sigma * vol * (grads @ grads.T)
    return K


def dense_eliminate(K: np.ndarray, rhs: np.ndarray, constrained) -> tuple:
    """Symmetric Dirichlet elimination on dense arrays."""
    K = K.copy()
    rhs = rhs.copy()
    for k in constrained:
        K[k, :] = 0.0
        K[:, k] = 0.0
        K[k, k] = 1.0
        rhs[k] = 0.0
    return K, rhs


def read_vtk_ascii(text: str) -> dict:
    """Minimal legacy-VTK unstructured-grid reader used as a re-read oracle."""
    lines = text.splitlines()
    assert lines[0].startswith("# vtk DataFile Version"), "missing VTK header"
    assert lines[2].strip() == "ASCII"
    assert lines[3].strip() == "DATASET UNSTRUCTURED_GRID"
    out = {"points": [], "cells": [], "cell_types": [],
           "cell_data": {}, "point_data": {}}
    i = 4
    mode = None
    scalars_name = None
    target = None
    expected = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        token = line.split()
        key = token[0].upper()
        if key == "POINTS":
            count = int(token[1])
            for _ in range(count):
                out["points"].append([float(v) for v in lines[i].split()])
                i += 1
        elif key == "CELLS":
            count = int(token[1])
            for _ in range(count):
                vals = [int(v) for v in lines[i].split()]
                assert vals[0] == len(vals) - 1
                out["cells"].append(vals[1:])
                i += 1
        elif key == "CELL_TYPES":
            count = int(token[1])
            for _ in range(count):
                out["cell_types"].append(int(lines[i]))
                i += 1
        elif key == "CELL_DATA":
            mode = "cell_data"
            expected = int(token[1])
        elif key == "POINT_DATA":
            mode = "point_data"
            expected = int(token[1])
        elif key == "SCALARS":
            scalars_name = token[1]
            assert lines[i].strip().upper().startswith("LOOKUP_TABLE")
            i += 1
            values = []
            while len(values) < expected:
                values.extend(float(v) for v in lines[i].split())
                i += 1
            out[mode][scalars_name] = values
    return out


def fixed_field_nastran(mesh: Mesh) -> str:
    """Independent small-field (8-column) encoder for parser cross-checks.

    Coordinates must be representable in at most 8 characters.
    """
    def real8(value: float) -> str:
        text = f"{value:.6g}"
        if "." not in text and "e" not in text and "E" not in text:
            text += "."
        assert len(text) <= 8, f"{value} does not fit an 8-char field"
        assert abs(float(text) - value) < 1e-12 * max(1.0, abs(value))
        return f"{text:<8}"

    lines = ["BEGIN BULK"]
    for pid in sorted(mesh.region_names):
        name = mesh.region_names[pid]
        if name != str(pid):
            lines.append(f"$REGION {pid} {name}")
        lines.append(f"{'PSOLID':<8}{pid:<8d}{pid:<8d}")
    for nid, (x, y, z) in zip(mesh.node_ids.tolist(), mesh.nodes.tolist()):
        lines.append(f"{'GRID':<8}{nid:<8d}{'':8}"
                     f"{real8(x)}{real8(y)}{real8(z)}")
    ids = mesh.node_ids
    for eid, conn, pid in zip(mesh.element_ids.tolist(),
                              mesh.elements.tolist(),
                              mesh.region_ids.tolist()):
        g = "".join(f"{int(ids[c]):<8d}" for c in conn)
        lines.append(f"{'CTETRA':<8}{eid:<8d}{pid:<8d}{g}")
    lines.append("ENDDATA")
    return "\n".join(lines) + "\n"
