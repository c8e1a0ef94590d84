"""P1 tetrahedral discretization of steady current conduction.

Assembles the stiffness matrix for div(sigma grad V) = 0 with the three
boundary conditions used for surface electrode stimulation: a uniform
normal current density on the anode patch, zero potential on the grounded
cathode patch, and natural (insulating) conditions everywhere else.

Mesh coordinates enter in millimeters and are converted to meters here,
so potentials come out in volts and current densities in A/m^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .errors import AssemblyError
from .materials import ConductivityField
from .mesh import FaceSet, Mesh

_M_PER_MM = 1.0e-3
_M2_PER_MM2 = 1.0e-6
_A_PER_MA = 1.0e-3


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Symmetric sparse system K V = b.

    The matrix is stored as its upper triangle including the diagonal;
    :meth:`full_matrix` expands it when an explicit operator is needed.
    ``rhs`` is in amperes. ``constrained`` lists node indices pinned to
    0 V by Dirichlet elimination.
    """

    upper: sparse.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray

    def __post_init__(self):
        rhs = np.ascontiguousarray(self.rhs, dtype=np.float64)
        constrained = np.ascontiguousarray(self.constrained, dtype=np.int64)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "constrained", constrained)

    @property
    def size(self) -> int:
        return self.upper.shape[0]

    def full_matrix(self) -> sparse.csr_matrix:
        """Expand the stored upper triangle to the full symmetric matrix."""
        strict = sparse.triu(self.upper, k=1)
        return (self.upper + strict.T).tocsr()


def element_stiffness(coords: np.ndarray, sigma: float) -> np.ndarray:
    """4x4 stiffness of one tetrahedron: sigma * vol * (grad phi_i . grad phi_j).

    ``coords`` are the four vertices in meters. Rows sum to zero because
    the P1 basis is a partition of unity.
    """
    coords = np.asarray(coords, dtype=np.float64)
    d = coords[1:] - coords[0]
    vol = np.linalg.det(d) / 6.0
    if vol <= 0.0:
        raise AssemblyError(f"non-positive element volume {vol}")
    inv = np.linalg.inv(d)
    g = np.empty((4, 3))
    g[1:] = inv.T
    g[0] = -g[1:].sum(axis=0)
    return (sigma * vol) * (g @ g.T)


def _element_gradients_m(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-element P1 basis gradients (m^-1) and volumes (m^3)."""
    coords = mesh.nodes[mesh.elements] * _M_PER_MM       # (m, 4, 3)
    d = coords[:, 1:, :] - coords[:, :1, :]
    vol = np.linalg.det(d) / 6.0
    if np.any(vol <= 0.0):
        bad = mesh.element_ids[np.flatnonzero(vol <= 0.0)[:5]].tolist()
        raise AssemblyError(f"non-positive element volumes, element ids {bad}")
    inv = np.linalg.inv(d)
    g = np.empty((len(vol), 4, 3))
    g[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
    return g, vol


def assemble(mesh: Mesh, conductivity: ConductivityField) -> LinearSystem:
    """Scatter-add element stiffness matrices into the global system.

    The returned right-hand side is zero; boundary conditions are applied
    by :func:`apply_neumann` and :func:`apply_dirichlet`.
    """
    if len(conductivity) != mesh.element_count:
        raise AssemblyError(
            f"conductivity field length {len(conductivity)} does not match "
            f"element count {mesh.element_count}")
    g, vol = _element_gradients_m(mesh)
    ke = np.einsum("eid,ejd->eij", g, g)
    ke *= (conductivity.values * vol)[:, None, None]

    n = mesh.node_count
    conn = mesh.elements
    rows = np.broadcast_to(conn[:, :, None], ke.shape)
    cols = np.broadcast_to(conn[:, None, :], ke.shape)
    full = sparse.coo_matrix(
        (ke.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    upper = sparse.triu(full, k=0).tocsr()
    return LinearSystem(upper, np.zeros(n), np.empty(0, dtype=np.int64))


@dataclass(frozen=True)
class NeumannLoad:
    """Uniform inward current over an electrode patch.

    ``total_current_ma`` spreads over the patch as a constant normal
    current density, the discrete version of fixing the injected current
    while accounting for electrode size.
    """

    patch: FaceSet
    total_current_ma: float

    def __post_init__(self):
        if len(self.patch) == 0:
            raise AssemblyError("electrode patch is empty")
        if self.patch.total_area <= 0.0:
            raise AssemblyError("electrode patch has zero area")

    @property
    def current_density(self) -> float:
        """Normal current density jn in A/m^2."""
        return (self.total_current_ma * _A_PER_MA) / (
            self.patch.total_area * _M2_PER_MM2)


def apply_neumann(system: LinearSystem, load: NeumannLoad) -> LinearSystem:
    """Add the consistent P1 surface load for a constant flux patch.

    Each face adds jn * area / 3 to each of its three nodes, so the rhs
    increments sum to the injected current exactly.
    """
    jn = load.current_density
    per_node = jn * (load.patch.areas * _M2_PER_MM2) / 3.0   # (f,) amperes
    rhs = system.rhs.copy()
    np.add.at(rhs, load.patch.node_indices.ravel(),
              np.repeat(per_node, 3))
    return replace(system, rhs=rhs)


def apply_dirichlet(system: LinearSystem, ground: FaceSet) -> LinearSystem:
    """Pin all nodes of the ground patch to 0 V by symmetric elimination.

    Off-diagonal entries in constrained rows and columns are removed and
    the diagonal set to 1, keeping the matrix symmetric positive definite
    on the free subspace.
    """
    if len(ground) == 0:
        raise AssemblyError("ground patch is empty; the system would be "
                            "singular (pure Neumann)")
    new = np.unique(ground.node_indices.ravel())
    constrained = np.union1d(system.constrained, new)

    n = system.size
    pinned = np.zeros(n, dtype=bool)
    pinned[constrained] = True

    coo = system.upper.tocoo()
    keep = ~(pinned[coo.row] | pinned[coo.col])
    rows = np.concatenate([coo.row[keep], constrained])
    cols = np.concatenate([coo.col[keep], constrained])
    data = np.concatenate([coo.data[keep], np.ones(len(constrained))])
    upper = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    rhs = system.rhs.copy()
    rhs[constrained] = 0.0
    return LinearSystem(upper, rhs, constrained)
