"""Deterministic phantom meshes and their closed-form validation solutions.

Two generators stand in for anatomy that cannot be shipped:

* layered slabs with a series-resistance solution, used to verify the
  discretization against exact fields, and
* a mirror-symmetric box "head" with a skin shell, an interior skeleton
  (braincase, cheekbone plates, electrode guard rings), two
  low-conductivity nerve rods, and named electrode patches (nasal bridge
  left/center/right, back of neck, both cheeks) realizing the four
  stimulation conditions at desk scale.

Hex cells are split into six tetrahedra around a fixed main diagonal
(Kuhn split); using the same diagonal in every cell keeps neighboring
cells conforming. The head phantom is built by generating one lateral
half and reflecting it, so the node multiset and the connectivity are
exactly mirror-symmetric about the midplane x = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import PhantomError
from .materials import default_table
from .mesh import FaceSet, Mesh, extract_boundary, select_patch

_M_PER_MM = 1.0e-3
_M2_PER_MM2 = 1.0e-6
_A_PER_MA = 1.0e-3

# Radial depth of the cheekbone plates, mm (measured inward from the skin).
_CHEEKBONE_DEPTH = 20.0

# Kuhn split of a hex cell into six tetrahedra sharing the main diagonal
# from corner (0,0,0) to corner (1,1,1). Corner code is 4*dx + 2*dy + dz.
# Tuples are ordered for positive signed volume.
_KUHN_TETS = (
    (0, 4, 6, 7),
    (0, 4, 7, 5),
    (0, 2, 7, 6),
    (0, 2, 3, 7),
    (0, 1, 5, 7),
    (0, 1, 7, 3),
)


def _cells(extent: float, pitch: float, what: str) -> int:
    n = int(round(extent / pitch))
    if n < 1 or abs(n * pitch - extent) > 1.0e-9 * max(1.0, abs(extent)):
        raise PhantomError(
            f"{what} ({extent} mm) must be a positive multiple of the "
            f"pitch ({pitch} mm)")
    return n


def _grid_nodes(nx: int, ny: int, nz: int, pitch: float) -> np.ndarray:
    """Nodes of an (nx, ny, nz)-cell grid with corner at the origin."""
    xs = np.arange(nx + 1) * pitch
    ys = np.arange(ny + 1) * pitch
    zs = np.arange(nz + 1) * pitch
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def _kuhn_elements(nx: int, ny: int, nz: int) -> tuple[np.ndarray, np.ndarray]:
    """Tetrahedra of the Kuhn-split grid and the owning cell of each."""
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    ci = ii.ravel()
    cj = jj.ravel()
    ck = kk.ravel()

    def corner(code: int) -> np.ndarray:
        dx, dy, dz = (code >> 2) & 1, (code >> 1) & 1, code & 1
        return ((ci + dx) * (ny + 1) + (cj + dy)) * (nz + 1) + (ck + dz)

    corners = {code: corner(code) for code in range(8)}
    tets = np.stack([
        np.column_stack([corners[a], corners[b], corners[c], corners[d]])
        for a, b, c, d in _KUHN_TETS
    ], axis=1)                                      # (ncell, 6, 4)
    cell_of_tet = np.repeat(np.arange(len(ci)), 6)
    return tets.reshape(-1, 4), cell_of_tet


@dataclass(frozen=True, eq=False)
class PhantomMesh:
    """A generated mesh plus its named electrode patches.

    ``conductivities`` carries entries for generated region names that are
    not in the standard tissue table (nerve rods, custom slab layers).
    """

    mesh: Mesh
    patches: dict[str, FaceSet]
    conductivities: dict[str, float]


# ---------------------------------------------------------------------------
# Slabs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlabSpec:
    """Layered rectangular slab; current flows along x.

    ``layers`` are (name, thickness mm, sigma S/m) from x = 0 onward and
    must tile the full length.
    """

    length: float                  # mm, current axis
    width: float                   # mm
    height: float                  # mm
    pitch: float                   # mm
    layers: tuple = (("Skin", None, None),)

    def __post_init__(self):
        if self.pitch <= 0.0:
            raise PhantomError("pitch must be positive")
        layers = []
        for entry in self.layers:
            name, thickness, sigma = entry
            if thickness is None:
                thickness = self.length
            if sigma is None:
                sigma = default_table().get(name)
                if sigma is None:
                    raise PhantomError(
                        f"layer {name!r} needs an explicit conductivity")
            if sigma <= 0.0:
                raise PhantomError(f"layer {name!r} conductivity must be > 0")
            layers.append((str(name), float(thickness), float(sigma)))
        object.__setattr__(self, "layers", tuple(layers))
        total = sum(t for _, t, _ in self.layers)
        if abs(total - self.length) > 1.0e-9 * max(1.0, self.length):
            raise PhantomError(
                f"layer thicknesses sum to {total} mm, expected {self.length}")

    @property
    def cross_section_mm2(self) -> float:
        return self.width * self.height


def make_slab(spec: SlabSpec) -> PhantomMesh:
    """Structured slab mesh with full-face "inlet" / "outlet" patches."""
    nx = _cells(spec.length, spec.pitch, "length")
    ny = _cells(spec.width, spec.pitch, "width")
    nz = _cells(spec.height, spec.pitch, "height")
    layer_cells = [_cells(t, spec.pitch, f"layer {name!r} thickness")
                   for name, t, _ in spec.layers]

    nodes = _grid_nodes(nx, ny, nz, spec.pitch)
    elements, cell_of_tet = _kuhn_elements(nx, ny, nz)

    cell_x = cell_of_tet // (ny * nz)
    bounds = np.cumsum(layer_cells)
    layer_of_cell_x = np.searchsorted(bounds, np.arange(nx), side="right")
    region_ids = layer_of_cell_x[cell_x] + 1
    region_names = {i + 1: name for i, (name, _, _) in enumerate(spec.layers)}

    mesh = Mesh(nodes, elements, region_ids, region_names)
    boundary = extract_boundary(mesh)
    patches = {
        "inlet": select_patch(mesh, boundary,
                              box=(0.0, 0.0, 0.0, 0.0, spec.width, spec.height)),
        "outlet": select_patch(mesh, boundary,
                               box=(spec.length, 0.0, 0.0,
                                    spec.length, spec.width, spec.height)),
    }

    conductivities: dict[str, float] = {}
    for name, _, sigma in spec.layers:
        if name in conductivities and conductivities[name] != sigma:
            raise PhantomError(
                f"layer name {name!r} reused with a different conductivity")
        conductivities[name] = sigma
    return PhantomMesh(mesh, patches, conductivities)


@dataclass(frozen=True)
class SlabSolution:
    """Series-resistance solution for a layered slab.

    The current density is uniform, J = I / A; within each layer the
    potential falls linearly with slope J / sigma. The outlet face is the
    0 V reference.
    """

    current_density: float            # A/m^2
    delta_v: float                    # volts across the slab
    layer_e_fields: tuple             # V/m per layer
    breakpoints_mm: tuple             # layer boundary x positions
    breakpoint_volts: tuple

    def potential_at(self, x_mm):
        """Potential at position(s) x in mm (piecewise linear)."""
        return np.interp(np.asarray(x_mm, dtype=float),
                         self.breakpoints_mm, self.breakpoint_volts)


def analytic_slab(spec: SlabSpec, current_ma: float) -> SlabSolution:
    """Closed-form fields for ``make_slab`` geometry under a given current."""
    area_m2 = spec.cross_section_mm2 * _M2_PER_MM2
    j = (current_ma * _A_PER_MA) / area_m2
    e_layers = tuple(j / sigma for _, _, sigma in spec.layers)
    xs = [0.0]
    for _, thickness, _ in spec.layers:
        xs.append(xs[-1] + thickness)
    delta_v = sum(j * (t * _M_PER_MM) / sigma for _, t, sigma in spec.layers)
    volts = [delta_v]
    for (_, t, sigma) in spec.layers:
        volts.append(volts[-1] - j * (t * _M_PER_MM) / sigma)
    volts[-1] = 0.0
    return SlabSolution(current_density=j, delta_v=delta_v,
                        layer_e_fields=e_layers,
                        breakpoints_mm=tuple(xs),
                        breakpoint_volts=tuple(volts))


# ---------------------------------------------------------------------------
# Head phantom
# ---------------------------------------------------------------------------

_OMIT, _SKIN, _SKULL, _INNER, _NERVE_LEFT, _NERVE_RIGHT, _ELECTRODE = range(7)

_HEAD_REGIONS = {
    _SKIN: "Skin",
    _SKULL: "Skeleton",
    _INNER: "Inner tissue",
    _NERVE_LEFT: "Nerve_left",
    _NERVE_RIGHT: "Nerve_right",
    _ELECTRODE: "Electrodes",
}


@dataclass(frozen=True)
class HeadPhantomSpec:
    """Mirror-symmetric box head with nerve rods and electrode patches.

    Axes: x lateral (+x is the subject's left, midplane at x = 0),
    y depth (y = 0 is the face carrying the nasal bridge patches, y = depth
    is the back of the neck), z vertical. All feature dimensions are mm and
    must sit on the cell grid.

    Each electrode is modeled the way the experiments mount them: a pad of
    electrode material standing proud of the skin over its footprint, with
    the named patch on the pad's outer face, plus a skeleton guard ring in
    the skin layer around the footprint. Pad and ring sheath the contact
    column laterally, so the current through the patch face stays locally
    one-dimensional and recovered electrode fluxes integrate cleanly.

    The skeleton is a hollow braincase shell starting one cell behind the
    nerve rods, plus a cheekbone plate below the bridge band at each
    front-lateral corner. Deep bridge-to-neck current funnels around the
    braincase along the rods; bridge-to-cheek current must dive under the
    cheekbone on its short anterior path, keeping it clear of the rods
    and of the outer walls.
    """

    size: tuple = (120.0, 160.0, 140.0)       # lateral, depth, height
    pitch: float = 5.0
    skin_thickness: float = 10.0
    skull_thickness: float = 10.0
    nerve_offset: float = 15.0                # rod center distance from midplane
    nerve_size: float = 10.0                  # square rod cross-section side
    nerve_span_y: tuple = (35.0, 60.0)        # rod extent along depth
    nerve_center_z: float = 95.0
    electrode_size: float = 20.0              # square electrode side
    electrode_thickness: float = 15.0         # pad height above the skin
    bridge_shift: float = 30.0                # lateral shift of side bridges
    bridge_center_z: float = 90.0
    cheek_center_y: float = 40.0
    cheek_center_z: float = 40.0


def _head_cell_layout(spec: HeadPhantomSpec):
    """Cell counts and integer feature bounds for the half grid."""
    x_extent, y_extent, z_extent = spec.size
    pitch = spec.pitch
    if abs(x_extent / 2.0 - round(x_extent / 2.0 / pitch) * pitch) > 1e-9:
        raise PhantomError("half of the lateral size must be a multiple "
                           "of the pitch (mirror plane on the grid)")
    nxh = _cells(x_extent / 2.0, pitch, "half lateral size")
    ny = _cells(y_extent, pitch, "depth")
    nz = _cells(z_extent, pitch, "height")
    n_skin = _cells(spec.skin_thickness, pitch, "skin thickness")
    n_skull = _cells(spec.skull_thickness, pitch, "skull thickness")
    shell = n_skin + n_skull

    def cell_index(value: float, what: str) -> int:
        n = int(round(value / pitch))
        if abs(n * pitch - value) > 1.0e-9 * max(1.0, abs(value)):
            raise PhantomError(f"{what} ({value} mm) must sit on the "
                               f"{pitch} mm grid")
        return n

    rod = {
        "x0": cell_index(spec.nerve_offset - spec.nerve_size / 2.0, "rod inner x"),
        "x1": cell_index(spec.nerve_offset + spec.nerve_size / 2.0, "rod outer x"),
        "y0": cell_index(spec.nerve_span_y[0], "rod start y"),
        "y1": cell_index(spec.nerve_span_y[1], "rod end y"),
        "z0": cell_index(spec.nerve_center_z - spec.nerve_size / 2.0, "rod bottom z"),
        "z1": cell_index(spec.nerve_center_z + spec.nerve_size / 2.0, "rod top z"),
    }
    if not (0 <= rod["x0"] < rod["x1"] and rod["y0"] < rod["y1"]
            and rod["z0"] < rod["z1"]):
        raise PhantomError("nerve rod has empty extent")
    if (rod["x1"] > nxh - n_skin or rod["y0"] < n_skin or rod["y1"] > ny - n_skin
            or rod["z0"] < n_skin or rod["z1"] > nz - n_skin):
        raise PhantomError("nerve rod overlaps the skin shell")

    # Electrode contact rectangles as half-grid cell bounds per wall; the
    # lateral ones may extend to negative x, which the reflection supplies.
    half_e = spec.electrode_size / 2.0
    bz0 = cell_index(spec.bridge_center_z - half_e, "bridge bottom z")
    bz1 = cell_index(spec.bridge_center_z + half_e, "bridge top z")

    def lateral(center: float) -> tuple[int, int]:
        return (cell_index(center - half_e, "electrode footprint inner x"),
                cell_index(center + half_e, "electrode footprint outer x"))

    footprints = []
    for center in (spec.bridge_shift, 0.0, -spec.bridge_shift):
        x0, x1 = lateral(center)
        footprints.append(("y0", (x0, x1, bz0, bz1)))
    nx0, nx1 = lateral(0.0)
    footprints.append(("y1", (nx0, nx1, bz0, bz1)))
    footprints.append(("xp", (
        cell_index(spec.cheek_center_y - half_e, "cheek footprint y0"),
        cell_index(spec.cheek_center_y + half_e, "cheek footprint y1"),
        cell_index(spec.cheek_center_z - half_e, "cheek footprint z0"),
        cell_index(spec.cheek_center_z + half_e, "cheek footprint z1"))))

    # Braincase extents (half-grid cells), derived from the box: flush with
    # the midplane, one cell behind the nerve rods, inset from the walls.
    case = {
        "x1": max(rod["x1"] + 1, nxh - shell - 2),
        "y0": rod["y1"] + 1,
        "y1": ny - n_skin - 2,
        "z0": max(n_skin + 2, nz // 4),
        "z1": nz - n_skin - 2,
    }
    if (case["x1"] < 2 * n_skull or case["y1"] - case["y0"] < 2 * n_skull + 1
            or case["z1"] - case["z0"] < 2 * n_skull + 1):
        raise PhantomError("braincase does not fit the box; enlarge the "
                           "phantom or thin the shells")

    # Cheekbone plate per front-lateral corner, below the bridge band and
    # in front of the cheek footprint; omitted when the box is too small.
    cb_cells = max(int(round(_CHEEKBONE_DEPTH / pitch)), 1)
    cheekbone = {
        "x0": max(nxh - n_skin - cb_cells, 0),
        "x1": nxh - n_skin,
        "y0": n_skin,
        "y1": cell_index(spec.cheek_center_y - half_e, "cheekbone back y"),
        "z0": n_skin,
        "z1": bz0,
    }
    if not (0 <= cheekbone["x0"] < cheekbone["x1"]
            and cheekbone["y0"] < cheekbone["y1"]
            and cheekbone["z0"] < cheekbone["z1"]):
        cheekbone = None

    n_pad = _cells(spec.electrode_thickness, pitch, "electrode thickness")
    return (nxh, ny, nz, n_skin, n_skull, n_pad, rod, footprints, case,
            cheekbone)


def make_head_phantom(spec: HeadPhantomSpec) -> PhantomMesh:
    """Build the symmetric head phantom with its named electrode patches.

    Regions: the skin shell, skeleton (braincase, cheekbones, guard
    rings), inner tissue fill, the two nerve rods, and a conductive
    electrode pad over each footprint. Rod conductivity defaults to the
    nervous tissue value from the standard table and is returned in
    ``conductivities`` because the rods are not standard table entries.
    """
    (nxh, ny, nz, n_skin, n_skull, pad, rod, footprints, case,
     cheekbone) = _head_cell_layout(spec)
    pitch = spec.pitch

    # The half grid covers the head box plus room for the protruding pads:
    # one pad depth beyond the face, the back, and the outer side wall.
    gx, gy, gz = nxh + pad, ny + 2 * pad, nz
    half_nodes = _grid_nodes(gx, gy, gz, pitch)
    half_nodes[:, 1] -= pad * pitch
    half_elements, cell_of_tet = _kuhn_elements(gx, gy, gz)

    ncell = gx * gy * gz
    ci = np.arange(ncell) // (gy * gz)
    cj = (np.arange(ncell) // gz) % gy - pad       # head-frame depth index
    ck = np.arange(ncell) % gz

    in_head = (ci < nxh) & (cj >= 0) & (cj < ny)
    cell_region = np.full(ncell, _OMIT, dtype=np.int64)

    # Skin shell by depth from the outer walls; x = 0 is the mirror plane.
    depth = np.minimum.reduce([nxh - 1 - ci, cj, ny - 1 - cj, ck, nz - 1 - ck])
    cell_region[in_head] = _INNER
    cell_region[in_head & (depth < n_skin)] = _SKIN

    # Braincase: a hollow skeleton box open at the midplane (the mirror
    # half closes it), sitting one cell behind the nerve rods.
    in_case = ((ci < case["x1"]) & (cj >= case["y0"]) & (cj < case["y1"])
               & (ck >= case["z0"]) & (ck < case["z1"]))
    in_cavity = ((ci < case["x1"] - n_skull)
                 & (cj >= case["y0"] + n_skull) & (cj < case["y1"] - n_skull)
                 & (ck >= case["z0"] + n_skull) & (ck < case["z1"] - n_skull))
    cell_region[in_head & in_case & ~in_cavity & (cell_region == _INNER)] = _SKULL

    if cheekbone is not None:
        in_cheekbone = ((ci >= cheekbone["x0"]) & (ci < cheekbone["x1"])
                        & (cj >= cheekbone["y0"]) & (cj < cheekbone["y1"])
                        & (ck >= cheekbone["z0"]) & (ck < cheekbone["z1"]))
        cell_region[in_cheekbone & (cell_region == _INNER)] = _SKULL

    # Per electrode footprint: a protruding pad of electrode material and
    # a skeleton guard ring around the footprint in the skin layer. The
    # sheathed contact column keeps the current through the patch face
    # locally one-dimensional, so recovered electrode fluxes integrate
    # cleanly.
    pad_band = {
        "y0": (cj >= -pad) & (cj < 0),
        "y1": (cj >= ny) & (cj < ny + pad),
        "xp": (ci >= nxh) & (ci < nxh + pad) & (cj >= 0) & (cj < ny),
    }
    skin_band = {
        "y0": (cj >= 0) & (cj < n_skin),
        "y1": (cj >= ny - n_skin) & (cj < ny),
        "xp": in_head & (ci >= nxh - n_skin),
    }
    wall_axes = {"y0": (ci, ck), "y1": (ci, ck), "xp": (cj, ck)}
    footprint_mask = {wall: np.zeros(ncell, dtype=bool) for wall in wall_axes}
    for wall, (a0, a1, b0, b1) in footprints:
        u, v = wall_axes[wall]
        in_rect = (u >= a0) & (u < a1) & (v >= b0) & (v < b1)
        footprint_mask[wall] |= in_rect
        cell_region[pad_band[wall] & in_rect] = _ELECTRODE
    ring = n_skull
    for wall, (a0, a1, b0, b1) in footprints:
        u, v = wall_axes[wall]
        in_ring = ((u >= a0 - ring) & (u < a1 + ring)
                   & (v >= b0 - ring) & (v < b1 + ring) & ~footprint_mask[wall])
        cell_region[skin_band[wall] & (cell_region == _SKIN) & in_ring] = _SKULL

    in_rod = ((ci >= rod["x0"]) & (ci < rod["x1"])
              & (cj >= rod["y0"]) & (cj < rod["y1"])
              & (ck >= rod["z0"]) & (ck < rod["z1"]))
    if np.any(in_rod & (cell_region != _INNER)):
        raise PhantomError("nerve rod overlaps the skin shell, guard rings, "
                           "or braincase")
    cell_region[in_rod] = _NERVE_LEFT

    # Drop grid cells outside the head and pads, then compress node ids.
    half_regions = cell_region[cell_of_tet]
    keep = half_regions != _OMIT
    half_elements = half_elements[keep]
    half_regions = half_regions[keep]
    used = np.unique(half_elements)
    renumber = np.full(len(half_nodes), -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    half_nodes = half_nodes[used]
    half_elements = renumber[half_elements]

    # Reflect the half onto x < 0. Mirror-plane nodes are shared; reflected
    # tetrahedra get two vertices swapped to restore positive orientation,
    # and the rod label flips side.
    n_half = len(half_nodes)
    on_plane = half_nodes[:, 0] == 0.0
    mirror_map = np.arange(n_half)
    off_plane = np.flatnonzero(~on_plane)
    mirror_map[off_plane] = n_half + np.arange(len(off_plane))

    mirrored_nodes = half_nodes[off_plane].copy()
    mirrored_nodes[:, 0] = -mirrored_nodes[:, 0]
    nodes = np.vstack([half_nodes, mirrored_nodes])

    mirrored_elements = mirror_map[half_elements][:, [0, 2, 1, 3]]
    mirrored_regions = half_regions.copy()
    mirrored_regions[half_regions == _NERVE_LEFT] = _NERVE_RIGHT

    mesh = Mesh(np.ascontiguousarray(nodes),
                np.vstack([half_elements, mirrored_elements]),
                np.concatenate([half_regions, mirrored_regions]),
                dict(_HEAD_REGIONS))

    boundary = extract_boundary(mesh)
    half_e = spec.electrode_size / 2.0
    x_half = spec.size[0] / 2.0
    depth_y = spec.size[1]
    proud = pad * pitch
    bz = spec.bridge_center_z
    cy, cz = spec.cheek_center_y, spec.cheek_center_z

    def patch(name: str, box) -> FaceSet:
        try:
            return select_patch(mesh, boundary, box=box)
        except Exception as exc:
            raise PhantomError(f"electrode patch {name!r}: {exc}") from exc

    # Patches sit on the outer faces of the electrode pads.
    patches = {
        "bridge_left": patch("bridge_left",
                             (spec.bridge_shift - half_e, -proud, bz - half_e,
                              spec.bridge_shift + half_e, -proud, bz + half_e)),
        "bridge_center": patch("bridge_center",
                               (-half_e, -proud, bz - half_e,
                                half_e, -proud, bz + half_e)),
        "bridge_right": patch("bridge_right",
                              (-spec.bridge_shift - half_e, -proud, bz - half_e,
                               -spec.bridge_shift + half_e, -proud, bz + half_e)),
        "neck": patch("neck", (-half_e, depth_y + proud, bz - half_e,
                               half_e, depth_y + proud, bz + half_e)),
        "cheek_left": patch("cheek_left",
                            (x_half + proud, cy - half_e, cz - half_e,
                             x_half + proud, cy + half_e, cz + half_e)),
        "cheek_right": patch("cheek_right",
                             (-x_half - proud, cy - half_e, cz - half_e,
                              -x_half - proud, cy + half_e, cz + half_e)),
    }

    sigma_nerve = default_table()["Nerves"]
    return PhantomMesh(mesh, patches, {
        "Nerve_left": sigma_nerve,
        "Nerve_right": sigma_nerve,
    })
