"""Tissue conductivity table and per-element conductivity assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import MaterialError
from .mesh import Mesh

# Electrical conductivity of tissues and body fluids, S/m.
_DEFAULT_ENTRIES = (
    ("Electrodes", 0.3),
    ("Inner tissue", 0.465),
    ("Skin", 0.465),
    ("Blood", 0.7),
    ("Vessel", 0.25),
    ("Organs", 0.465),
    ("Muscle", 0.2),
    ("Membranes", 0.5),
    ("CSF", 2.0),
    ("Ligaments", 0.25),
    ("Eye", 1.5),
    ("Cartilage", 0.15),
    ("Skeleton", 0.02),
    ("Brain and spinal cord", 0.04),
    ("Inner Nose", 0.25),
    ("Nerves", 0.006),
)


def _normalize(name: str) -> str:
    """Case-insensitive key with internal whitespace collapsed."""
    return " ".join(name.split()).casefold()


class MaterialTable:
    """Maps tissue names to isotropic conductivities (S/m).

    Lookups are case-insensitive and whitespace-normalized because the
    sidecar files naming regions are typically hand-written.
    """

    def __init__(self, entries: Mapping[str, float]):
        self._display: dict[str, str] = {}
        self._sigma: dict[str, float] = {}
        for name, sigma in entries.items():
            key = _normalize(name)
            if key in self._sigma:
                raise MaterialError(f"duplicate material name {name!r}")
            if not sigma > 0.0:
                raise MaterialError(
                    f"conductivity for {name!r} must be positive, got {sigma}")
            self._display[key] = name
            self._sigma[key] = float(sigma)

    def __len__(self) -> int:
        return len(self._sigma)

    def __contains__(self, name: str) -> bool:
        return _normalize(name) in self._sigma

    def __getitem__(self, name: str) -> float:
        try:
            return self._sigma[_normalize(name)]
        except KeyError:
            raise KeyError(name) from None

    def get(self, name: str, default=None):
        return self._sigma.get(_normalize(name), default)

    def items(self) -> Iterator[tuple[str, float]]:
        for key, sigma in self._sigma.items():
            yield self._display[key], sigma


def default_table() -> MaterialTable:
    """The 16-entry tissue conductivity table used throughout."""
    return MaterialTable(dict(_DEFAULT_ENTRIES))


@dataclass(frozen=True, eq=False)
class ConductivityField:
    """Per-element conductivity aligned with ``Mesh.elements``, S/m."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise MaterialError("conductivity field must be one-dimensional")
        if not np.all(values > 0.0):
            raise MaterialError("conductivity field has non-positive entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


def assign(mesh: Mesh, table: MaterialTable,
           overrides: Mapping[str, float] | None = None) -> ConductivityField:
    """Resolve each element's region name to a conductivity.

    ``overrides`` shadow table entries; every region name used by the mesh
    must resolve in the union of the two.
    """
    shadow: dict[str, float] = {}
    for name, sigma in (overrides or {}).items():
        if not sigma > 0.0:
            raise MaterialError(
                f"override for {name!r} must be positive, got {sigma}")
        shadow[_normalize(name)] = float(sigma)

    sigma_by_rid: dict[int, float] = {}
    for rid in np.unique(mesh.region_ids).tolist():
        name = mesh.region_names.get(rid, str(rid))
        key = _normalize(name)
        if key in shadow:
            sigma_by_rid[rid] = shadow[key]
        else:
            sigma = table.get(name)
            if sigma is None:
                raise MaterialError(
                    f"region {name!r} (id {rid}) has no conductivity in the "
                    "material table or overrides")
            sigma_by_rid[rid] = sigma

    unique, inverse = np.unique(mesh.region_ids, return_inverse=True)
    lookup = np.asarray([sigma_by_rid[int(rid)] for rid in unique])
    return ConductivityField(lookup[inverse])
