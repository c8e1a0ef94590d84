"""Scenario configuration, pipeline orchestration, and comparison reports.

A scenario binds a mesh source (NASTRAN file or generated phantom),
material overrides, electrode definitions, and solver settings into one
run of the simulation pipeline, producing per-region current density
reports, a conservation summary, and optional VTK/CSV/JSON/figure
exports. A config file holds a list of scenarios, typically the four
stimulation conditions (left/right active, left/right sham control).
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .errors import ConfigError, PostprocessError, ScenarioError
from .fem import NeumannLoad, apply_dirichlet, apply_neumann, assemble
from .materials import assign, default_table
from .mesh import (FaceSet, Mesh, extract_boundary, load_region_map,
                   parse_nastran, select_patch)
from .phantom import (HeadPhantomSpec, PhantomMesh, SlabSpec,
                      make_head_phantom, make_slab)
from .post import (DEFAULT_J_CAP, RegionReport, compute_fields,
                   electrode_flux, export_vtk, region_reports,
                   report_as_dict, reports_to_csv)
from .solver import SolveResult, SolveSettings, solve_pcg

_A_PER_MA = 1.0e-3

#: Accepted runs must balance anode and cathode flux to this fraction of I.
CONSERVATION_GATE = 0.01

_NUMBER = {"type": "number"}
_STRING = {"type": "string"}

_HEAD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "size": {"type": "array", "items": _NUMBER,
                 "minItems": 3, "maxItems": 3},
        "pitch": _NUMBER,
        "skin_thickness": _NUMBER,
        "skull_thickness": _NUMBER,
        "nerve_offset": _NUMBER,
        "nerve_size": _NUMBER,
        "nerve_span_y": {"type": "array", "items": _NUMBER,
                         "minItems": 2, "maxItems": 2},
        "nerve_center_z": _NUMBER,
        "electrode_size": _NUMBER,
        "electrode_thickness": _NUMBER,
        "bridge_shift": _NUMBER,
        "bridge_center_z": _NUMBER,
        "cheek_center_y": _NUMBER,
        "cheek_center_z": _NUMBER,
    },
}

_SLAB_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["length", "width", "height", "pitch", "layers"],
    "properties": {
        "length": _NUMBER,
        "width": _NUMBER,
        "height": _NUMBER,
        "pitch": _NUMBER,
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "thickness"],
                "properties": {"name": _STRING, "thickness": _NUMBER,
                               "sigma": _NUMBER},
            },
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenarios"],
    "properties": {
        "scenarios": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["label", "mesh", "electrodes"],
                "properties": {
                    "label": _STRING,
                    "mesh": {
                        "type": "object",
                        "additionalProperties": False,
                        "minProperties": 1,
                        "maxProperties": 1,
                        "properties": {
                            "nastran": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["path"],
                                "properties": {"path": _STRING,
                                               "region_map": _STRING},
                            },
                            "phantom": {
                                "type": "object",
                                "additionalProperties": False,
                                "minProperties": 1,
                                "maxProperties": 1,
                                "properties": {"head": _HEAD_SCHEMA,
                                               "slab": _SLAB_SCHEMA},
                            },
                        },
                    },
                    "materials": {"type": "object",
                                  "additionalProperties": _NUMBER},
                    "electrodes": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["name", "role"],
                            "properties": {
                                "name": _STRING,
                                "role": {"enum": ["anode", "cathode"]},
                                "box": {"type": "array", "items": _NUMBER,
                                        "minItems": 6, "maxItems": 6},
                                "patch": _STRING,
                                "current_mA": _NUMBER,
                            },
                        },
                    },
                    "solver": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "rel_tol": _NUMBER,
                            "max_iter": {"type": "integer"},
                            "preconditioner": {"enum": ["jacobi", "none"]},
                        },
                    },
                    "report_regions": {"type": "array", "items": _STRING},
                    "outputs": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {"vtk": _STRING, "csv": _STRING,
                                       "json": _STRING, "figure": _STRING,
                                       "cap": _NUMBER},
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class ElectrodeSpec:
    """One electrode: a named patch selection plus its electrical role."""

    name: str
    role: str                      # "anode" or "cathode"
    box: tuple | None = None       # (xmin, ymin, zmin, xmax, ymax, zmax) mm
    patch: str | None = None       # generator patch or region-adjacency name
    current_ma: float | None = None


@dataclass(frozen=True)
class OutputSpec:
    vtk: Path | None = None
    csv: Path | None = None
    json: Path | None = None
    figure: Path | None = None
    cap: float = DEFAULT_J_CAP


@dataclass(frozen=True)
class NastranSource:
    path: Path
    region_map: Path | None = None


@dataclass(frozen=True)
class PhantomSource:
    kind: str                      # "head" or "slab"
    spec: object                   # HeadPhantomSpec or SlabSpec


@dataclass(frozen=True)
class Scenario:
    label: str
    mesh_source: object            # NastranSource or PhantomSource
    electrodes: tuple[ElectrodeSpec, ...]
    materials: Mapping[str, float] = field(default_factory=dict)
    solver: SolveSettings = field(default_factory=SolveSettings)
    report_regions: tuple[str, ...] | None = None
    outputs: OutputSpec = field(default_factory=OutputSpec)

    @property
    def anodes(self) -> tuple[ElectrodeSpec, ...]:
        return tuple(e for e in self.electrodes if e.role == "anode")

    @property
    def cathode(self) -> ElectrodeSpec:
        return next(e for e in self.electrodes if e.role == "cathode")

    @property
    def injected_ma(self) -> float:
        return sum(e.current_ma for e in self.anodes)


@dataclass(frozen=True)
class ConservationSummary:
    """Electrode current balance from direct flux integration.

    Outward fluxes are positive when current leaves the domain, so a
    well-resolved run has ``anode_outward_a`` near -I and
    ``cathode_outward_a`` near +I.
    """

    injected_ma: float
    anode_outward_a: float
    cathode_outward_a: float
    imbalance_fraction: float
    leakage_fraction: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "injected_mA": self.injected_ma,
            "anode_outward_A": self.anode_outward_a,
            "cathode_outward_A": self.cathode_outward_a,
            "imbalance_fraction": self.imbalance_fraction,
            "leakage_fraction": self.leakage_fraction,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ScenarioResult:
    label: str
    reports: tuple[RegionReport, ...]
    conservation: ConservationSummary
    iterations: int
    residual: float
    multi_anode_approximation: bool
    written: tuple[Path, ...] = ()


# ---------------------------------------------------------------------------
# Configuration loading
# ---------------------------------------------------------------------------

def _pointer(absolute_path) -> str:
    return "/" + "/".join(str(p) for p in absolute_path)


def load_config(path: str | Path) -> list[Scenario]:
    """Parse and fully validate a scenario config file.

    Relative paths inside the config resolve against the config file's
    directory. Unknown keys, duplicate labels, missing cathodes, and
    negative currents are all rejected.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return scenarios_from_dict(data, base_dir=path.parent)


def scenarios_from_dict(data: dict, base_dir: Path) -> list[Scenario]:
    """Validate an already-parsed config object; see :func:`load_config`."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        raise ConfigError(first.message, pointer=_pointer(first.absolute_path))

    scenarios: list[Scenario] = []
    labels: set[str] = set()
    for i, raw in enumerate(data["scenarios"]):
        where = f"/scenarios/{i}"
        label = raw["label"]
        if label in labels:
            raise ConfigError(f"duplicate label {label!r}",
                              pointer=f"{where}/label")
        labels.add(label)

        mesh_raw = raw["mesh"]
        if "nastran" in mesh_raw:
            nas = mesh_raw["nastran"]
            region_map = nas.get("region_map")
            source = NastranSource(
                path=_resolve(nas["path"], base_dir),
                region_map=_resolve(region_map, base_dir) if region_map else None)
        else:
            ph = mesh_raw["phantom"]
            if "head" in ph:
                spec_kwargs = dict(ph["head"])
                for key in ("size", "nerve_span_y"):
                    if key in spec_kwargs:
                        spec_kwargs[key] = tuple(spec_kwargs[key])
                source = PhantomSource("head", HeadPhantomSpec(**spec_kwargs))
            else:
                slab = ph["slab"]
                layers = tuple((l["name"], l["thickness"], l.get("sigma"))
                               for l in slab["layers"])
                source = PhantomSource("slab", SlabSpec(
                    length=slab["length"], width=slab["width"],
                    height=slab["height"], pitch=slab["pitch"], layers=layers))

        electrodes: list[ElectrodeSpec] = []
        for j, e in enumerate(raw["electrodes"]):
            ptr = f"{where}/electrodes/{j}"
            if ("box" in e) == ("patch" in e):
                raise ConfigError("electrode needs exactly one of box or patch",
                                  pointer=ptr)
            current = e.get("current_mA")
            if e["role"] == "anode":
                if current is None:
                    raise ConfigError("anode needs current_mA", pointer=ptr)
                if current < 0:
                    raise ConfigError(f"anode current must be >= 0 mA, "
                                      f"got {current}", pointer=ptr)
            elif current is not None:
                raise ConfigError("cathode does not take current_mA",
                                  pointer=ptr)
            electrodes.append(ElectrodeSpec(
                name=e["name"], role=e["role"],
                box=tuple(e["box"]) if "box" in e else None,
                patch=e.get("patch"), current_ma=current))
        cathodes = [e for e in electrodes if e.role == "cathode"]
        if len(cathodes) != 1:
            raise ConfigError(
                f"scenario needs exactly one cathode, got {len(cathodes)}",
                pointer=f"{where}/electrodes")

        solver_raw = raw.get("solver", {})
        try:
            solver = SolveSettings(
                rel_tolerance=solver_raw.get("rel_tol", 1.0e-8),
                max_iterations=solver_raw.get("max_iter"),
                preconditioner=solver_raw.get("preconditioner", "jacobi"))
        except ValueError as exc:
            raise ConfigError(str(exc), pointer=f"{where}/solver") from exc

        out_raw = raw.get("outputs", {})
        csv_path = _resolve(out_raw.get("csv"), base_dir)
        figure = _resolve(out_raw.get("figure"), base_dir)
        if figure is None and csv_path is not None:
            figure = csv_path.with_suffix(".png")
        outputs = OutputSpec(
            vtk=_resolve(out_raw.get("vtk"), base_dir),
            csv=csv_path,
            json=_resolve(out_raw.get("json"), base_dir),
            figure=figure,
            cap=out_raw.get("cap", DEFAULT_J_CAP))

        regions = raw.get("report_regions")
        scenarios.append(Scenario(
            label=label, mesh_source=source, electrodes=tuple(electrodes),
            materials=dict(raw.get("materials", {})), solver=solver,
            report_regions=tuple(regions) if regions else None,
            outputs=outputs))
    return scenarios


def _resolve(value, base_dir: Path):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else (base_dir / p)


# ---------------------------------------------------------------------------
# Pipeline execution
# ---------------------------------------------------------------------------

@contextmanager
def _stage(name: str):
    try:
        yield
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError(name, exc) from exc


def _build_mesh(source) -> tuple[Mesh, dict[str, FaceSet], dict[str, float]]:
    if isinstance(source, NastranSource):
        mesh = parse_nastran(source.path.read_text())
        if source.region_map is not None:
            mesh = mesh.with_region_names(load_region_map(source.region_map))
        return mesh, {}, {}
    bundle: PhantomMesh
    bundle = (make_head_phantom(source.spec) if source.kind == "head"
              else make_slab(source.spec))
    return bundle.mesh, bundle.patches, bundle.conductivities


def _resolve_patch(mesh: Mesh, boundary: FaceSet,
                   named: Mapping[str, FaceSet],
                   electrode: ElectrodeSpec) -> FaceSet:
    if electrode.box is not None:
        return select_patch(mesh, boundary, box=electrode.box)
    if electrode.patch in named:
        return named[electrode.patch]
    return select_patch(mesh, boundary, region=electrode.patch)


def run_scenario(scenario: Scenario) -> ScenarioResult:
    """Execute the full pipeline for one scenario and write its outputs.

    Returns the region reports plus the conservation summary; the summary's
    ``passed`` flag reflects the 1 % anode/cathode balance gate. Stage
    failures raise :class:`ScenarioError` tagged with the stage name.
    """
    with _stage("mesh"):
        mesh, named_patches, phantom_sigma = _build_mesh(scenario.mesh_source)
    with _stage("materials"):
        overrides = dict(phantom_sigma)
        overrides.update(scenario.materials)
        conductivity = assign(mesh, default_table(), overrides)
    with _stage("boundary"):
        boundary = extract_boundary(mesh)
        anode_patches = [(e, _resolve_patch(mesh, boundary, named_patches, e))
                         for e in scenario.anodes]
        cathode_patch = _resolve_patch(mesh, boundary, named_patches,
                                       scenario.cathode)
    with _stage("assemble"):
        system = assemble(mesh, conductivity)
    with _stage("neumann"):
        for electrode, patch in anode_patches:
            system = apply_neumann(system, NeumannLoad(patch,
                                                       electrode.current_ma))
    with _stage("dirichlet"):
        system = apply_dirichlet(system, cathode_patch)
    with _stage("solve"):
        solved: SolveResult = solve_pcg(system, scenario.solver)
    with _stage("fields"):
        solution = compute_fields(mesh, conductivity, solved.potential)
    with _stage("report"):
        reports = tuple(region_reports(mesh, solution,
                                       scenario.report_regions))
    with _stage("conservation"):
        conservation = _conservation(mesh, solution, boundary,
                                     anode_patches, cathode_patch,
                                     scenario.injected_ma)
    with _stage("export"):
        result = ScenarioResult(
            label=scenario.label, reports=reports, conservation=conservation,
            iterations=solved.iterations, residual=solved.residual,
            multi_anode_approximation=len(anode_patches) > 1)
        written = _write_outputs(scenario, mesh, solution, result)
    return ScenarioResult(
        label=result.label, reports=result.reports,
        conservation=result.conservation, iterations=result.iterations,
        residual=result.residual,
        multi_anode_approximation=result.multi_anode_approximation,
        written=tuple(written))


def _conservation(mesh, solution, boundary, anode_patches, cathode_patch,
                  injected_ma) -> ConservationSummary:
    # Integrate over face unions so overlapping anode selections are not
    # double counted.
    anode_keys = set()
    for _, patch in anode_patches:
        anode_keys |= patch.face_keys()
    keys = list(zip(boundary.element_index.tolist(),
                    boundary.local_face.tolist()))
    in_anode = np.array([k in anode_keys for k in keys])
    anode_flux = electrode_flux(mesh, solution, boundary.subset(in_anode))
    cathode_flux = electrode_flux(mesh, solution, cathode_patch)
    electrode_keys = anode_keys | cathode_patch.face_keys()
    passive = np.array([k not in electrode_keys for k in keys])
    leakage = (electrode_flux(mesh, solution, boundary.subset(passive))
               if passive.any() else 0.0)
    injected_a = injected_ma * _A_PER_MA
    if injected_a > 0.0:
        imbalance = abs(anode_flux + cathode_flux) / injected_a
        leak_frac = abs(leakage) / injected_a
    else:
        imbalance = 0.0
        leak_frac = 0.0
    return ConservationSummary(
        injected_ma=injected_ma, anode_outward_a=anode_flux,
        cathode_outward_a=cathode_flux, imbalance_fraction=imbalance,
        leakage_fraction=leak_frac, passed=imbalance <= CONSERVATION_GATE)


def result_as_dict(result: ScenarioResult) -> dict:
    return {
        "label": result.label,
        "regions": [report_as_dict(r) for r in result.reports],
        "conservation": result.conservation.as_dict(),
        "solver": {"iterations": result.iterations,
                   "relative_residual": result.residual},
        "flags": {"multi_anode_approximation":
                  result.multi_anode_approximation},
    }


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_outputs(scenario: Scenario, mesh, solution,
                   result: ScenarioResult) -> list[Path]:
    out = scenario.outputs
    written: list[Path] = []
    if out.vtk is not None:
        import io
        buf = io.StringIO()
        export_vtk(mesh, solution, buf, cap=out.cap)
        _atomic_write(out.vtk, buf.getvalue())
        written.append(out.vtk)
    if out.csv is not None:
        _atomic_write(out.csv, reports_to_csv(result.reports))
        written.append(out.csv)
    if out.json is not None:
        _atomic_write(out.json,
                      json.dumps(result_as_dict(result), indent=2) + "\n")
        written.append(out.json)
    if out.figure is not None:
        from .figures import save_region_figure
        out.figure.parent.mkdir(parents=True, exist_ok=True)
        save_region_figure(result.reports, out.figure, title=scenario.label)
        written.append(out.figure)
    return written


def run_config(scenarios: Sequence[Scenario], only: str | None = None,
               threads: int = 1) -> list[ScenarioResult]:
    """Run scenarios, optionally restricted to one label, optionally in a
    thread pool. Results keep the config order."""
    if only is not None:
        selected = [s for s in scenarios if s.label == only]
        if not selected:
            raise ConfigError(f"no scenario labelled {only!r}")
    else:
        selected = list(scenarios)
    if threads <= 1 or len(selected) == 1:
        return [run_scenario(s) for s in selected]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_scenario, selected))


# ---------------------------------------------------------------------------
# Scenario comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonTable:
    """Max |J| per (scenario, region), plus left/right ratios per scenario."""

    labels: tuple[str, ...]
    regions: tuple[str, ...]
    max_j: np.ndarray                      # (labels, regions)
    ratio_names: tuple[str, ...]
    ratios: np.ndarray                     # (labels, ratio pairs)

    def to_csv(self, path: str | Path | None = None) -> str:
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        writer = _csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", *self.regions, *self.ratio_names])
        for i, label in enumerate(self.labels):
            row = [label]
            row += [f"{v:.9g}" for v in self.max_j[i]]
            row += [f"{v:.9g}" for v in self.ratios[i]]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            _atomic_write(Path(path), text)
        return text

    def format_text(self) -> str:
        headers = ["scenario", *self.regions, *self.ratio_names]
        rows = [[self.labels[i],
                 *[f"{v:.6g}" for v in self.max_j[i]],
                 *[f"{v:.4g}" for v in self.ratios[i]]]
                for i in range(len(self.labels))]
        widths = [max(len(h), *(len(r[c]) for r in rows))
                  for c, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def compare_report(reports: Mapping[str, Sequence[RegionReport]]
                   ) -> ComparisonTable:
    """Cross-scenario comparison of per-region maxima.

    Every region present in any report must be present in all of them.
    For each region name containing "left" whose "right" sibling is also
    reported, a left/right ratio column is added.
    """
    if len(reports) < 2:
        raise PostprocessError("comparison needs at least two scenarios")
    labels = tuple(reports.keys())
    regions: list[str] = []
    for label in labels:
        for r in reports[label]:
            if r.region not in regions:
                regions.append(r.region)
    by_label = {label: {r.region: r for r in reports[label]}
                for label in labels}
    for label in labels:
        for region in regions:
            if region not in by_label[label]:
                raise PostprocessError(
                    f"region {region!r} missing from scenario {label!r}")

    max_j = np.array([[by_label[label][region].max_j for region in regions]
                      for label in labels])

    pairs: list[tuple[str, int, int]] = []
    lowered = [r.casefold() for r in regions]
    for i, name in enumerate(lowered):
        if "left" in name:
            partner = name.replace("left", "right")
            if partner in lowered:
                j = lowered.index(partner)
                pairs.append((f"{regions[i]}/{regions[j]}", i, j))
    ratio_names = tuple(p[0] for p in pairs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.array([[max_j[k, i] / max_j[k, j] for _, i, j in pairs]
                           for k in range(len(labels))])
    if ratios.size == 0:
        ratios = np.zeros((len(labels), 0))
    return ComparisonTable(labels=labels, regions=tuple(regions),
                           max_j=max_j, ratio_names=ratio_names,
                           ratios=ratios)


def load_result_reports(path: str | Path) -> tuple[str, list[RegionReport]]:
    """Read back a scenario JSON report written by :func:`run_scenario`."""
    from .post import report_from_dict
    try:
        data = json.loads(Path(path).read_text())
        label = data["label"]
        reports = [report_from_dict(r) for r in data["regions"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"not a scenario report: {path}: {exc}") from exc
    return label, reports
