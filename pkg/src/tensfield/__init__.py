"""Finite-element volume-conductor simulation of surface electrode
stimulation: quasi-static current flow through labeled tetrahedral meshes
with per-region current-density reporting."""

from .errors import (AssemblyError, ConfigError, ConservationError,
                     ConvergenceError, MaterialError, MeshError,
                     NastranParseError, PhantomError, PostprocessError,
                     ScenarioError, TensfieldError)
from .fem import LinearSystem, NeumannLoad, apply_dirichlet, apply_neumann, \
    assemble, element_stiffness
from .materials import ConductivityField, MaterialTable, assign, default_table
from .mesh import (FaceSet, Mesh, ValidationReport, extract_boundary,
                   load_region_map, parse_nastran, select_patch,
                   validate_mesh, write_nastran)
from .phantom import (HeadPhantomSpec, PhantomMesh, SlabSpec, analytic_slab,
                      make_head_phantom, make_slab)
from .post import (FieldSolution, RegionReport, compute_fields,
                   current_density, electrode_flux, element_gradient,
                   export_vtk, region_reports, region_stats, reports_to_csv)
from .scenario import (ComparisonTable, ElectrodeSpec, Scenario,
                       ScenarioResult, compare_report, load_config,
                       run_config, run_scenario)
from .solver import SolveResult, SolveSettings, solve_pcg

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "ComparisonTable", "ConductivityField", "ConfigError",
    "ConservationError", "ConvergenceError", "ElectrodeSpec", "FaceSet",
    "FieldSolution", "HeadPhantomSpec", "LinearSystem", "MaterialError",
    "MaterialTable", "Mesh", "MeshError", "NastranParseError", "NeumannLoad",
    "PhantomError", "PhantomMesh", "PostprocessError", "RegionReport",
    "Scenario", "ScenarioError", "ScenarioResult", "SlabSpec", "SolveResult",
    "SolveSettings", "TensfieldError", "ValidationReport", "analytic_slab",
    "apply_dirichlet", "apply_neumann", "assemble", "assign",
    "compare_report", "compute_fields", "current_density", "default_table",
    "electrode_flux", "element_gradient", "element_stiffness",
    "export_vtk", "extract_boundary", "load_config", "load_region_map",
    "make_head_phantom", "make_slab", "parse_nastran", "region_reports",
    "region_stats", "reports_to_csv", "run_config", "run_scenario",
    "select_patch", "solve_pcg", "validate_mesh", "write_nastran",
]
