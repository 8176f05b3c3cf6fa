"""Deformable-body dynamics with frictional contact.

Linear tetrahedral FEM with a lagged-rotation corotational material, theta
time stepping, and a convex contact solve restricted to the degrees of
freedom that constraints actually touch.
"""
from .constraints import Bilateral, Box, FrictionCone, HalfSpace, Sphere, WeldTarget
from .dynamics import (DeformableBody, PrismaticBody, SchemeParams, StepDiagnostics, StepRejected,
                       Weld, World, step)
from .material import LameParams, RayleighParams, lame_from_young_poisson
from .mesh import TetMesh, box_mesh, wedge_mesh
from .scene import SceneConfig, SceneError, generate_scene, parse_scene
from .sim import RunSummary, run_simulation
from .solver import ContactParams, SolverParams, solve_reduced

__all__ = [
    "Bilateral", "Box", "ContactParams", "DeformableBody", "FrictionCone", "HalfSpace",
    "LameParams", "PrismaticBody", "RayleighParams", "RunSummary", "SceneConfig", "SceneError",
    "SchemeParams", "SolverParams", "Sphere", "StepDiagnostics", "StepRejected", "TetMesh",
    "Weld", "WeldTarget", "World", "box_mesh", "generate_scene", "lame_from_young_poisson",
    "parse_scene", "run_simulation", "solve_reduced", "step", "wedge_mesh",
]
