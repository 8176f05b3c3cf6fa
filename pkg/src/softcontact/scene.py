"""Scene description: JSON schema, dataclass configs, presets, and
construction of a :class:`World` from a config. Units are SI throughout."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .constraints import Box, HalfSpace, Sphere, WeldTarget
from .dynamics import DeformableBody, PrismaticBody, SchemeParams, Weld, World
from .material import RayleighParams, lame_from_young_poisson
from .mesh import MeshError, TetMesh, box_mesh, wedge_mesh
from .solver import ContactParams, SolverParams


class SceneError(ValueError):
    """Schema or semantic error; ``pointer`` is a JSON pointer into the scene."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_cells = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


MESH_SCHEMA = {"oneOf": [
    _obj({"type": {"const": "box"}, "size": _vec3, "cells": _cells}, ["type", "size"]),
    _obj({"type": {"const": "wedge"}, "r_inner": _pos, "r_outer": _pos, "angle0": {"type": "number"},
          "angle1": {"type": "number"}, "depth": _pos, "cells": _cells},
         ["type", "r_inner", "r_outer", "angle0", "angle1", "depth"]),
    _obj({"type": {"const": "inline"},
          "vertices": {"type": "array", "items": _vec3, "minItems": 4},
          "elements": {"type": "array", "minItems": 1, "items": {
              "type": "array", "items": {"type": "integer", "minimum": 0},
              "minItems": 4, "maxItems": 4}}},
         ["type", "vertices", "elements"]),
    _obj({"type": {"const": "vtk"}, "path": {"type": "string"}}, ["type", "path"]),
]}

MATERIAL_SCHEMA = _obj({
    "E": _pos, "nu": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
    "density": _pos, "alpha": _nonneg, "beta": _nonneg}, ["E", "nu", "density"])

COLLIDER_SCHEMA = {"oneOf": [
    _obj({"type": {"const": "halfspace"}, "point": _vec3, "normal": _vec3, "mu": _nonneg,
          "attached_to": {"type": "string"}}, ["type", "point", "normal"]),
    _obj({"type": {"const": "sphere"}, "center": _vec3, "radius": _pos, "mu": _nonneg,
          "attached_to": {"type": "string"}}, ["type", "center", "radius"]),
    _obj({"type": {"const": "box"}, "center": _vec3, "half_extents": _vec3, "mu": _nonneg,
          "attached_to": {"type": "string"}}, ["type", "center", "half_extents"]),
]}

SCENE_SCHEMA = _obj({
    "bodies": {"type": "array", "items": _obj({
        "name": {"type": "string"}, "mesh": MESH_SCHEMA, "material": MATERIAL_SCHEMA,
        "position": _vec3, "velocity": _vec3, "mu": _nonneg, "lumped_mass": {"type": "boolean"},
    }, ["mesh", "material"])},
    "colliders": {"type": "array", "items": COLLIDER_SCHEMA},
    "prismatic": {"type": "array", "items": _obj({
        "name": {"type": "string"}, "mass": _pos, "axis": _vec3, "q": {"type": "number"},
        "v": {"type": "number"}, "force": {"type": "number"}, "ramp_time": _nonneg,
    }, ["name", "mass", "axis"])},
    "welds": {"type": "array", "items": _obj({
        "body": {"type": "string"}, "vertex": {"type": "integer", "minimum": 0},
        "target": _vec3, "prismatic": {"type": "string"}}, ["body", "vertex", "target"])},
    "gravity": _vec3,
    "body_contact": {"type": "boolean"},
    "scheme": _obj({"theta": {"type": "number", "minimum": 0, "maximum": 1},
                    "theta_vq": {"type": "number", "minimum": 0, "maximum": 1}, "dt": _pos}),
    "solver": _obj({"eps_r": _pos, "max_iterations": {"type": "integer", "minimum": 1}}),
    "contact": _obj({"stiffness": _pos, "dissipation_time": _pos, "sigma": _pos,
                     "bilateral_factor": _pos, "margin": _nonneg, "v_hat_max": _pos}),
    "output": _obj({"csv": {"type": "string"}, "snapshot_every": {"type": "integer", "minimum": 0}}),
    "seed": {"type": "integer", "minimum": 0},
}, ["bodies"])


# -- config dataclasses -------------------------------------------------------------

@dataclass
class MaterialConfig:
    E: float
    nu: float
    density: float
    alpha: float = 0.0
    beta: float = 0.0


@dataclass
class BodyConfig:
    name: str
    mesh: dict
    material: MaterialConfig
    position: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    mu: float | None = None
    lumped_mass: bool = False


@dataclass
class ColliderConfig:
    type: str
    params: dict
    mu: float = 0.5
    attached_to: str | None = None


@dataclass
class PrismaticConfig:
    name: str
    mass: float
    axis: tuple
    q: float = 0.0
    v: float = 0.0
    force: float = 0.0
    ramp_time: float = 0.0


@dataclass
class WeldConfig:
    body: str
    vertex: int
    target: tuple
    prismatic: str | None = None


@dataclass
class OutputConfig:
    csv: str = "diagnostics.csv"
    snapshot_every: int = 0


@dataclass
class SceneConfig:
    bodies: list
    colliders: list = field(default_factory=list)
    prismatic: list = field(default_factory=list)
    welds: list = field(default_factory=list)
    gravity: tuple = (0.0, 0.0, -9.81)
    body_contact: bool = True
    scheme: SchemeParams = field(default_factory=SchemeParams)
    solver: SolverParams = field(default_factory=SolverParams)
    contact: ContactParams = field(default_factory=ContactParams)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    base_dir: str = "."  # relative mesh paths resolve against this

    def to_dict(self) -> dict:
        """JSON-compatible form that parses back to an equal config."""
        d = {
            "bodies": [{"name": b.name, "mesh": b.mesh, "material": asdict(b.material),
                        "position": list(b.position), "velocity": list(b.velocity),
                        "lumped_mass": b.lumped_mass, **({"mu": b.mu} if b.mu is not None else {})}
                       for b in self.bodies],
            "colliders": [{"type": c.type, **c.params, "mu": c.mu,
                           **({"attached_to": c.attached_to} if c.attached_to else {})}
                          for c in self.colliders],
            "prismatic": [{**asdict(p), "axis": list(p.axis)} for p in self.prismatic],
            "welds": [{"body": w.body, "vertex": w.vertex, "target": list(w.target),
                       **({"prismatic": w.prismatic} if w.prismatic else {})} for w in self.welds],
            "gravity": list(self.gravity),
            "body_contact": self.body_contact,
            "scheme": asdict(self.scheme),
            "solver": {"eps_r": self.solver.eps_r, "max_iterations": self.solver.max_iterations},
            "contact": {k: v for k, v in asdict(self.contact).items() if v is not None},
            "output": asdict(self.output),
            "seed": self.seed,
        }
        return d


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCENE_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        # oneOf failures are easier to read through the closest sub-error
        if err.context:
            where = _pointer(err.absolute_path)
            context = err.context
            kind = err.instance.get("type") if isinstance(err.instance, dict) else None
            branches = [b.get("properties", {}).get("type", {}).get("const")
                        for b in err.schema.get("oneOf", [])]
            if kind is not None and kind in branches:
                # report against the variant the author asked for
                k = branches.index(kind)
                context = [e for e in context if e.relative_schema_path[0] == k]
            elif kind is not None:
                raise SceneError(f"unknown type {kind!r}; expected one of {branches}", where + "/type")
            best = jsonschema.exceptions.best_match(context)
            raise SceneError(best.message, where + _pointer(best.relative_path))
        raise SceneError(err.message, _pointer(err.absolute_path))


def scene_from_dict(data: dict, base_dir: str | Path = ".") -> SceneConfig:
    """Validate and resolve defaults. Unknown keys are rejected."""
    if "preset" in data:
        extra = set(data) - {"preset", "knobs"}
        if extra:
            raise SceneError(f"unexpected keys next to preset: {sorted(extra)}", "")
        return generate_scene(data["preset"], **data.get("knobs", {}))
    validate(data)
    base_dir = Path(base_dir)
    bodies = []
    for i, b in enumerate(data["bodies"]):
        mesh = dict(b["mesh"])
        if mesh["type"] == "vtk":
            p = Path(mesh["path"])
            if not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                raise SceneError(f"mesh file {p} does not exist", f"/bodies/{i}/mesh/path")
            mesh["path"] = str(p)
        if mesh["type"] == "wedge" and not mesh["r_outer"] > mesh["r_inner"]:
            raise SceneError("r_outer must exceed r_inner", f"/bodies/{i}/mesh")
        bodies.append(BodyConfig(
            name=b.get("name", f"body{i}"), mesh=mesh, material=MaterialConfig(**b["material"]),
            position=tuple(b.get("position", (0.0, 0.0, 0.0))),
            velocity=tuple(b.get("velocity", (0.0, 0.0, 0.0))), mu=b.get("mu"),
            lumped_mass=b.get("lumped_mass", False)))
    names = [b.name for b in bodies]
    if len(set(names)) != len(names):
        raise SceneError("body names must be unique", "/bodies")
    prismatic = [PrismaticConfig(**{**p, "axis": tuple(p["axis"])})
                 for p in data.get("prismatic", [])]
    pnames = {p.name for p in prismatic}
    for i, p in enumerate(prismatic):
        if not np.linalg.norm(p.axis) > 0:
            raise SceneError("axis must be non-zero", f"/prismatic/{i}/axis")
    colliders = []
    for i, c in enumerate(data.get("colliders", [])):
        c = dict(c)
        kind, mu, att = c.pop("type"), c.pop("mu", 0.5), c.pop("attached_to", None)
        if att is not None and att not in pnames:
            raise SceneError(f"unknown prismatic body {att!r}", f"/colliders/{i}/attached_to")
        if kind == "halfspace" and not np.linalg.norm(c["normal"]) > 0:
            raise SceneError("normal must be non-zero", f"/colliders/{i}/normal")
        colliders.append(ColliderConfig(kind, c, mu, att))
    welds = []
    for i, w in enumerate(data.get("welds", [])):
        if w["body"] not in names:
            raise SceneError(f"unknown body {w['body']!r}", f"/welds/{i}/body")
        if w.get("prismatic") is not None and w["prismatic"] not in pnames:
            raise SceneError(f"unknown prismatic body {w['prismatic']!r}", f"/welds/{i}/prismatic")
        welds.append(WeldConfig(w["body"], w["vertex"], tuple(w["target"]), w.get("prismatic")))
    try:
        scheme = SchemeParams(**data.get("scheme", {}))
    except ValueError as exc:
        raise SceneError(str(exc), "/scheme") from exc
    return SceneConfig(
        bodies=bodies, colliders=colliders, prismatic=prismatic, welds=welds,
        gravity=tuple(data.get("gravity", (0.0, 0.0, -9.81))),
        body_contact=data.get("body_contact", True), scheme=scheme,
        solver=SolverParams(**data.get("solver", {})),
        contact=ContactParams(**data.get("contact", {})),
        output=OutputConfig(**data.get("output", {})), seed=data.get("seed", 0),
        base_dir=str(base_dir))


def parse_scene(path) -> SceneConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SceneError("scene must be a JSON object")
    return scene_from_dict(data, base_dir=path.parent)


# -- world construction -----------------------------------------------------------------

def build_mesh(source: dict, density: float, base_dir: str | Path = ".") -> TetMesh:
    kind = source["type"]
    if kind == "box":
        return box_mesh(source["size"], source.get("cells", (1, 1, 1)), density)
    if kind == "wedge":
        return wedge_mesh(source["r_inner"], source["r_outer"], source["angle0"], source["angle1"],
                          source["depth"], source.get("cells", (1, 1, 1)), density)
    if kind == "inline":
        return TetMesh(source["vertices"], source["elements"], density)
    if kind == "vtk":
        from .io import read_vtk
        p = Path(source["path"])
        data = read_vtk(p if p.is_absolute() else Path(base_dir) / p)
        return TetMesh(data["points"], data["elements"], density)
    raise MeshError(f"unknown mesh source {kind!r}")


def build_world(cfg: SceneConfig) -> World:
    """Deformable bodies first (in config order), then prismatic bodies."""
    bodies = []
    for i, b in enumerate(cfg.bodies):
        m = b.material
        try:
            mesh = build_mesh(b.mesh, m.density, cfg.base_dir)
            lame = lame_from_young_poisson(m.E, m.nu)
            if mesh.elements.size and mesh.elements.max() >= mesh.num_vertices:
                raise MeshError("element index out of range")
            mesh = mesh.translated(b.position)
            body = DeformableBody(mesh, lame, RayleighParams(m.alpha, m.beta),
                                  v=np.tile(np.asarray(b.velocity, dtype=float), mesh.num_vertices),
                                  mu=b.mu, lumped_mass=b.lumped_mass, name=b.name)
        except (MeshError, ValueError) as exc:
            raise SceneError(str(exc), f"/bodies/{i}") from exc
        bodies.append(body)
    index = {b.name: i for i, b in enumerate(bodies)}
    for p in cfg.prismatic:
        index[p.name] = len(bodies)
        bodies.append(PrismaticBody(p.mass, p.axis, p.q, p.v, p.force, p.ramp_time, name=p.name))
    colliders = []
    for c in cfg.colliders:
        att = index[c.attached_to] if c.attached_to else None
        cls = {"halfspace": HalfSpace, "sphere": Sphere, "box": Box}[c.type]
        colliders.append(cls(**c.params, mu=c.mu, attached_to=att))
    welds = []
    for i, w in enumerate(cfg.welds):
        bi = index[w.body]
        if w.vertex >= bodies[bi].mesh.num_vertices:
            raise SceneError(f"vertex {w.vertex} out of range", f"/welds/{i}/vertex")
        if w.prismatic:
            pi = index[w.prismatic]
            target = WeldTarget(np.asarray(w.target, dtype=float), pi, bodies[pi].axis)
        else:
            target = WeldTarget(np.asarray(w.target, dtype=float))
        welds.append(Weld(bi, w.vertex, target))
    return World(bodies, colliders, welds, cfg.gravity, cfg.contact, cfg.body_contact)


# -- presets ------------------------------------------------------------------------

ARCH_BLOCK = {"r_inner": 1.0, "r_outer": 1.25, "depth": 0.3}
STONE = {"E": 20e9, "nu": 0.3, "density": 2300.0}
RUBBER = {"E": 1e5, "nu": 0.3, "density": 1000.0}


def _arch(blocks=9, mu=1.0, cells=(3, 2, 1), dt=0.04, support_height=0.2, sigma=1e-4):
    """Semicircular arch of wedge blocks whose feet rest on two box supports."""
    blocks = int(blocks)
    if not 3 <= blocks <= 31 or blocks % 2 == 0:
        raise SceneError("arch needs an odd block count in [3, 31]", "/knobs/blocks")
    ri, ro, depth = ARCH_BLOCK["r_inner"], ARCH_BLOCK["r_outer"], ARCH_BLOCK["depth"]
    h = float(support_height)
    bodies = [{"name": f"block{k}", "material": dict(STONE), "mu": mu,
               "mesh": {"type": "wedge", "r_inner": ri, "r_outer": ro,
                        "angle0": np.pi * k / blocks, "angle1": np.pi * (k + 1) / blocks,
                        "depth": depth, "cells": list(cells)},
               "position": [0.0, 0.0, h]} for k in range(blocks)]
    pad = 0.02
    cx, hx = 0.5 * (ri + ro), 0.5 * (ro - ri) + pad
    supports = [{"type": "box", "center": [s * cx, 0.0, h / 2], "mu": mu,
                 "half_extents": [hx, depth / 2 + pad, h / 2]} for s in (-1.0, 1.0)]
    return {"bodies": bodies,
            "colliders": [{"type": "halfspace", "point": [0, 0, 0], "normal": [0, 0, 1], "mu": mu},
                          *supports],
            "scheme": {"dt": dt}, "contact": {"sigma": sigma}}


def _compression(force=5.0, cells=2, size=0.1, ramp_time=0.5, dt=0.01, alpha=20.0,
                 plate_width=2.0):
    """Cube on a frictionless floor under a frictionless plate pushed down
    along -z with a ramped force. ``plate_width`` is the plate side relative
    to the cube; below 1 the plate acts as a punch."""
    n = int(cells)
    half = size / 2
    plate_half = 0.1 * size
    plate_side = 0.5 * plate_width * size
    return {"bodies": [{"name": "cube", "material": {**RUBBER, "alpha": alpha},
                        "mesh": {"type": "box", "size": [size] * 3, "cells": [n] * 3},
                        "position": [0, 0, half], "mu": 0.0}],
            "prismatic": [{"name": "plate", "mass": 0.05, "axis": [0, 0, -1], "force": force,
                           "ramp_time": ramp_time}],
            "colliders": [{"type": "halfspace", "point": [0, 0, 0], "normal": [0, 0, 1], "mu": 0.0},
                          {"type": "box", "center": [0, 0, size + plate_half], "mu": 0.0,
                           "half_extents": [plate_side, plate_side, plate_half], "attached_to": "plate"}],
            "gravity": [0, 0, 0], "scheme": {"dt": dt}}


def _drop(size=0.1, cells=2, height=0.05, mu=0.5, dt=0.01):
    n = int(cells)
    return {"bodies": [{"name": "cube", "material": {**RUBBER, "beta": 0.01},
                        "mesh": {"type": "box", "size": [size] * 3, "cells": [n] * 3},
                        "position": [0, 0, size / 2 + height], "mu": mu}],
            "colliders": [{"type": "halfspace", "point": [0, 0, 0], "normal": [0, 0, 1], "mu": mu}],
            "scheme": {"dt": dt}}


def _weld_swing(length=0.3, width=0.05, cells=6, dt=0.01):
    """Bar hinged at one end through welds along an edge, swinging under gravity."""
    n = int(cells)
    size = [length, width, width]
    mesh = box_mesh(size, (n, 1, 1), 1.0)
    x = mesh.vertices
    hinge = np.flatnonzero(np.isclose(x[:, 0], -length / 2) & np.isclose(x[:, 2], width / 2))
    return {"bodies": [{"name": "bar", "material": {**RUBBER, "E": 1e6, "beta": 0.005},
                        "mesh": {"type": "box", "size": size, "cells": [n, 1, 1]}}],
            "welds": [{"body": "bar", "vertex": int(v), "target": x[v].tolist()} for v in hinge],
            "scheme": {"dt": dt}}


PRESETS = {"arch": _arch, "compression": _compression, "drop": _drop, "weld-swing": _weld_swing}


def generate_scene(preset: str, **knobs) -> SceneConfig:
    if preset not in PRESETS:
        raise SceneError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", "/preset")
    try:
        data = PRESETS[preset](**knobs)
    except TypeError as exc:
        raise SceneError(str(exc), "/knobs") from exc
    return scene_from_dict(data)


def parse_knobs(text: str) -> dict:
    """``"mu=0.2,blocks=9"`` -> {"mu": 0.2, "blocks": 9}."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise SceneError(f"knob {item!r} is not of the form name=value", "/knobs")
        k, v = (s.strip() for s in item.split("=", 1))
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def resolve_scene(source: str) -> SceneConfig:
    """A scene file path, or ``preset[:knobs]``."""
    name, _, knobs = source.partition(":")
    if name in PRESETS and not Path(source).exists():
        return generate_scene(name, **parse_knobs(knobs))
    return parse_scene(source)
