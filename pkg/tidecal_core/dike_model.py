"""
dike_model.py — cross-section model: soil zones, boundary tags, sensors and the
JSON model file (schema in docs/model_schema.md).

Zones store dμ (saturated diffusivity × viscosity, Pa·m²) so zone data is
independent of water temperature; runtime diffusivity is d = dμ / μ(T).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from matplotlib.path import Path as MplPath
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.errors import InvalidParameter, ModelConfigError
from tidecal_core.units import FluidProperties

BOUNDARY_TAGS = ("sea", "land", "wall")


# ============================================================
# GEOMETRY HELPERS
# ============================================================
def polygon_area(poly):
    """Signed shoelace area (positive for counter-clockwise)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(a, b, c, d):
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def is_simple_polygon(poly):
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue    # adjacent through the closing edge
            c, d = poly[j], poly[(j + 1) % n]
            if _segments_cross(a, b, c, d):
                return False
    return True


def point_segment_distance(points, a, b):
    """Distance from each of points (N, 2) to segment a-b."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return np.hypot(*(pts - a).T)
    s = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.hypot(*(pts - proj).T)


def points_in_polygon(points, poly, tol=1e-9):
    """Inside-or-on-boundary test; points within `tol` of an edge count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = MplPath(np.asarray(poly, dtype=float)).contains_points(pts)
    n = len(poly)
    for i in range(n):
        inside |= point_segment_distance(pts, poly[i], poly[(i + 1) % n]) <= tol
    return inside


def clip_polygon_x(poly, tags, x_cut, cut_tag="land"):
    """Keep the part of `poly` with x <= x_cut; the new vertical edge gets `cut_tag`.

    Edge tags follow their parent edges. Works for sections whose cut line
    crosses the outline exactly twice.
    """
    out, out_tags = [], []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        a_in, b_in = a[0] <= x_cut, b[0] <= x_cut
        if a_in:
            out.append(tuple(a))
            out_tags.append(tags[i])
        if a_in != b_in:
            s = (x_cut - a[0]) / (b[0] - a[0])
            cross = (float(x_cut), a[1] + s * (b[1] - a[1]))
            if a_in:
                # leaving: the edge to the crossing keeps the parent tag, the
                # following edge runs along the cut line
                out.append(cross)
                out_tags.append(cut_tag)
            else:
                out.append(cross)
                out_tags.append(tags[i])
    # drop zero-length edges produced by vertices sitting on the cut line
    cleaned, cleaned_tags = [], []
    for k, (p, t) in enumerate(zip(out, out_tags)):
        q = out[(k + 1) % len(out)]
        if math.isclose(p[0], q[0], abs_tol=1e-12) and math.isclose(p[1], q[1], abs_tol=1e-12):
            continue
        cleaned.append(p)
        cleaned_tags.append(t)
    return cleaned, cleaned_tags


# ============================================================
# DOMAIN TYPES
# ============================================================
@dataclass(frozen=True)
class VanGenuchtenParams:
    a: float = TIDAL_SHEET["sand"]["a"]
    n: float = TIDAL_SHEET["sand"]["n"]
    l: float = TIDAL_SHEET["sand"]["l"]
    theta_s: float = TIDAL_SHEET["sand"]["theta_s"]
    theta_r: float = TIDAL_SHEET["sand"]["theta_r"]

    def __post_init__(self):
        if not self.n > 1:
            raise InvalidParameter(f"van Genuchten n must be > 1 (got {self.n})")
        if not self.a > 0:
            raise InvalidParameter(f"van Genuchten a must be > 0 (got {self.a})")
        if not (0 <= self.theta_r < self.theta_s <= 1):
            raise InvalidParameter(
                f"need 0 <= theta_r < theta_s <= 1 (got {self.theta_r}, {self.theta_s})")

    @property
    def m(self):
        return 1.0 - 1.0 / self.n


@dataclass(frozen=True)
class SoilZone:
    region: tuple
    d_mu: float
    vg: VanGenuchtenParams = field(default_factory=VanGenuchtenParams)
    specific_storage: float = TIDAL_SHEET["sand"]["specific_storage"]
    anisotropy: float = 1.0     # K_y / K_x
    name: str = ""

    def __post_init__(self):
        region = tuple((float(x), float(y)) for x, y in self.region)
        object.__setattr__(self, "region", region)
        if not self.d_mu > 0:
            raise InvalidParameter(f"zone '{self.name}': d_mu must be > 0 (got {self.d_mu})")
        if not (self.specific_storage > 0 and self.anisotropy > 0):
            raise InvalidParameter(f"zone '{self.name}': storage and anisotropy must be > 0")
        if len(region) < 3 or abs(polygon_area(region)) <= 0:
            raise InvalidParameter(f"zone '{self.name}': degenerate region")
        if not is_simple_polygon(region):
            raise InvalidParameter(f"zone '{self.name}': region self-intersects")

    def diffusivity(self, mu):
        """Runtime diffusivity d = dμ/μ [m²/s]."""
        return self.d_mu / mu


@dataclass(frozen=True)
class Sensor:
    id: str
    x: float
    y: float
    slice: Optional[str] = None


@dataclass(frozen=True)
class StrengthParams:
    E: float = TIDAL_SHEET["strength"]["E"]
    nu: float = TIDAL_SHEET["strength"]["nu"]
    c: float = TIDAL_SHEET["strength"]["c"]
    phi_deg: float = TIDAL_SHEET["strength"]["phi_deg"]
    rho_s: float = TIDAL_SHEET["strength"]["rho_s"]

    @property
    def phi(self):
        return math.radians(self.phi_deg)


@dataclass(frozen=True)
class DikeModel:
    """Cross-section polygon with zones, per-edge boundary tags and sensors.

    Edge i joins polygon vertex i and vertex i+1 (closing edge last).
    """

    polygon: tuple
    zones: tuple
    boundaries: tuple
    sensors: tuple = ()
    fluid: FluidProperties = field(default_factory=FluidProperties)
    dx: float = TIDAL_SHEET["solver"]["dx"]
    dy: float = TIDAL_SHEET["solver"]["dy"]
    strength: StrengthParams = field(default_factory=StrengthParams)
    inlet_x: float = TIDAL_SHEET["cross_section"]["inlet_x"]
    slice_split_y: float = TIDAL_SHEET["cross_section"]["slice_split_y"]

    def __post_init__(self):
        poly = tuple((float(x), float(y)) for x, y in self.polygon)
        object.__setattr__(self, "polygon", poly)
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "boundaries", tuple(self.boundaries))

        if len(poly) < 3 or abs(polygon_area(poly)) <= 0 or not is_simple_polygon(poly):
            raise ModelConfigError("cross-section polygon is degenerate or self-intersecting")
        if len(self.boundaries) != len(poly):
            raise ModelConfigError(
                f"{len(poly)} polygon edges but {len(self.boundaries)} boundary assignments")
        bad = [t for t in self.boundaries if t not in BOUNDARY_TAGS]
        if bad:
            raise ModelConfigError(f"unknown boundary tag(s) {bad}")
        if not self.zones:
            raise ModelConfigError("model has no soil zones")
        if not (self.dx > 0 and self.dy > 0):
            raise ModelConfigError("grid spacing must be positive")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ModelConfigError(f"duplicate sensor ids in {ids}")
        if self.sensors:
            pts = [(s.x, s.y) for s in self.sensors]
            inside = points_in_polygon(pts, poly, tol=1e-6)
            outside = [s.id for s, ok in zip(self.sensors, inside) if not ok]
            if outside:
                raise ModelConfigError(f"sensor(s) outside the cross-section: {outside}")

    # --- accessors ---------------------------------------------------------
    def edges(self):
        n = len(self.polygon)
        return [(self.polygon[i], self.polygon[(i + 1) % n], self.boundaries[i]) for i in range(n)]

    def sensor(self, sensor_id):
        for s in self.sensors:
            if s.id == sensor_id:
                return s
        raise KeyError(sensor_id)

    @property
    def viscosity(self):
        return self.fluid.viscosity

    def diffusivities(self):
        return [z.diffusivity(self.viscosity) for z in self.zones]

    def bounds(self):
        p = np.asarray(self.polygon)
        return float(p[:, 0].min()), float(p[:, 0].max()), float(p[:, 1].min()), float(p[:, 1].max())

    # --- derived models ----------------------------------------------------
    def with_fluid(self, fluid):
        return replace(self, fluid=fluid)

    def with_temperature(self, temperature_c):
        return replace(self, fluid=self.fluid.at_temperature(temperature_c))

    def with_d_mu(self, d_mu):
        """Replace zone dμ values (scalar applies to every zone)."""
        vals = [d_mu] * len(self.zones) if np.isscalar(d_mu) else list(d_mu)
        if len(vals) != len(self.zones):
            raise InvalidParameter(f"{len(vals)} dμ values for {len(self.zones)} zones")
        return replace(self, zones=tuple(replace(z, d_mu=float(v)) for z, v in zip(self.zones, vals)))

    def with_diffusivity(self, d):
        """Set runtime diffusivity d [m²/s] (scalar or per zone) at the current fluid."""
        mu = self.viscosity
        vals = [d] * len(self.zones) if np.isscalar(d) else list(d)
        return self.with_d_mu([v * mu for v in vals])

    def with_sensors(self, sensors):
        return replace(self, sensors=tuple(sensors))

    def with_grid(self, dx, dy):
        return replace(self, dx=float(dx), dy=float(dy))


# ============================================================
# CANNED MODELS
# ============================================================
def default_sensors():
    return tuple(Sensor(s["id"], s["x"], s["y"], s.get("slice")) for s in TIDAL_SHEET["sensors"])


def default_model(d_mu=None, vg=None, fluid=None, sensors=None, **kwargs):
    """Homogeneous default cross-section (one zone covering the polygon)."""
    cs = TIDAL_SHEET["cross_section"]
    poly = tuple(tuple(p) for p in cs["polygon"])
    fluid = fluid or FluidProperties()
    if d_mu is None:
        d_mu = 1.0 * fluid.viscosity
    zone = SoilZone(region=poly, d_mu=d_mu, vg=vg or VanGenuchtenParams(), name="dike")
    tags = tuple(cs["boundaries"][str(i)] for i in range(len(poly)))
    return DikeModel(polygon=poly, zones=(zone,), boundaries=tags,
                     sensors=default_sensors() if sensors is None else tuple(sensors),
                     fluid=fluid, **kwargs)


def strip_model(d=1.0, length=120.0, y_bottom=-12.0, y_top=-2.0, probes=(40.0,),
                fluid=None, dx=1.0, dy=0.25, specific_storage=None):
    """Rectangular saturated strip: land (fixed) at x = 0, sea at x = length.

    Probe sensors are named P<x> and sit at mid-height.
    """
    fluid = fluid or FluidProperties()
    poly = ((0.0, y_bottom), (length, y_bottom), (length, y_top), (0.0, y_top))
    storage = specific_storage or TIDAL_SHEET["sand"]["specific_storage"]
    zone = SoilZone(region=poly, d_mu=d * fluid.viscosity, specific_storage=storage, name="strip")
    y_mid = 0.5 * (y_bottom + y_top)
    sensors = tuple(Sensor(f"P{x:g}", float(x), y_mid) for x in probes)
    return DikeModel(polygon=poly, zones=(zone,), boundaries=("wall", "sea", "wall", "land"),
                     sensors=sensors, fluid=fluid, dx=dx, dy=dy, inlet_x=length)


# ============================================================
# JSON MODEL FILE (pydantic schema)
# ============================================================
class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometrySpec(_Strict):
    polygon: list[tuple[float, float]] = Field(min_length=3)


class VanGenuchtenSpec(_Strict):
    a: float
    n: float
    l: float = TIDAL_SHEET["sand"]["l"]
    theta_s: float = TIDAL_SHEET["sand"]["theta_s"]
    theta_r: float = TIDAL_SHEET["sand"]["theta_r"]


class ZoneSpec(_Strict):
    polygon: list[tuple[float, float]] = Field(min_length=3)
    d_mu_Pa_m2: float
    vg: VanGenuchtenSpec = Field(default_factory=lambda: VanGenuchtenSpec(
        a=TIDAL_SHEET["sand"]["a"], n=TIDAL_SHEET["sand"]["n"]))
    specific_storage: float = TIDAL_SHEET["sand"]["specific_storage"]
    anisotropy: float = 1.0
    name: str = ""


class SensorSpec(_Strict):
    id: str
    x: float
    y: float
    slice: Optional[Literal["upper", "lower"]] = None


class ConstantRule(_Strict):
    constant: float


class StepsRule(_Strict):
    steps: list[tuple[float, float]] = Field(min_length=1)


class FluidSpec(_Strict):
    rho: float = TIDAL_SHEET["fluid"]["rho"]
    g: float = TIDAL_SHEET["fluid"]["g"]
    viscosity_rule: Union[Literal["reference"], ConstantRule, StepsRule] = "reference"
    temperature_c: float = TIDAL_SHEET["fluid"]["temperature_c"]


class GridSpec(_Strict):
    dx: float = TIDAL_SHEET["solver"]["dx"]
    dy: float = TIDAL_SHEET["solver"]["dy"]


class StrengthSpec(_Strict):
    E: float = TIDAL_SHEET["strength"]["E"]
    nu: float = TIDAL_SHEET["strength"]["nu"]
    c: float = TIDAL_SHEET["strength"]["c"]
    phi_deg: float = TIDAL_SHEET["strength"]["phi_deg"]
    rho_s: float = TIDAL_SHEET["strength"]["rho_s"]


class ModelFile(_Strict):
    geometry: GeometrySpec
    zones: list[ZoneSpec] = Field(min_length=1)
    boundaries: dict[str, Literal["sea", "land", "wall"]]
    sensors: list[SensorSpec] = Field(default_factory=list)
    fluid: FluidSpec = Field(default_factory=FluidSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    strength: StrengthSpec = Field(default_factory=StrengthSpec)
    inlet_x: float = TIDAL_SHEET["cross_section"]["inlet_x"]
    slice_split_y: float = TIDAL_SHEET["cross_section"]["slice_split_y"]


def _fluid_from_spec(spec: FluidSpec):
    rule = spec.viscosity_rule
    if rule == "reference":
        rows = tuple(TIDAL_SHEET["viscosity_table"])
    elif isinstance(rule, ConstantRule):
        rows = ((float("-inf"), rule.constant),)
    else:
        rows = tuple(rule.steps)
    return FluidProperties(rho=spec.rho, g=spec.g, viscosity_rule=rows,
                           temperature_c=spec.temperature_c)


def model_from_dict(data):
    """Validate a parsed model document and build the DikeModel."""
    try:
        spec = ModelFile.model_validate(data)
    except ValidationError as e:
        raise ModelConfigError(f"invalid model file: {e}") from e

    n_edges = len(spec.geometry.polygon)
    try:
        keys = {int(k): v for k, v in spec.boundaries.items()}
    except ValueError as e:
        raise ModelConfigError(f"boundary keys must be edge indices: {e}") from e
    missing = [i for i in range(n_edges) if i not in keys]
    extra = [k for k in keys if not 0 <= k < n_edges]
    if missing or extra:
        raise ModelConfigError(f"boundary assignment mismatch: missing edges {missing}, unknown {extra}")

    try:
        fluid = _fluid_from_spec(spec.fluid)
        zones = tuple(
            SoilZone(region=tuple(z.polygon), d_mu=z.d_mu_Pa_m2,
                     vg=VanGenuchtenParams(**z.vg.model_dump()),
                     specific_storage=z.specific_storage, anisotropy=z.anisotropy,
                     name=z.name or f"zone{i + 1}")
            for i, z in enumerate(spec.zones))
        return DikeModel(
            polygon=tuple(spec.geometry.polygon), zones=zones,
            boundaries=tuple(keys[i] for i in range(n_edges)),
            sensors=tuple(Sensor(s.id, s.x, s.y, s.slice) for s in spec.sensors),
            fluid=fluid, dx=spec.grid.dx, dy=spec.grid.dy,
            strength=StrengthParams(**spec.strength.model_dump()),
            inlet_x=spec.inlet_x, slice_split_y=spec.slice_split_y)
    except InvalidParameter as e:
        raise ModelConfigError(str(e)) from e


def load_model(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ModelConfigError(f"cannot read model file {path}: {e}") from e
    return model_from_dict(data)


def model_to_dict(model: DikeModel):
    """Inverse of model_from_dict (viscosity rule written as explicit steps)."""
    steps = [[b, mu] for b, mu in model.fluid.viscosity_rule if b != float("-inf")]
    coldest = model.fluid.viscosity_rule[-1][1]
    if len(model.fluid.viscosity_rule) == 1:
        rule = {"constant": coldest}
    else:
        # the coldest row's bound is written as a very low finite value (JSON has no -inf)
        rule = {"steps": steps + [[-273.15, coldest]]}
    return {
        "geometry": {"polygon": [list(p) for p in model.polygon]},
        "zones": [{
            "polygon": [list(p) for p in z.region],
            "d_mu_Pa_m2": z.d_mu,
            "vg": {"a": z.vg.a, "n": z.vg.n, "l": z.vg.l,
                   "theta_s": z.vg.theta_s, "theta_r": z.vg.theta_r},
            "specific_storage": z.specific_storage,
            "anisotropy": z.anisotropy,
            "name": z.name,
        } for z in model.zones],
        "boundaries": {str(i): t for i, t in enumerate(model.boundaries)},
        "sensors": [{k: v for k, v in {"id": s.id, "x": s.x, "y": s.y, "slice": s.slice}.items()
                     if v is not None} for s in model.sensors],
        "fluid": {"rho": model.fluid.rho, "g": model.fluid.g, "viscosity_rule": rule,
                  "temperature_c": model.fluid.temperature_c},
        "grid": {"dx": model.dx, "dy": model.dy},
        "strength": {"E": model.strength.E, "nu": model.strength.nu, "c": model.strength.c,
                     "phi_deg": model.strength.phi_deg, "rho_s": model.strength.rho_s},
        "inlet_x": model.inlet_x,
        "slice_split_y": model.slice_split_y,
    }
