"""Far-field scattering model of a planar RIS.

Elements sit on a regular grid with pitch given in carrier wavelengths, so
all phase terms use k = 2*pi per wavelength. A steering profile is the
conjugate-phase construction

    phase(r) = -k * (u_inc + u_tgt) . r   (mod 2 pi)

and the scattering diagram on a cut plane is the power-normalized array
factor |sum_e exp(j*(phase_e + k*(u_inc + u_out) . r_e))|^2 / M^2.
Elements are amplitude-lossless with a unit element pattern; near-field
effects, coupling, and phase quantization are not modeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateDiagram,
    DegenerateGeometry,
    DiagramTooNarrowlySampled,
    EmptyCodebook,
    InvalidAngle,
    InvalidVector,
    OutOfCoverage,
)
from .geometry import Vec3

TWO_PI = 2.0 * math.pi
_ANGLE_CHUNK = 2048


@dataclass(frozen=True)
class RisPanel:
    """Planar reflecting surface: rows x cols elements at a fixed pitch.

    axis_u and axis_v are orthonormal in-plane directions; the outward
    normal is axis_u x axis_v. Rows count elements along axis_u, columns
    along axis_v, so the default broadside cut (along axis_u) is governed
    by the row count.
    """

    id: int
    center: Vec3
    axis_u: Vec3
    axis_v: Vec3
    rows: int
    cols: int
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidVector("panel needs at least one row and column")
        if self.spacing_wavelengths <= 0.0:
            raise InvalidVector("element spacing must be positive")
        if not self.axis_u.is_unit() or not self.axis_v.is_unit():
            raise InvalidVector("panel face axes must be unit vectors")
        if abs(self.axis_u.dot(self.axis_v)) > 1e-9:
            raise InvalidVector("panel face axes must be orthogonal")

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols

    @property
    def normal(self) -> Vec3:
        return self.axis_u.cross(self.axis_v)

    def element_coords(self) -> np.ndarray:
        """(M, 2) element coordinates in wavelengths, row-major."""
        return _element_coords(self.rows, self.cols, self.spacing_wavelengths)

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.axis_u.as_array(),
            self.axis_v.as_array(),
            self.normal.as_array(),
        )


@lru_cache(maxsize=64)
def _element_coords(rows: int, cols: int, spacing: float) -> np.ndarray:
    iu = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    iv = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    uu, vv = np.meshgrid(iu, iv, indexing="ij")
    coords = np.column_stack([uu.ravel(), vv.ravel()])
    coords.setflags(write=False)
    return coords


@dataclass(frozen=True, eq=False)
class PhaseProfile:
    """Per-element phases in [0, 2 pi), row-major over rows x cols.

    steer_target keeps the world direction a steering profile was built
    for; it defines the default diagram cut and is None for diffusion.
    """

    phases: np.ndarray
    rows: int
    cols: int
    steer_target: Vec3 | None = None

    def __post_init__(self):
        phases = np.mod(np.asarray(self.phases, dtype=float).ravel(), TWO_PI)
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)
        if self.phases.shape != (self.rows * self.cols,):
            raise InvalidVector("profile length must equal rows*cols")

    def shifted(self, delta_rad: float) -> "PhaseProfile":
        return PhaseProfile(self.phases + delta_rad, self.rows, self.cols, self.steer_target)


@dataclass(frozen=True)
class DiagramCut:
    """Cut plane spanned by the panel normal and an in-plane axis."""

    normal: Vec3
    axis: Vec3
    steer_angle_deg: float


@dataclass(frozen=True, eq=False)
class ScatteringDiagram:
    """Normalized power versus angle on one cut plane."""

    angles_deg: np.ndarray
    values: np.ndarray
    cut: DiagramCut

    def __post_init__(self):
        a = np.asarray(self.angles_deg, dtype=float)
        v = np.asarray(self.values, dtype=float)
        a.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "angles_deg", a)
        object.__setattr__(self, "values", v)
        if a.ndim != 1 or a.shape != v.shape:
            raise InvalidVector("angle and value grids must be 1-D and equal length")
        if not np.all(np.diff(a) > 0):
            raise InvalidVector("angle grid must be strictly increasing")
        if abs(float(v.max()) - 1.0) > 1e-9:
            raise InvalidVector("diagram must be normalized to peak 1")


def _check_unit(v: Vec3, what: str) -> np.ndarray:
    if not v.is_unit():
        raise InvalidVector(f"{what} must be a unit vector")
    return v.as_array()


def steer_profile(panel: RisPanel, incident: Vec3, target: Vec3) -> PhaseProfile:
    """Conjugate-phase profile steering the reflection toward target.

    incident is the propagation direction of the impinging wave (pointing
    at the panel); target is the outgoing unit direction and must lie in
    the panel's front half-space.
    """
    inc = _check_unit(incident, "incident direction")
    tgt = _check_unit(target, "target direction")
    u, v, n = panel.frame()
    if float(tgt @ n) <= 0.0:
        raise OutOfCoverage("steer target lies behind the panel")
    coords = panel.element_coords()
    proj = coords[:, 0] * float((inc + tgt) @ u) + coords[:, 1] * float((inc + tgt) @ v)
    return PhaseProfile(-TWO_PI * proj, panel.rows, panel.cols, steer_target=target)


def diffusion_profile(panel: RisPanel, seed: int) -> PhaseProfile:
    """I.i.d. uniform phases over [0, 2 pi); deterministic given seed."""
    rng = np.random.default_rng(seed)
    return PhaseProfile(rng.uniform(0.0, TWO_PI, panel.n_elements), panel.rows, panel.cols)


def _static_phase(panel: RisPanel, profile: PhaseProfile, inc: np.ndarray) -> np.ndarray:
    if (profile.rows, profile.cols) != (panel.rows, panel.cols):
        raise InvalidVector("profile shape does not match panel")
    u, v, _ = panel.frame()
    coords = panel.element_coords()
    return profile.phases + TWO_PI * (coords[:, 0] * float(inc @ u) + coords[:, 1] * float(inc @ v))


def _cut_axis_for(panel: RisPanel, profile: PhaseProfile) -> Vec3:
    """In-plane cut axis: through the steer target when one is recorded."""
    if profile.steer_target is not None:
        u, v, n = panel.frame()
        t = profile.steer_target.as_array()
        in_plane = t - float(t @ n) * n
        nrm = float(np.linalg.norm(in_plane))
        if nrm > 1e-12:
            return Vec3.from_array(in_plane / nrm)
    return panel.axis_u


def scattering_diagram(
    panel: RisPanel,
    profile: PhaseProfile,
    incident: Vec3,
    resolution_deg: float = 0.01,
    angle_min_deg: float = -180.0,
    angle_max_deg: float = 180.0,
    cut_axis: Vec3 | None = None,
) -> ScatteringDiagram:
    """Power array factor on the cut plane, renormalized to peak 1.

    The cut plane contains the panel normal and the steering direction
    (falling back to axis_u for broadside or diffusion profiles); angles
    are measured from the normal within that plane.
    """
    if resolution_deg <= 0.0:
        raise InvalidAngle("resolution must be positive")
    inc = _check_unit(incident, "incident direction")
    axis = cut_axis if cut_axis is not None else _cut_axis_for(panel, profile)
    axis_a = _check_unit(axis, "cut axis")
    u, v, n = panel.frame()
    if abs(float(axis_a @ n)) > 1e-9:
        raise InvalidVector("cut axis must lie in the panel plane")

    n_pts = int(round((angle_max_deg - angle_min_deg) / resolution_deg)) + 1
    angles = np.linspace(angle_min_deg, angle_max_deg, n_pts)

    coords = panel.element_coords()
    c_along = coords[:, 0] * float(axis_a @ u) + coords[:, 1] * float(axis_a @ v)
    static = _static_phase(panel, profile, inc)
    w_static = np.exp(1j * static)

    m = panel.n_elements
    values = np.empty(n_pts)
    sin_a = np.sin(np.radians(angles))
    for start in range(0, n_pts, _ANGLE_CHUNK):
        stop = min(start + _ANGLE_CHUNK, n_pts)
        phase = TWO_PI * np.outer(sin_a[start:stop], c_along)
        total = np.exp(1j * phase) @ w_static
        values[start:stop] = np.abs(total) ** 2 / m**2

    peak = float(values.max())
    if peak > 0.0:
        values = values / peak
    values[np.argmax(values)] = 1.0  # pin the peak against rounding

    steer_angle = 0.0
    if profile.steer_target is not None:
        t = profile.steer_target.as_array()
        steer_angle = math.degrees(math.atan2(float(t @ axis_a), float(t @ n)))
    cut = DiagramCut(panel.normal, Vec3.from_array(axis_a), steer_angle)
    return ScatteringDiagram(angles, values, cut)


def hpbw(diagram: ScatteringDiagram) -> float:
    """Full width in degrees between the two half-power crossings.

    The array factor repeats its main lobe at the supplementary angle on a
    +-180 degree cut, so among equal-height peaks the one closest to the
    cut's nominal steering angle is measured. Crossings are linearly
    interpolated between grid samples.
    """
    vals = diagram.values
    angles = diagram.angles_deg
    vmax = float(vals.max())
    if vmax - float(vals.min()) < 1e-12:
        raise DegenerateDiagram("diagram is flat")

    candidates = np.flatnonzero(vals >= vmax - 1e-12)
    peak_idx = int(candidates[np.argmin(np.abs(angles[candidates] - diagram.cut.steer_angle_deg))])

    half = 0.5 * vmax

    def cross(direction: int) -> float:
        i = peak_idx
        while 0 <= i + direction < len(vals):
            j = i + direction
            if vals[j] < half:
                # interpolate between samples i (>= half) and j (< half)
                frac = (vals[i] - half) / (vals[i] - vals[j])
                return float(angles[i] + frac * (angles[j] - angles[i]))
            i = j
        raise DiagramTooNarrowlySampled("half-power crossing outside the angle grid")

    return cross(+1) - cross(-1)


def tolerated_error(theta_deg: float, distance_m: float) -> float:
    """Lateral error keeping a UE inside the half-power beam: tan(theta/2)*d."""
    if not 0.0 < theta_deg < 180.0:
        raise InvalidAngle("beamwidth must lie in (0, 180) degrees")
    if distance_m < 0.0:
        raise ValueError("distance must be non-negative")
    return math.tan(math.radians(theta_deg) / 2.0) * distance_m


@dataclass(frozen=True)
class CodebookGridSpec:
    """Azimuth/elevation grid (degrees) for beam-steering entries."""

    az_min_deg: float = -60.0
    az_max_deg: float = 60.0
    az_step_deg: float = 5.0
    el_min_deg: float = 0.0
    el_max_deg: float = 0.0
    el_step_deg: float = 5.0

    def __post_init__(self):
        if self.az_step_deg <= 0.0 or self.el_step_deg <= 0.0:
            raise InvalidVector("grid steps must be positive")
        for lo, hi in ((self.az_min_deg, self.az_max_deg), (self.el_min_deg, self.el_max_deg)):
            if hi < lo:
                raise InvalidVector("grid range must have max >= min")
            if lo <= -90.0 or hi >= 90.0:
                raise InvalidVector("grid must stay inside the front half-space")

    def azimuths_deg(self) -> np.ndarray:
        return _grid_values(self.az_min_deg, self.az_max_deg, self.az_step_deg)

    def elevations_deg(self) -> np.ndarray:
        return _grid_values(self.el_min_deg, self.el_max_deg, self.el_step_deg)

    def halved(self) -> "CodebookGridSpec":
        return CodebookGridSpec(
            self.az_min_deg,
            self.az_max_deg,
            self.az_step_deg / 2.0,
            self.el_min_deg,
            self.el_max_deg,
            self.el_step_deg / 2.0,
        )


def _grid_values(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


@dataclass(frozen=True)
class CodebookEntry:
    index: int
    azimuth_rad: float
    elevation_rad: float
    functionality: str  # "beamsteer" or "diffusion"
    profile: PhaseProfile


@dataclass(eq=False)
class Codebook:
    """Steering-direction -> phase-profile map plus one diffusion entry."""

    panel_id: int
    incident: Vec3
    entries: tuple[CodebookEntry, ...]
    grid: CodebookGridSpec | None = None
    _sweep_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise EmptyCodebook("codebook has no entries")
        seen = set()
        for e in self.entries:
            key = (e.functionality, e.azimuth_rad, e.elevation_rad)
            if key in seen:
                raise InvalidVector("duplicate steering direction for one functionality")
            seen.add(key)

    def beamsteer_entries(self) -> list[CodebookEntry]:
        return [e for e in self.entries if e.functionality == "beamsteer"]

    def diffusion_entry(self) -> CodebookEntry:
        for e in self.entries:
            if e.functionality == "diffusion":
                return e
        raise EmptyCodebook("codebook has no diffusion entry")


def direction_from_azel(panel: RisPanel, azimuth_rad: float, elevation_rad: float) -> np.ndarray:
    """World direction for panel-frame azimuth (toward axis_u) and elevation
    (toward axis_v); (0, 0) is broadside."""
    u, v, n = panel.frame()
    ce = math.cos(elevation_rad)
    return (
        ce * math.cos(azimuth_rad) * n
        + ce * math.sin(azimuth_rad) * u
        + math.sin(elevation_rad) * v
    )


def entry_direction_world(panel: RisPanel, entry: CodebookEntry) -> np.ndarray:
    return direction_from_azel(panel, entry.azimuth_rad, entry.elevation_rad)


def codebook_build(
    panel: RisPanel,
    incident: Vec3,
    grid: CodebookGridSpec,
    diffusion_seed: int = 0,
) -> Codebook:
    """One beamsteer entry per grid direction plus one diffusion entry."""
    az = grid.azimuths_deg()
    el = grid.elevations_deg()
    if az.size == 0 or el.size == 0:
        raise EmptyCodebook("codebook grid is empty")
    entries: list[CodebookEntry] = []
    for az_deg in az:
        for el_deg in el:
            az_r, el_r = math.radians(az_deg), math.radians(el_deg)
            target = Vec3.from_array(direction_from_azel(panel, az_r, el_r)).unit()
            profile = steer_profile(panel, incident, target)
            entries.append(CodebookEntry(len(entries), az_r, el_r, "beamsteer", profile))
    entries.append(
        CodebookEntry(len(entries), 0.0, 0.0, "diffusion", diffusion_profile(panel, diffusion_seed))
    )
    return Codebook(panel.id, incident, tuple(entries), grid)


def codebook_select(
    codebook: Codebook,
    position_estimate: Vec3,
    panel: RisPanel,
    functionality: str = "beamsteer",
) -> CodebookEntry:
    """Entry whose steering direction is closest to panel->estimate.

    Ties go to the lowest entry index; diffusion requests return the
    diffusion entry directly.
    """
    if functionality == "diffusion":
        return codebook.diffusion_entry()
    if functionality != "beamsteer":
        raise InvalidVector(f"unknown functionality {functionality!r}")
    to_est = (position_estimate - panel.center).as_array()
    nrm = float(np.linalg.norm(to_est))
    if nrm == 0.0:
        raise DegenerateGeometry("estimate coincides with the panel center")
    t = to_est / nrm
    _, _, n = panel.frame()
    if float(t @ n) <= 0.0:
        raise OutOfCoverage("position estimate lies behind the panel")
    steer = codebook.beamsteer_entries()
    dirs = np.array([entry_direction_world(panel, e) for e in steer])
    dots = dirs @ t
    # max cosine == min angle; candidates within rounding of the best are a
    # tie and the lowest entry index wins
    best = int(np.flatnonzero(dots >= dots.max() - 1e-12)[0])
    return steer[best]


def beam_gain_at(panel: RisPanel, profile: PhaseProfile, incident: Vec3, point: Vec3) -> float:
    """Array-factor power toward point, on the coherent-peak (=1) scale.

    A conjugate steering profile reaches exactly 1 on its steered ray, so
    this is peak-normalized for codebook beams; the same scale exposes the
    absence of a coherent lobe for diffusion profiles. Points behind the
    panel get zero.
    """
    to_pt = (point - panel.center).as_array()
    nrm = float(np.linalg.norm(to_pt))
    if nrm == 0.0:
        raise DegenerateGeometry("evaluation point coincides with the panel center")
    direction = to_pt / nrm
    u, v, n = panel.frame()
    if float(direction @ n) <= 0.0:
        return 0.0
    inc = _check_unit(incident, "incident direction")
    coords = panel.element_coords()
    out_proj = coords[:, 0] * float(direction @ u) + coords[:, 1] * float(direction @ v)
    total = np.exp(1j * (_static_phase(panel, profile, inc) + TWO_PI * out_proj)).sum()
    return float(np.abs(total) ** 2 / panel.n_elements**2)


def sweep_gains(codebook: Codebook, panel: RisPanel, point: Vec3) -> np.ndarray:
    """beam_gain_at for every beamsteer entry at once (beam-scan hot path).

    Caches the per-entry element weights on the codebook; single-precision
    weights keep the cache small at gain errors ~1e-6.
    """
    steer = codebook.beamsteer_entries()
    cache = codebook._sweep_cache
    if "weights" not in cache:
        inc = codebook.incident.as_array()
        static = np.stack([_static_phase(panel, e.profile, inc) for e in steer])
        cache["weights"] = np.exp(1j * static).astype(np.complex64)
    to_pt = (point - panel.center).as_array()
    nrm = float(np.linalg.norm(to_pt))
    if nrm == 0.0:
        raise DegenerateGeometry("evaluation point coincides with the panel center")
    direction = to_pt / nrm
    u, v, n = panel.frame()
    if float(direction @ n) <= 0.0:
        return np.zeros(len(steer))
    coords = panel.element_coords()
    out_proj = coords[:, 0] * float(direction @ u) + coords[:, 1] * float(direction @ v)
    z = np.exp(1j * TWO_PI * out_proj)
    totals = cache["weights"] @ z
    return np.abs(totals) ** 2 / panel.n_elements**2


@lru_cache(maxsize=128)
def _broadside_hpbw_cached(rows: int, cols: int, spacing: float, axis: str, resolution_deg: float) -> float:
    panel = RisPanel(-1, Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), rows, cols, spacing)
    incident = Vec3(0, 0, -1)
    profile = steer_profile(panel, incident, Vec3(0, 0, 1))
    cut = panel.axis_u if axis == "u" else panel.axis_v
    diagram = scattering_diagram(
        panel, profile, incident, resolution_deg, -90.0, 90.0, cut_axis=cut
    )
    return hpbw(diagram)


def broadside_hpbw_deg(panel: RisPanel, axis: str = "u", resolution_deg: float = 0.01) -> float:
    """HPBW of the broadside-steered beam on one principal cut (cached)."""
    if axis not in ("u", "v"):
        raise InvalidVector("axis must be 'u' or 'v'")
    return _broadside_hpbw_cached(panel.rows, panel.cols, panel.spacing_wavelengths, axis, resolution_deg)


def min_broadside_hpbw_deg(panel: RisPanel, resolution_deg: float = 0.01) -> float:
    """Narrowest principal-cut HPBW; the safe in-beam width for 3-D offsets."""
    return min(
        broadside_hpbw_deg(panel, "u", resolution_deg),
        broadside_hpbw_deg(panel, "v", resolution_deg),
    )
