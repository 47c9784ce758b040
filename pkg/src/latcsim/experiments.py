"""Seeded experiment drivers and CSV/manifest output.

Every driver derives all randomness from the scenario seed, writes columns
in a fixed order, and formats numbers deterministically, so identical
(config, seed) pairs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import math
import platform
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import lambertian_gain
from .geometry import Vec3
from .localization import SolverOptions, solve_trilateration_batch
from .protocol import run_latc
from .errors import ConfigError, DegenerateDiagram, DiagramTooNarrowlySampled
from .ris import (
    RisPanel,
    ScatteringDiagram,
    broadside_hpbw_deg,
    hpbw,
    scattering_diagram,
    steer_profile,
    tolerated_error,
)
from .scenario import Scenario, build_scene
from .scene import Scene

# --------------------------------------------------------------------------
# CSV / manifest plumbing
# --------------------------------------------------------------------------


def format_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(format_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def write_manifest(out_dir: Path, config_text: str, seed: int) -> None:
    digest = hashlib.sha256(config_text.encode()).hexdigest()
    lines = [
        f"config_sha256={digest}",
        f"seed={seed}",
        f"package=latcsim {__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
    ]
    (out_dir / "manifest").write_text("\n".join(lines) + "\n")


def _canonical_panel(rows: int, cols: int, spacing: float) -> RisPanel:
    return RisPanel(0, Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), rows, cols, spacing)


# --------------------------------------------------------------------------
# Scattering diagrams and HPBW per element count
# --------------------------------------------------------------------------


def exp_scattering(scenario: Scenario):
    """Broadside scattering diagram per configured element count.

    Returns (header, rows, hpbw_header, hpbw_rows); the diagram table has
    one angle column plus one value column per M.
    """
    spec = scenario.experiments.scattering
    incident = Vec3(0, 0, -1)
    target = Vec3(0, 0, 1)
    diagrams: list[ScatteringDiagram] = []
    labels = []
    hpbw_rows = []
    for rows_n, cols_n in spec.m_configs:
        panel = _canonical_panel(rows_n, cols_n, spec.spacing_wavelengths)
        profile = steer_profile(panel, incident, target)
        diagram = scattering_diagram(panel, profile, incident, spec.resolution_deg)
        diagrams.append(diagram)
        labels.append(f"M{rows_n * cols_n}")
        try:
            width = hpbw(diagram)
        except (DegenerateDiagram, DiagramTooNarrowlySampled):
            width = ""  # single-element (flat) diagrams have no beamwidth
        hpbw_rows.append([rows_n * cols_n, rows_n, cols_n, width])

    header = ["angle_deg"] + labels
    angles = diagrams[0].angles_deg
    cols = [d.values for d in diagrams]
    table = [[angles[i]] + [c[i] for c in cols] for i in range(len(angles))]
    return header, table, ["M", "rows", "cols", "hpbw_deg"], hpbw_rows


def diagram_csv_rows(diagram: ScatteringDiagram):
    """Single-diagram export: columns angle_deg,value."""
    return ["angle_deg", "value"], [
        [a, v] for a, v in zip(diagram.angles_deg, diagram.values)
    ]


# --------------------------------------------------------------------------
# Tolerated localization error vs distance
# --------------------------------------------------------------------------


def exp_tolerated_error(scenario: Scenario):
    spec = scenario.experiments.tolerated_error
    sc = scenario.experiments.scattering
    n = int(math.floor((spec.d_max_m - spec.d_min_m) / spec.d_step_m + 1e-9)) + 1
    distances = spec.d_min_m + spec.d_step_m * np.arange(n)

    widths = []
    labels = []
    for rows_n, cols_n in sc.m_configs:
        panel = _canonical_panel(rows_n, cols_n, sc.spacing_wavelengths)
        try:
            widths.append(broadside_hpbw_deg(panel, "u"))
        except DegenerateDiagram as exc:
            raise ConfigError(
                f"panel {rows_n}x{cols_n} has no beamwidth to derive sigma_p from"
            ) from exc
        labels.append(f"sigma_p_m_M{rows_n * cols_n}")
    header = ["distance_m"] + labels
    rows = [[d] + [tolerated_error(w, d) for w in widths] for d in distances]
    return header, rows


# --------------------------------------------------------------------------
# RSS localization error vs K (paired Monte Carlo)
# --------------------------------------------------------------------------


def scene_arrays(scene: Scene, receiver) -> dict:
    """Flatten scene anchors and the receiver into broadcastable arrays."""
    anchors = scene.anchors
    arr = {
        "anchor_pos": np.array([a.position.as_array() for a in anchors]),
        "anchor_normal": np.array([a.normal.as_array() for a in anchors]),
        "tx": np.array([a.tx_power_w for a in anchors]),
        "m": np.array([a.lambertian_m for a in anchors]),
        "ids": np.array([a.id for a in anchors]),
    }
    probe = receiver.array_at(Vec3(0, 0, 0))
    arr["pd_normal"] = probe.world_normals()
    arr["pd_area"] = np.array([e.area_m2 for e in probe.elements])
    arr["pd_gain"] = np.array([e.optical_gain for e in probe.elements])
    arr["pd_fov"] = np.array([e.fov_half_angle_rad for e in probe.elements])
    return arr


def _blocked_matrix(scene: Scene, positions: np.ndarray, anchor_pos: np.ndarray) -> np.ndarray:
    """(T, A) occlusion flags via the open-interior slab test, vectorized."""
    t_n, a_n = positions.shape[0], anchor_pos.shape[0]
    blocked = np.zeros((t_n, a_n), dtype=bool)
    a = anchor_pos[None, :, :]
    b = positions[:, None, :]
    d = b - a
    for obs in scene.room.obstacles:
        lo = obs.lo.as_array()
        hi = obs.hi.as_array()
        t_lo = np.zeros((t_n, a_n))
        t_hi = np.ones((t_n, a_n))
        degenerate_out = np.zeros((t_n, a_n), dtype=bool)
        for ax in range(3):
            p0 = a[..., ax]
            dd = d[..., ax]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo[ax] - p0) / dd
                t2 = (hi[ax] - p0) / dd
            swap = t1 > t2
            t1s = np.where(swap, t2, t1)
            t2s = np.where(swap, t1, t2)
            zero = dd == 0.0
            inside = (p0 > lo[ax]) & (p0 < hi[ax])
            t1s = np.where(zero, np.where(inside, -np.inf, np.inf), t1s)
            t2s = np.where(zero, np.where(inside, np.inf, -np.inf), t2s)
            degenerate_out |= zero & ~inside
            t_lo = np.maximum(t_lo, t1s)
            t_hi = np.minimum(t_hi, t2s)
        blocked |= (t_lo < t_hi) & ~degenerate_out
    return blocked


def rss_batch(arrays, positions, k_ratio, u_nlos, noise, blocked, m_override=None):
    """Vectorized RSS sampler matching measure()'s model and draws.

    u_nlos and noise have shape (T, A, P); the exponential uses the same
    inversion as the scalar path so common random numbers across K pair
    exactly.
    """
    m = arrays["m"] if m_override is None else np.full_like(arrays["m"], m_override)
    h = lambertian_gain(
        arrays["anchor_pos"][None, :, None, :],
        arrays["anchor_normal"][None, :, None, :],
        m[None, :, None],
        positions[:, None, None, :],
        arrays["pd_normal"][None, None, :, :],
        arrays["pd_area"][None, None, :],
        arrays["pd_fov"][None, None, :],
        arrays["pd_gain"][None, None, :],
    )
    p_los = arrays["tx"][None, :, None] * h
    los = (~blocked[:, :, None]) & (h > 0.0)
    if math.isinf(k_ratio):
        p_nlos = 0.0
    else:
        p_nlos = -(p_los / k_ratio) * np.log1p(-u_nlos)
    signal = np.where(los, p_los + p_nlos, 0.0)
    rss = np.maximum(0.0, signal + noise)
    return rss, los, h


def _top4_problem(arrays, positions, rss, los, m_value):
    """Select the four strongest LoS anchors per trial and build the
    batched trilateration problem over all their LoS photodetector
    samples; returns (problem, init_problem, valid mask)."""
    t_n, _, p_n = rss.shape
    masked = np.where(los, rss, -np.inf)
    score = masked.max(axis=2)
    has_los = los.any(axis=2)
    valid = has_los.sum(axis=1) >= 4

    order = np.argsort(np.where(has_los, -score, np.inf), axis=1, kind="stable")
    sel = order[:, :4]

    rss_sel = np.take_along_axis(rss, sel[:, :, None], axis=1)  # (T, 4, P)
    los_sel = np.take_along_axis(los, sel[:, :, None], axis=1)
    tx = arrays["tx"][sel]
    m4 = np.full(sel.shape, m_value)

    # fit problem: every (selected anchor, PD) pair, non-LoS rows masked out
    shape = (t_n, 4 * p_n)
    coef_full = (
        (m_value + 1.0)
        * arrays["pd_area"][None, None, :]
        * arrays["pd_gain"][None, None, :]
        * tx[:, :, None]
        / (2.0 * math.pi)
    )
    problem = {
        "anchor_pos": np.broadcast_to(
            arrays["anchor_pos"][sel][:, :, None, :], (t_n, 4, p_n, 3)
        ).reshape(t_n, 4 * p_n, 3),
        "anchor_normal": np.broadcast_to(
            arrays["anchor_normal"][sel][:, :, None, :], (t_n, 4, p_n, 3)
        ).reshape(t_n, 4 * p_n, 3),
        "pd_normal": np.broadcast_to(
            arrays["pd_normal"][None, None, :, :], (t_n, 4, p_n, 3)
        ).reshape(t_n, 4 * p_n, 3),
        "m": np.full(shape, m_value),
        "coef": coef_full.reshape(shape),
        "rss": np.where(los_sel, rss_sel, 0.0).reshape(shape),
        "weight": los_sel.astype(float).reshape(shape),
    }

    # init view: the strongest PD of each selected anchor
    masked_sel = np.take_along_axis(masked, sel[:, :, None], axis=1)
    pd_idx = masked_sel.argmax(axis=2)
    rss_pick = np.take_along_axis(masked_sel, pd_idx[:, :, None], axis=2)[:, :, 0]
    init_problem = {
        "anchor_pos": arrays["anchor_pos"][sel],
        "anchor_normal": arrays["anchor_normal"][sel],
        "pd_normal": arrays["pd_normal"][pd_idx],
        "m": m4,
        "coef": (m4 + 1.0)
        * arrays["pd_area"][pd_idx]
        * arrays["pd_gain"][pd_idx]
        * tx
        / (2.0 * math.pi),
        "rss": np.where(np.isfinite(rss_pick), rss_pick, 0.0),
    }
    return problem, init_problem, valid


def exp_error_vs_k(scenario: Scenario, opts: SolverOptions | None = None):
    """Paired Monte Carlo of the top-4 RSS method over the K and m grids.

    All (K, m) points share one position sample and one block of channel
    draws, so error curves are directly comparable point by point.
    """
    spec = scenario.experiments.error_vs_k
    scene = build_scene(scenario, build_codebooks=False)
    arrays = scene_arrays(scene, scenario.receiver)
    opts = opts or SolverOptions()

    root = np.random.SeedSequence(scenario.seed)
    ss_pos, ss_meas = root.spawn(2)
    ext = scenario.room.extents
    rng_pos = np.random.default_rng(ss_pos)
    t_n = spec.trials
    positions = np.column_stack(
        [
            rng_pos.uniform(ext.lo.x + spec.margin_m, ext.hi.x - spec.margin_m, t_n),
            rng_pos.uniform(ext.lo.y + spec.margin_m, ext.hi.y - spec.margin_m, t_n),
            np.full(t_n, spec.z_m),
        ]
    )
    a_n = arrays["anchor_pos"].shape[0]
    p_n = arrays["pd_normal"].shape[0]
    rng_meas = np.random.default_rng(ss_meas)
    u_nlos = rng_meas.random((t_n, a_n, p_n))
    noise = rng_meas.normal(0.0, scenario.channel.noise_std_w, (t_n, a_n, p_n))
    blocked = _blocked_matrix(scene, positions, arrays["anchor_pos"])
    bounds = (ext.lo.as_array(), ext.hi.as_array())

    labels = [f"m{m:g}" for m in spec.m_values]
    header = ["K"]
    for lab in labels:
        header += [f"mean_cm_{lab}", f"median_cm_{lab}", f"p95_cm_{lab}"]

    rows = []
    for k in spec.k_values:
        row = [k]
        for m in spec.m_values:
            rss, los, _ = rss_batch(arrays, positions, k, u_nlos, noise, blocked, m_override=m)
            problem, init_problem, valid = _top4_problem(arrays, positions, rss, los, m)
            p, _, converged = solve_trilateration_batch(
                problem, opts, bounds, init_problem=init_problem
            )
            ok = valid & converged
            err_cm = np.linalg.norm(p[ok] - positions[ok], axis=1) * 100.0
            row += [
                float(err_cm.mean()),
                float(np.median(err_cm)),
                float(np.percentile(err_cm, 95)),
            ]
        rows.append(row)
    return header, rows


# --------------------------------------------------------------------------
# End-to-end in-beam study
# --------------------------------------------------------------------------


def exp_inbeam(scenario: Scenario):
    """Monte Carlo of full protocol runs per method and element count."""
    spec = scenario.experiments.inbeam
    region = spec.region
    root = np.random.default_rng(scenario.seed)
    t_n = spec.trials
    positions = np.column_stack(
        [
            root.uniform(region.x_min, region.x_max, t_n),
            root.uniform(region.y_min, region.y_max, t_n),
            np.full(t_n, region.z),
        ]
    )
    seeds = root.integers(0, 2**63, t_n)

    header = ["method", "M", "p_in_beam", "mean_error_cm", "mean_latency_ms"]
    rows = []
    for rows_n, cols_n in spec.m_configs:
        panel_scenario = _with_panel_size(scenario, rows_n, cols_n)
        scene = build_scene(panel_scenario)
        for method in spec.methods:
            in_beam = []
            errors = []
            latencies = []
            for i in range(t_n):
                ue = scenario.receiver.array_at(Vec3.from_array(positions[i]))
                params = replace(scenario.channel, seed=int(seeds[i]))
                outcome = run_latc(
                    scene,
                    ue,
                    scenario.request,
                    params,
                    scenario.timing,
                    force_method=method,
                )
                in_beam.append(outcome.in_beam)
                latencies.append(outcome.latency_ms)
                if outcome.position_error_m is not None:
                    errors.append(outcome.position_error_m)
            rows.append(
                [
                    method,
                    rows_n * cols_n,
                    float(np.mean(in_beam)),
                    float(np.mean(errors) * 100.0) if errors else math.nan,
                    float(np.mean(latencies)),
                ]
            )
    return header, rows


def _with_panel_size(scenario: Scenario, rows_n: int, cols_n: int) -> Scenario:
    if not scenario.panels:
        raise ValueError("scenario has no panel to resize")
    first = scenario.panels[0]
    panel = replace(first.panel, rows=rows_n, cols=cols_n)
    new_specs = (replace(first, panel=panel),) + scenario.panels[1:]
    return replace(scenario, panels=new_specs)


# --------------------------------------------------------------------------
# Protocol runs over the configured UE cases
# --------------------------------------------------------------------------


def exp_latc_run(scenario: Scenario):
    """One protocol run per configured UE case."""
    if not scenario.ue_cases:
        raise ValueError("scenario defines no ue_cases")
    rng = np.random.default_rng(scenario.seed)
    seeds = rng.integers(0, 2**63, len(scenario.ue_cases))
    base_scene = build_scene(scenario)

    header = ["run_id", "method", "N", "position_error_m", "in_beam", "latency_ms", "terminal_event"]
    rows = []
    for case, seed in zip(scenario.ue_cases, seeds):
        scene = (
            base_scene
            if not case.obstacles
            else build_scene(scenario, case.obstacles, codebooks=base_scene.codebooks)
        )
        ue = scenario.receiver.array_at(case.position)
        params = replace(scenario.channel, seed=int(seed))
        outcome = run_latc(scene, ue, scenario.request, params, scenario.timing)
        rows.append(
            [
                case.name,
                outcome.method,
                outcome.n_los,
                outcome.position_error_m if outcome.position_error_m is not None else "",
                outcome.in_beam,
                outcome.latency_ms,
                outcome.terminal_event or "",
            ]
        )
    return header, rows
