"""Main rollout loop, trajectory logging, metrics, and parameter sweeps.

Step order: rebuild the two-foot support geometry from the current
stance diagonal, refresh the affine constraint rows frozen at the
applied reference, restore governor feasibility if the rows moved, run
the governor update, convert the applied reference to joint commands,
evaluate ground contact, integrate.  Everything is deterministic, so
identical configs produce byte-identical trajectory files.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, make_config
from .contact import ground_force
from .dynamics import (
    LEG_NAMES,
    NonFiniteStateError,
    feet_kinematics,
    rk4_step,
    standing_state,
)
from .gait import PAIRS, TrotController, reference_trajectory
from .governor import BRANCH_DISABLED, erg_step, restore_feasibility
from .grf import (
    ConstraintSystem,
    DegenerateSupportError,
    StanceGeometry,
    extract_affine,
)

__all__ = [
    "RunMetrics",
    "SimulationAborted",
    "TrajectoryLog",
    "run",
    "sweep",
]

logger = logging.getLogger(__name__)

FALL_Z_MIN = 0.15
FALL_Z_MAX = 0.9


def _build_columns():
    cols = [("t", "s")]
    cols += [(f"p_B_{ax}", "m") for ax in "xyz"]
    cols += [(f"R_B_{i}{j}", "-") for i in (1, 2, 3) for j in (1, 2, 3)]
    cols += [(f"v_B_{ax}", "m/s") for ax in "xyz"]
    cols += [(f"w_B_{ax}", "rad/s") for ax in "xyz"]
    for leg in LEG_NAMES:
        cols += [(f"q_{leg}_phi", "rad"), (f"q_{leg}_gamma", "rad"), (f"q_{leg}_r", "m")]
    for leg in LEG_NAMES:
        cols += [
            (f"qd_{leg}_phi", "rad/s"),
            (f"qd_{leg}_gamma", "rad/s"),
            (f"qd_{leg}_r", "m/s"),
        ]
    for leg in LEG_NAMES:
        cols += [(f"f_{leg}_{ax}", "N") for ax in "xyz"]
    for foot in (1, 2):
        cols += [(f"fhat_{foot}_{ax}", "N") for ax in "xyz"]
    cols += [(f"h_r_{k}", "N") for k in range(1, 7)]
    cols += [(f"h_w_{k}", "N") for k in range(1, 7)]
    for tag in ("x_r", "x_w"):
        cols += [(f"{tag}_p{ax}", "m") for ax in "xyz"]
        cols += [(f"{tag}_v{ax}", "m/s") for ax in "xyz"]
    cols += [("branch", "-"), ("V", "-")]
    return cols


class TrajectoryLog:
    """Fixed-width numeric log, one row per simulation step."""

    COLUMNS = _build_columns()
    NAMES = [name for name, _ in COLUMNS]
    SLICES = {
        "t": slice(0, 1),
        "p_B": slice(1, 4),
        "R_B": slice(4, 13),
        "v_B": slice(13, 16),
        "w_B": slice(16, 19),
        "q_L": slice(19, 31),
        "qd_L": slice(31, 43),
        "f_true": slice(43, 55),
        "f_est": slice(55, 61),
        "h_r": slice(61, 67),
        "h_w": slice(67, 73),
        "x_r": slice(73, 79),
        "x_w": slice(79, 85),
        "branch": slice(85, 86),
        "V": slice(86, 87),
    }

    def __init__(self, capacity: int):
        self.data = np.zeros((capacity, len(self.NAMES)))
        self.n = 0

    def block(self, name: str) -> np.ndarray:
        """Filled rows of a named column group."""
        return self.data[: self.n, self.SLICES[name]]

    def col(self, name: str) -> np.ndarray:
        return self.data[: self.n, self.NAMES.index(name)]

    def write_csv(self, path) -> None:
        branch_idx = self.NAMES.index("branch")
        lines = [",".join(f"{name} [{unit}]" for name, unit in self.COLUMNS)]
        for i in range(self.n):
            row = self.data[i]
            parts = [repr(float(v)) for v in row[:branch_idx]]
            parts.append(str(int(row[branch_idx])))
            parts.append(repr(float(row[branch_idx + 1])))
            lines.append(",".join(parts))
        Path(path).write_text("\r\n".join(lines) + "\r\n")


@dataclasses.dataclass
class RunMetrics:
    mean_speed: float = 0.0
    distance: float = 0.0
    fall: bool = False
    min_h_w: float = np.inf
    violation_count: int = 0
    violation_time: float = 0.0
    steps_per_second: float = 0.0
    sim_steps: int = 0
    gait_faults: int = 0
    singular_events: int = 0
    aborted: bool = False
    abort_reason: str = ""
    timings: dict = dataclasses.field(default_factory=dict)

    def as_items(self):
        items = [
            ("mean_speed", repr(self.mean_speed)),
            ("distance", repr(self.distance)),
            ("fall", "true" if self.fall else "false"),
            ("min_h_w", repr(self.min_h_w)),
            ("violation_count", str(self.violation_count)),
            ("violation_time", repr(self.violation_time)),
            ("steps_per_second", repr(self.steps_per_second)),
            ("sim_steps", str(self.sim_steps)),
            ("gait_faults", str(self.gait_faults)),
            ("singular_events", str(self.singular_events)),
            ("aborted", "true" if self.aborted else "false"),
            ("abort_reason", self.abort_reason),
        ]
        items += [(f"time_{k}", repr(v)) for k, v in sorted(self.timings.items())]
        return items

    def write(self, path) -> None:
        Path(path).write_text(
            "".join(f"{k} = {v}\n" for k, v in self.as_items())
        )


class SimulationAborted(RuntimeError):
    """Rollout stopped early; carries the partial log and metrics."""

    def __init__(self, reason: str, log: TrajectoryLog, metrics: RunMetrics):
        super().__init__(reason)
        self.log = log
        self.metrics = metrics


def _stance_pair_at(t_gait: float, cfg) -> tuple[int, int]:
    return PAIRS[int(t_gait // cfg.period) % 2]


def run(config: SimConfig):
    """Execute one rollout; returns (TrajectoryLog, RunMetrics).

    A zero v_target means there is nothing to track, so the trot never
    starts: the run stays in the all-feet standing phase (stepping in
    place with a forward step offset would just walk the robot off its
    reference).

    Raises SimulationAborted (partial log attached) if the state leaves
    the finite/representable regime mid-run.
    """
    params = config.robot
    gait = config.gait
    dt = config.dt
    n = config.n_sim_steps
    mu_s = config.ground.mu_s

    state = standing_state(params, body_z=gait.z0, leg_r=gait.z0)
    state.p_B[0] = gait.x0
    state.p_B[1] = gait.y0
    # trot carries the weight on two feet; their static spring depth
    rest_depth = params.m_B * (-params.g[2]) / (2.0 * config.ground.k_gz)
    controller = TrotController(
        gait, params, config.pd, config.pid, state, rest_depth=rest_depth
    )
    log = TrajectoryLog(n)
    x_stand = np.array([gait.x0, gait.y0, gait.z0, 0.0, 0.0, 0.0])
    x_w: np.ndarray | None = None
    timers = dict.fromkeys(
        ("constraints", "governor", "control", "contact", "integrate"), 0.0
    )
    gait_faults = 0
    in_fault = False
    abort_reason = ""

    stepping = gait.v_target != 0.0
    t_wall = time.perf_counter()
    for i in range(n):
        t = i * dt
        settling = t < gait.settle or not stepping
        t_gait = max(t - gait.settle, 0.0)
        governed = config.erg_enabled and not settling

        tic = time.perf_counter()
        x_p = np.concatenate([state.p_B, state.v_B])
        x_r = x_stand if settling else reference_trajectory(t_gait, gait)
        if governed and x_w is None:
            x_w = x_p.copy()  # applied reference starts at the measured state
        front, rear = PAIRS[0] if settling else _stance_pair_at(t_gait, gait)
        foot_pos, foot_vel = feet_kinematics(state, params)
        try:
            geom = StanceGeometry(
                p_B=state.p_B, v_B=state.v_B, p_F1=foot_pos[front], p_F2=foot_pos[rear]
            )
            cs = extract_affine(
                geom,
                config.pd,
                params.m_B,
                params.g,
                mu_s,
                config.f_z_min,
                x_w if governed else x_r,
            )
        except DegenerateSupportError as err:
            abort_reason = f"degenerate support at t={t:.3f}: {err}"
            break
        timers["constraints"] += time.perf_counter() - tic

        tic = time.perf_counter()
        if governed:
            margin = config.erg.constraint_margin
            cs_gov = (
                cs
                if margin == 0.0
                else ConstraintSystem.from_rows(cs.J_r, cs.d_r - margin)
            )
            x_w = restore_feasibility(cs_gov, x_w, x_p)
            x_w, diag = erg_step(cs_gov, x_r, x_w, config.erg)
            branch = diag.branch
            V = diag.V
        else:
            x_w = x_r.copy()
            branch = BRANCH_DISABLED
            V = 0.0
        h_r = cs.h(x_r)
        h_w = cs.h(x_w)
        f_est = cs.forces(x_w)
        timers["governor"] += time.perf_counter() - tic

        tic = time.perf_counter()
        u_L, _, _ = controller.step(t_gait, state, x_w, dt, settling)
        timers["control"] += time.perf_counter() - tic

        tic = time.perf_counter()
        u_g = np.empty((4, 3))
        contact = np.empty(4, dtype=bool)
        for k in range(4):
            gf = ground_force(foot_pos[k], foot_vel[k], config.ground)
            u_g[k] = gf.f
            contact[k] = gf.in_contact
        # quasi-static trot: stance pair should stay loaded, flight is a fault
        if not settling and not (contact[front] or contact[rear]):
            gait_faults += 1
            if not in_fault:
                logger.warning("gait-fault: stance pair airborne at t=%.3f", t)
            in_fault = True
        else:
            in_fault = False
        timers["contact"] += time.perf_counter() - tic

        row = log.data[i]
        row[0] = t
        row[1:4] = state.p_B
        row[4:13] = state.R_B.ravel()
        row[13:16] = state.v_B
        row[16:19] = state.w_B
        row[19:31] = state.q_L
        row[31:43] = state.qd_L
        row[43:55] = u_g.ravel()
        row[55:61] = f_est
        row[61:67] = h_r
        row[67:73] = h_w
        row[73:79] = x_r
        row[79:85] = x_w
        row[85] = branch
        row[86] = V
        log.n = i + 1

        tic = time.perf_counter()
        try:
            state = rk4_step(state, u_L, u_g, dt, params)
        except NonFiniteStateError as err:
            abort_reason = f"non-finite state at t={t:.3f}: {err}"
            break
        timers["integrate"] += time.perf_counter() - tic
    elapsed = time.perf_counter() - t_wall

    metrics = _compute_metrics(log, config, elapsed, timers)
    metrics.gait_faults = gait_faults
    metrics.singular_events = controller.singular_events
    if abort_reason:
        metrics.aborted = True
        metrics.abort_reason = abort_reason
        raise SimulationAborted(abort_reason, log, metrics)
    return log, metrics


def _compute_metrics(log, config, elapsed, timers) -> RunMetrics:
    m = RunMetrics(sim_steps=log.n, timings=dict(timers))
    if log.n == 0:
        return m
    t = log.col("t")
    p = log.block("p_B")
    m.distance = float(p[-1, 0] - p[0, 0])
    m.fall = bool(np.any((p[:, 2] < FALL_Z_MIN) | (p[:, 2] > FALL_Z_MAX)))
    m.steps_per_second = log.n / elapsed if elapsed > 0 else 0.0

    settle = config.gait.settle
    gait_rows = t >= settle
    if np.count_nonzero(gait_rows) >= 2:
        tg = t[gait_rows]
        xg = p[gait_rows, 0]
        m.mean_speed = float((xg[-1] - xg[0]) / (tg[-1] - tg[0]))

    h_w = log.block("h_w")
    governed = log.col("branch") != BRANCH_DISABLED
    rows = governed if governed.any() else gait_rows
    if rows.any():
        m.min_h_w = float(h_w[rows].min())

    # true-GRF pyramid violations on the supporting feet
    mu_s = config.ground.mu_s
    f = log.block("f_true").reshape(log.n, 4, 3)
    k = np.floor_divide(np.maximum(t - settle, 0.0), config.gait.period).astype(int)
    pair = np.where(gait_rows, k % 2, 0)
    stance_mask = np.zeros((log.n, 4), dtype=bool)
    for p_idx, (front, rear) in enumerate(PAIRS):
        sel = pair == p_idx
        stance_mask[sel, front] = True
        stance_mask[sel, rear] = True
    stance_mask[~gait_rows] = True  # settling: all four feet support
    if config.gait.v_target == 0.0:
        stance_mask[:] = True  # standing run, no stepping ever starts
    # a foot below the stance-load threshold is not meaningfully in
    # stance (same gate the governor applies when building rows), so
    # its friction ratio is not counted against the pyramid
    loaded = f[:, :, 2] > config.f_z_min
    slip = (np.abs(f[:, :, 0]) > mu_s * f[:, :, 2] + 1e-9) | (
        np.abs(f[:, :, 1]) > mu_s * f[:, :, 2] + 1e-9
    )
    bad = stance_mask & loaded & slip
    m.violation_count = int(bad.sum())
    m.violation_time = float(bad.any(axis=1).sum()) * config.dt
    return m


# ---------------------------------------------------------------------------
# sweeps


def _sweep_one(args):
    entries, param, value = args
    row = {"param": param, "value": value, "error": ""}
    try:
        cfg = make_config(dict(entries, **{param: value}))
        _, metrics = run(cfg)
        row.update(metrics.as_items())
    except (ConfigError, SimulationAborted) as err:
        row["error"] = str(err)
    return row


def sweep(entries: dict, param: str, values, max_workers: int | None = None):
    """One independent run per value; per-value errors recorded, not fatal.

    Parallelism: max_workers, else ERGSIM_THREADS, else CPU count.
    """
    jobs = [(dict(entries), param, str(v)) for v in values]
    if not jobs:
        return []
    if max_workers is None:
        env = os.environ.get("ERGSIM_THREADS", "")
        max_workers = int(env) if env else (os.cpu_count() or 1)
    max_workers = max(1, min(max_workers, len(jobs)))
    if max_workers == 1:
        return [_sweep_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_sweep_one, jobs))


def write_sweep_csv(rows, path) -> None:
    if not rows:
        Path(path).write_text("param,value,error\r\n")
        return
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(str(row.get(k, "")) for k in keys))
    Path(path).write_text("\r\n".join(lines) + "\r\n")
