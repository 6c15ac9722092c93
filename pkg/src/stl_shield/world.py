"""Randomised reactive grid world: obstacles, goals, path metric, expert planner.

The workspace [-1.6, 1.6] x [-1, 1] carries an 8 x 5 grid of 0.4 m cells with
8 static obstacle cells, 4 scripted moving obstacles, 3 goal cells, and 4 home
cells fixed at the grid corners.  The task-level robustness of a trajectory is

    rho(s, t) = min( P(anchor) - P(s(t+10)),  min over [t, t+10] of OA(s) )

where P is the Euclidean distance to the goal selected by cell-count BFS from
the anchor state, and OA is the clearance margin (infinity-norm 0.2 m to
static cells, 2-norm 0.18 m to moving obstacles frozen at evaluation time).

Moving obstacles follow seeded waypoint tours and hold position whenever the
ego agent is within 0.2 m, so their positions are trial state: evaluators use
the environment's current snapshot as the frozen instant.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import UnicycleState
from .signals import TIME_TOL, Signal

X_MIN, X_MAX = -1.6, 1.6
Y_MIN, Y_MAX = -1.0, 1.0
COLS, ROWS = 8, 5
CELL = 0.4
N_CELLS = COLS * ROWS
HOME_CELLS = (0, COLS - 1, (ROWS - 1) * COLS, ROWS * COLS - 1)

STATIC_CLEARANCE = 0.2  # infinity-norm margin to static cell centers
MOVING_CLEARANCE = 0.18  # 2-norm margin to moving obstacles
FREEZE_RADIUS = 0.2  # moving obstacles hold within this distance of the ego
LOOKAHEAD = 10.0  # progress/avoidance window of the task specification

N_STATIC = 8
N_MOVING = 4
N_GOALS = 3
DEFAULT_OBSTACLE_SPEED = 0.1
GENERATION_LIMIT = 10_000


class InfeasiblePathError(RuntimeError):
    """No grid path exists from the anchor to any goal in the active set."""


def cell_center(idx: int) -> np.ndarray:
    row, col = divmod(idx, COLS)
    return np.array([X_MIN + (col + 0.5) * CELL, Y_MIN + (row + 0.5) * CELL])


def cell_of(p: np.ndarray) -> int:
    col = min(max(int((p[0] - X_MIN) // CELL), 0), COLS - 1)
    row = min(max(int((p[1] - Y_MIN) // CELL), 0), ROWS - 1)
    return row * COLS + col


def cell_neighbors(idx: int) -> list[int]:
    row, col = divmod(idx, COLS)
    out = []
    if col > 0:
        out.append(idx - 1)
    if col < COLS - 1:
        out.append(idx + 1)
    if row > 0:
        out.append(idx - COLS)
    if row < ROWS - 1:
        out.append(idx + COLS)
    return out


@dataclass(frozen=True)
class BasingSchedule:
    """External Boolean toggling the active goal set between goals and homes."""

    toggle_times: tuple[float, ...] = ()
    initial: bool = False

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.toggle_times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("toggle times must be strictly increasing")
        object.__setattr__(self, "toggle_times", times)

    def active(self, t: float) -> bool:
        flips = bisect.bisect_right(self.toggle_times, t)
        return self.initial ^ (flips % 2 == 1)


@dataclass
class MovingObstacle:
    """Scripted agent looping a waypoint tour at constant speed.

    The tour is stored as cell indices; the position is piecewise linear along
    the cell centers with the loop closed back to the first cell.  `progress`
    (meters of arc length) is the only mutable trial state.
    """

    cells: tuple[int, ...]
    speed: float = DEFAULT_OBSTACLE_SPEED
    freeze_radius: float = FREEZE_RADIUS
    progress: float = 0.0

    def __post_init__(self) -> None:
        if self.speed <= 0:
            raise ValueError("obstacle speed must be positive")
        pts = np.array([cell_center(c) for c in self.cells])
        if len(pts) > 1:
            loop = np.vstack([pts, pts[:1]])
            seg = np.linalg.norm(np.diff(loop, axis=0), axis=1)
        else:
            loop = pts
            seg = np.zeros(0)
        self._loop = loop
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])
        self._total = float(self._cum[-1])

    def position(self) -> np.ndarray:
        if self._total == 0.0:
            return self._loop[0].copy()
        arc = self.progress % self._total
        k = min(int(np.searchsorted(self._cum, arc, side="right")) - 1, len(self._loop) - 2)
        seg_len = self._cum[k + 1] - self._cum[k]
        frac = (arc - self._cum[k]) / seg_len
        return (1.0 - frac) * self._loop[k] + frac * self._loop[k + 1]


@dataclass
class Environment:
    """One trial's world; moving-obstacle progress is the only mutable state."""

    seed: int
    static_cells: tuple[int, ...]
    goal_cells: tuple[int, ...]
    ego_init: UnicycleState
    moving: list[MovingObstacle]
    home_cells: tuple[int, ...] = HOME_CELLS

    def __post_init__(self) -> None:
        self.static_centers = np.array([cell_center(c) for c in self.static_cells])

    def moving_positions(self) -> np.ndarray:
        if not self.moving:
            return np.zeros((0, 2))
        return np.array([m.position() for m in self.moving])


def _random_walk_tour(rng: np.random.Generator, start: int, free: set[int], length: int) -> tuple[int, ...]:
    tour = [start]
    here = start
    for _ in range(length - 1):
        options = [c for c in cell_neighbors(here) if c in free]
        if not options:
            break
        here = int(options[rng.integers(len(options))])
        tour.append(here)
    # Ping-pong back toward the start so the closed loop only crosses free cells.
    return tuple(tour + tour[-2:0:-1])


def _flood(static: set[int], source: int) -> set[int]:
    seen = {source}
    frontier = [source]
    while frontier:
        nxt = []
        for cell in frontier:
            for nb in cell_neighbors(cell):
                if nb not in seen and nb not in static:
                    seen.add(nb)
                    nxt.append(nb)
        frontier = nxt
    return seen


def generate_environment(seed: int, obstacle_speed: float = DEFAULT_OBSTACLE_SPEED) -> Environment:
    """Rejection-sample a valid environment, deterministically in the seed.

    Valid means: 8 distinct static cells; ego start, 4 moving-obstacle starts,
    and 3 goal cells in distinct non-static cells; and at least one grid path
    from the ego cell to some goal.
    """
    rng = np.random.default_rng(int(seed))
    for _ in range(GENERATION_LIMIT):
        picks = rng.permutation(N_CELLS)
        statics = tuple(sorted(int(c) for c in picks[:N_STATIC]))
        goals = tuple(sorted(int(c) for c in picks[N_STATIC : N_STATIC + N_GOALS]))
        ego_cell = int(picks[N_STATIC + N_GOALS])
        mover_starts = [int(c) for c in picks[N_STATIC + N_GOALS + 1 : N_STATIC + N_GOALS + 1 + N_MOVING]]

        reachable = _flood(set(statics), ego_cell)
        if not any(g in reachable for g in goals):
            continue

        free = set(range(N_CELLS)) - set(statics)
        movers = []
        for start in mover_starts:
            length = int(rng.integers(4, 9))
            movers.append(MovingObstacle(_random_walk_tour(rng, start, free, length), speed=obstacle_speed))
        ego_xy = cell_center(ego_cell)
        theta = float(rng.uniform(-math.pi, math.pi))
        return Environment(
            seed=int(seed),
            static_cells=statics,
            goal_cells=goals,
            ego_init=UnicycleState(float(ego_xy[0]), float(ego_xy[1]), theta),
            moving=movers,
        )
    raise RuntimeError(f"environment generation failed after {GENERATION_LIMIT} rejections")


def env_to_json(env: Environment) -> str:
    """Canonical serialisation; regeneration from the seed reproduces it exactly."""
    payload = {
        "seed": env.seed,
        "workspace": [[X_MIN, X_MAX], [Y_MIN, Y_MAX]],
        "grid": {"cols": COLS, "rows": ROWS},
        "static_cells": list(env.static_cells),
        "goal_cells": list(env.goal_cells),
        "home_cells": list(env.home_cells),
        "ego": {
            "px": env.ego_init.px,
            "py": env.ego_init.py,
            "theta": env.ego_init.theta,
        },
        "moving": [
            {"cells": list(m.cells), "speed": m.speed, "freeze_radius": m.freeze_radius}
            for m in env.moving
        ],
    }
    return json.dumps(payload, sort_keys=True)


def env_from_json(text: str) -> Environment:
    data = json.loads(text)
    ego = data["ego"]
    return Environment(
        seed=int(data["seed"]),
        static_cells=tuple(data["static_cells"]),
        goal_cells=tuple(data["goal_cells"]),
        ego_init=UnicycleState(ego["px"], ego["py"], ego["theta"]),
        moving=[
            MovingObstacle(tuple(m["cells"]), speed=m["speed"], freeze_radius=m["freeze_radius"])
            for m in data["moving"]
        ],
        home_cells=tuple(data["home_cells"]),
    )


# ---------------------------------------------------------------------------
# Path metric and clearance
# ---------------------------------------------------------------------------


def _bfs_distances(env: Environment, source: int, blocked: frozenset[int]) -> dict[int, int]:
    """Cell counts from the source over 4-connected free cells.

    The source itself is always expandable so an agent standing in a blocked
    cell can still plan its way out.
    """
    banned = set(env.static_cells) | set(blocked)
    dist = {source: 0}
    frontier = [source]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for cell in frontier:
            for nb in cell_neighbors(cell):
                if nb not in dist and nb not in banned:
                    dist[nb] = d
                    nxt.append(nb)
        frontier = nxt
    return dist


def bfs_goal_choice(
    env: Environment,
    start: np.ndarray,
    goal_cells: tuple[int, ...],
    blocked: frozenset[int] = frozenset(),
) -> tuple[np.ndarray, int] | None:
    """Nearest goal by traversed cell count from the start point's cell.

    Ties break toward the lowest row-major cell index; returns None when no
    goal in the set is reachable.
    """
    dist = _bfs_distances(env, cell_of(start), blocked)
    best: tuple[int, int] | None = None
    for g in sorted(goal_cells):
        if g in dist and (best is None or dist[g] < best[0]):
            best = (dist[g], g)
    if best is None:
        return None
    return cell_center(best[1]), best[0]


def bfs_path(
    env: Environment, start_cell: int, target_cell: int, blocked: frozenset[int] = frozenset()
) -> list[int] | None:
    """Shortest 4-connected cell path (inclusive of endpoints), or None."""
    banned = set(env.static_cells) | set(blocked)
    parent: dict[int, int] = {start_cell: start_cell}
    frontier = [start_cell]
    while frontier and target_cell not in parent:
        nxt = []
        for cell in frontier:
            for nb in cell_neighbors(cell):
                if nb not in parent and nb not in banned:
                    parent[nb] = cell
                    nxt.append(nb)
        frontier = nxt
    if target_cell not in parent:
        return None
    path = [target_cell]
    while path[-1] != start_cell:
        path.append(parent[path[-1]])
    return path[::-1]


def path_distance(
    env: Environment,
    w: np.ndarray,
    anchor: np.ndarray,
    goal_cells: tuple[int, ...],
    blocked: frozenset[int] = frozenset(),
) -> float:
    """Distance ||w - c|| to the goal center chosen by BFS from the anchor.

    The goal choice is anchored at the (planar) anchor point, not at w, so the
    metric is consistent across a whole lookahead window.
    """
    choice = bfs_goal_choice(env, anchor, goal_cells, blocked)
    if choice is None:
        raise InfeasiblePathError(
            f"no feasible path from anchor {np.asarray(anchor)[:2]} to goals {goal_cells}"
        )
    c, _ = choice
    return float(np.linalg.norm(np.asarray(w, dtype=float)[:2] - c))


def obstacle_margin_many(env: Environment, pts: np.ndarray) -> np.ndarray:
    """Clearance margin at each planar point, obstacles frozen at the current snapshot."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))[:, :2]
    static_inf = np.abs(pts[:, None, :] - env.static_centers[None, :, :]).max(axis=2)
    margins = static_inf.min(axis=1) - STATIC_CLEARANCE
    mov = env.moving_positions()
    if len(mov):
        d = np.linalg.norm(pts[:, None, :] - mov[None, :, :], axis=2).min(axis=1)
        margins = np.minimum(margins, d - MOVING_CLEARANCE)
    return margins


def obstacle_margin(env: Environment, p: np.ndarray, t: float | None = None) -> float:
    """Clearance margin at one point; `t` names the frozen instant and the
    environment's current obstacle snapshot is taken to be that instant."""
    return float(obstacle_margin_many(env, np.asarray(p, dtype=float)[None, :2])[0])


def _planar(state) -> np.ndarray:
    if isinstance(state, UnicycleState):
        return np.array([state.px, state.py])
    return np.asarray(state, dtype=float).ravel()[:2]


def spec_robustness(env: Environment, s: Signal, t: float, basing: bool, x0) -> float:
    """Task robustness: min of 10 s path progress and worst clearance.

    Progress compares the path distance of the signal's position at t + 10
    against the anchor state x0; clearance is minimised over [t, t + 10] on
    the signal grid with moving obstacles frozen at the evaluation instant.
    The active goal set is the homes when the basing signal is up, else the
    goals.
    """
    if s.horizon < t + LOOKAHEAD - TIME_TOL:
        raise ValueError(
            f"signal horizon {s.horizon} too short for lookahead [{t}, {t + LOOKAHEAD}]"
        )
    goal_cells = env.home_cells if basing else env.goal_cells
    anchor = _planar(x0)
    end = min(t + LOOKAHEAD, s.horizon)
    progress = path_distance(env, anchor, anchor, goal_cells) - path_distance(
        env, s.sample_at(end)[:2], anchor, goal_cells
    )

    lo, hi = s.grid_indices_in(t, end)
    ts = [s.t0 + k * s.dt for k in range(lo, hi + 1)]
    for endpoint in (t, end):
        if not ts or endpoint < ts[0] - TIME_TOL or endpoint > ts[-1] + TIME_TOL:
            ts.append(endpoint)
    clearance = float(obstacle_margin_many(env, s.sample_many(np.sort(ts))[:, :2]).min())
    return float(min(progress, clearance))


# ---------------------------------------------------------------------------
# Expert planner
# ---------------------------------------------------------------------------


def _rollout(
    env: Environment,
    start_xy: np.ndarray,
    theta0: float,
    path_cells: list[int],
    goal_center: np.ndarray,
    speed: float,
    dt: float,
    horizon: float,
) -> Signal:
    """Constant-speed single-integrator traversal of the cell path, lifted to
    (x, y, theta) with the heading along the motion direction."""
    waypoints = [np.asarray(start_xy, dtype=float)]
    waypoints += [cell_center(c) for c in path_cells[1:]]
    if len(path_cells) <= 1:
        waypoints.append(goal_center.copy())

    n = int(round(horizon / dt)) + 1
    pos = np.empty((n, 2))
    pos[0] = waypoints[0]
    seg = 0
    here = waypoints[0].copy()
    for k in range(1, n):
        budget = speed * dt
        while budget > 1e-12 and seg < len(waypoints) - 1:
            leg = waypoints[seg + 1] - here
            leg_len = float(np.linalg.norm(leg))
            if leg_len <= 1e-12:
                seg += 1
                continue
            if budget >= leg_len:
                here = waypoints[seg + 1].copy()
                budget -= leg_len
                seg += 1
            else:
                here = here + (budget / leg_len) * leg
                budget = 0.0
        pos[k] = here

    # Stop short of any clearance violation along the traversal (the tail of a
    # route can shave an obstacle even when its cells were routable, e.g. an
    # obstacle shadowing part of the goal cell).
    margins = obstacle_margin_many(env, pos)
    bad = np.flatnonzero(margins < 0.005)
    if len(bad):
        stop = max(int(bad[0]) - 2, 0)
        pos[stop + 1 :] = pos[stop]

    # Never end the window farther (in the metric) from the chosen goal than
    # the anchor: park at the last sample that preserves non-negative progress.
    d = np.linalg.norm(pos - goal_center, axis=1)
    ok = np.flatnonzero(d <= d[0])
    k_star = int(ok[-1])
    pos[k_star + 1 :] = pos[k_star]

    theta = np.empty(n)
    prev = theta0
    for k in range(n):
        delta = pos[min(k + 1, n - 1)] - pos[min(k, n - 2)]
        if float(np.hypot(delta[0], delta[1])) > 1e-12:
            prev = math.atan2(delta[1], delta[0])
        theta[k] = prev
    return Signal(0.0, dt, np.column_stack([pos, theta]))


def _park_plan(x_now: UnicycleState, dt: float, horizon: float) -> Signal:
    n = int(round(horizon / dt)) + 1
    samples = np.tile([x_now.px, x_now.py, x_now.theta], (n, 1))
    return Signal(0.0, dt, samples)


def _blocked_cells(env: Environment, exempt: tuple[int, ...], inflate: float) -> frozenset[int]:
    """Cells too close to a current moving-obstacle position to route through.

    The route's own endpoints are exempt: a plan must start at the ego and end
    at the goal center regardless, and verification decides actual safety.
    """
    mov = env.moving_positions()
    if not len(mov):
        return frozenset()
    blocked = set()
    for cell in range(N_CELLS):
        if cell in exempt:
            continue
        gap = float(np.linalg.norm(mov - cell_center(cell)[None, :], axis=1).min())
        if gap < MOVING_CLEARANCE + inflate:
            blocked.add(cell)
    return frozenset(blocked)


def expert_plan(
    env: Environment,
    x_now: UnicycleState,
    t_now: float,
    basing: bool,
    horizon: float = LOOKAHEAD,
    speed: float = 0.15,
    dt: float = 1.0 / 30.0,
) -> Signal | None:
    """Plan a satisfying expert signal from the current state, or None.

    The route targets the goal the path metric itself selects (progress is
    measured against that goal's center), over cells kept clear of the current
    moving-obstacle positions.  Candidates are verified against the task
    robustness and retried with a wider berth; when the full route is
    obstructed, the planner advances along the unobstructed prefix of the
    static route instead, and a hold-in-place plan (zero progress, satisfying
    whenever the current pose is clear) is the final fallback.
    """
    goal_cells = env.home_cells if basing else env.goal_cells
    anchor = np.array([x_now.px, x_now.py])
    choice = bfs_goal_choice(env, anchor, goal_cells)
    if choice is not None:
        goal_center, _ = choice
        target_cell = cell_of(goal_center)
        start_cell = cell_of(anchor)

        exempt = (start_cell, target_cell)
        blocked = _blocked_cells(env, exempt, 0.12)
        candidates: list[list[int]] = []

        def consider(path: list[int] | None) -> None:
            if path is not None and len(path) >= 1 and path not in candidates:
                candidates.append(path)

        consider(bfs_path(env, start_cell, target_cell, blocked))
        consider(bfs_path(env, start_cell, target_cell, _blocked_cells(env, exempt, 0.18)))
        static_path = bfs_path(env, start_cell, target_cell)
        if static_path is not None:
            # Inch along the unobstructed prefix of the static route.
            cut = next((i for i, c in enumerate(static_path) if c in blocked), len(static_path))
            if cut >= 2:
                consider(static_path[:cut])
        # Sidestep exits: hop to an adjacent free cell first, then route onward
        # without re-threading the start cell.  The lookahead only constrains
        # where the window ends, so a detour that clears a close-by (possibly
        # frozen) obstacle is still satisfying.
        for hop in cell_neighbors(start_cell):
            if hop in env.static_cells:
                continue
            onward = bfs_path(env, hop, target_cell, blocked | {start_cell})
            if onward is not None:
                consider([start_cell] + onward)

        # Keep the verified candidate that makes the most progress, favouring
        # clearance on near-ties; first-verified would let a truncated detour
        # (zero progress) shadow a real route.
        best_plan = None
        best_score = -math.inf
        p_anchor = path_distance(env, anchor, anchor, goal_cells)
        for path in candidates:
            plan = _rollout(env, anchor, x_now.theta, path, goal_center, speed, dt, horizon)
            rho = spec_robustness(env, plan, 0.0, basing, x_now)
            if rho < 0.0:
                continue
            progress = p_anchor - float(np.linalg.norm(plan.samples[-1, :2] - goal_center))
            if progress + rho > best_score:
                best_score = progress + rho
                best_plan = plan
        if best_plan is not None and best_score > 0.0:
            return best_plan
    plan = _park_plan(x_now, dt, horizon)
    try:
        if spec_robustness(env, plan, 0.0, basing, x_now) >= 0.0:
            return plan
    except InfeasiblePathError:
        return None
    return None


def advance_obstacles(env: Environment, dt: float, ego_pos: np.ndarray) -> np.ndarray:
    """Advance each moving obstacle along its tour by speed * dt, holding any
    obstacle within its freeze radius of the ego; returns the new positions."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ego = np.asarray(ego_pos, dtype=float)[:2]
    for m in env.moving:
        if float(np.linalg.norm(m.position() - ego)) > m.freeze_radius:
            m.progress += m.speed * dt
    return env.moving_positions()
