"""Grid-canvas macro placement MDP.

Macros are placed one per step, largest first, on the lower-left corner of
a grid cell. Standard-cell clusters are positioned afterwards by
force-directed relaxation, and only the final step earns a reward.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from rlplace.netlist import ClusteredNetlist, Kind, Netlist

log = logging.getLogger(__name__)

MAX_GRID = 32
_EPS = 1e-12


class IllegalActionError(ValueError):
    def __init__(self, action, reason="mask is false"):
        super().__init__(f"illegal action {action}: {reason}")
        self.action = action


class DeadEndError(RuntimeError):
    """No legal cell remains for the macro being placed."""


class RewardMode(str, enum.Enum):
    LITERAL = "literal"
    BASELINE = "baseline"


@dataclass(frozen=True)
class CanvasConfig:
    rows: int = 16
    cols: int = 16
    cell_w_um: float = 10.0
    cell_h_um: float = 10.0
    density_cap: float = 1.0
    congestion_weight: float = 1.0
    reward_mode: RewardMode = RewardMode.BASELINE
    refine_iters: int = 200
    refine_tol: float | None = None
    baseline_samples: int = 32
    baseline_seed: int = 0

    def __post_init__(self):
        if not (1 <= self.rows <= MAX_GRID and 1 <= self.cols <= MAX_GRID):
            raise ValueError(f"grid must be between 1x1 and {MAX_GRID}x{MAX_GRID}, got {self.rows}x{self.cols}")
        if self.cell_w_um <= 0 or self.cell_h_um <= 0:
            raise ValueError("cell dimensions must be positive")
        if not 0 < self.density_cap <= 1.0:
            raise ValueError("density_cap must lie in (0, 1]")
        if self.congestion_weight < 0:
            raise ValueError("congestion_weight must be >= 0")
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))

    @property
    def width_um(self) -> float:
        return self.cols * self.cell_w_um

    @property
    def height_um(self) -> float:
        return self.rows * self.cell_h_um

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    @property
    def tol(self) -> float:
        return self.refine_tol if self.refine_tol is not None else 1e-3 * self.cell_w_um

    def replace(self, **changes) -> "CanvasConfig":
        return replace(self, **changes)


def canvas_for(netlist: Netlist | ClusteredNetlist, rows: int = 16, cols: int = 16, utilization: float = 0.5, **kw) -> CanvasConfig:
    """Square cells sized so the macros' rounded-up footprints cover at most
    ``utilization`` of the grid cells."""
    if not 0 < utilization <= 1:
        raise ValueError("utilization must lie in (0, 1]")
    macros = netlist.macros
    area = math.fsum(m.area for m in macros)
    if area <= 0:
        return CanvasConfig(rows=rows, cols=cols, **kw)
    side = math.sqrt(area / (utilization * rows * cols))
    biggest = max(max(m.width_um, m.height_um) for m in macros)
    side = max(side, biggest / min(rows, cols))
    budget = utilization * rows * cols

    def cells_used(s):
        return sum(math.ceil(m.width_um / s - 1e-9) * math.ceil(m.height_um / s - 1e-9) for m in macros)

    # footprints round up to whole cells, so grow until they fit the budget
    while cells_used(side) > budget:
        side *= 1.01
    return CanvasConfig(rows=rows, cols=cols, cell_w_um=side, cell_h_um=side, **kw)


def _cover(length: float, cell: float) -> np.ndarray:
    """Per-cell covered fraction for a span starting at a cell boundary."""
    k = max(1, math.ceil(length / cell - 1e-9))
    j = np.arange(k)
    return np.clip((length - j * cell) / cell, 0.0, 1.0)


def port_positions(ports, cfg: CanvasConfig) -> np.ndarray:
    """Ports sit evenly spaced around the canvas boundary, counter-clockwise from the origin, in id order."""
    n = len(ports)
    w, h = cfg.width_um, cfg.height_um
    per = 2 * (w + h)
    out = np.zeros((n, 2))
    for k in range(n):
        s = (k + 0.5) * per / n
        if s < w:
            out[k] = (s, 0.0)
        elif s < w + h:
            out[k] = (w, s - w)
        elif s < 2 * w + h:
            out[k] = (w - (s - w - h), h)
        else:
            out[k] = (0.0, h - (s - 2 * w - h))
    return out


def hpwl(pin_xy: np.ndarray, pin_net: np.ndarray, num_nets: int | None = None) -> float:
    """Sum over nets of bounding-box half perimeter, in µm."""
    if len(pin_net) == 0:
        return 0.0
    if num_nets is None:
        num_nets = int(pin_net.max()) + 1
    lo = np.full((num_nets, 2), np.inf)
    hi = np.full((num_nets, 2), -np.inf)
    np.minimum.at(lo, pin_net, pin_xy)
    np.maximum.at(hi, pin_net, pin_xy)
    span = hi - lo
    span = span[np.isfinite(span).all(axis=1)]
    return float(span.sum())


def net_boxes(pin_xy: np.ndarray, pin_net: np.ndarray, num_nets: int) -> np.ndarray:
    """(num_nets, 4) array of x0, y0, x1, y1; rows of pinless nets are NaN."""
    lo = np.full((num_nets, 2), np.inf)
    hi = np.full((num_nets, 2), -np.inf)
    if len(pin_net):
        np.minimum.at(lo, pin_net, pin_xy)
        np.maximum.at(hi, pin_net, pin_xy)
    boxes = np.hstack([lo, hi])
    boxes[~np.isfinite(boxes).all(axis=1)] = np.nan
    return boxes


def _axis_share(lo, hi, cell, count):
    """Fraction of each [lo, hi] span falling in each of ``count`` cells."""
    edges = np.arange(count) * cell
    span = hi - lo
    overlap = np.clip(np.minimum(hi[:, None], edges + cell) - np.maximum(lo[:, None], edges), 0.0, None)
    share = np.divide(overlap, span[:, None], out=np.zeros_like(overlap), where=span[:, None] > 0)
    flat = span <= 0
    if flat.any():
        idx = np.clip((lo[flat] / cell).astype(int), 0, count - 1)
        share[flat] = 0.0
        share[np.flatnonzero(flat), idx] = 1.0
    return share


def demand_map(pin_xy: np.ndarray, pin_net: np.ndarray, num_nets: int, cfg: CanvasConfig) -> np.ndarray:
    """RUDY routing demand per grid cell, normalized by cell perimeter.

    Each net spreads its half perimeter uniformly over its bounding box.
    """
    grid = np.zeros((cfg.rows, cfg.cols))
    if num_nets == 0 or len(pin_net) == 0:
        return grid
    xy = np.column_stack([np.clip(pin_xy[:, 0], 0, cfg.width_um), np.clip(pin_xy[:, 1], 0, cfg.height_um)])
    boxes = net_boxes(xy, pin_net, num_nets)
    boxes = boxes[np.isfinite(boxes).all(axis=1)]
    wire = (boxes[:, 2] - boxes[:, 0]) + (boxes[:, 3] - boxes[:, 1])
    keep = wire > 0
    boxes, wire = boxes[keep], wire[keep]
    if len(wire) == 0:
        return grid
    fx = _axis_share(boxes[:, 0], boxes[:, 2], cfg.cell_w_um, cfg.cols)
    fy = _axis_share(boxes[:, 1], boxes[:, 3], cfg.cell_h_um, cfg.rows)
    grid = np.einsum("n,nr,nc->rc", wire, fy, fx)
    return grid / (2.0 * (cfg.cell_w_um + cfg.cell_h_um))


def congestion(pin_xy: np.ndarray, pin_net: np.ndarray, num_nets: int, cfg: CanvasConfig) -> float:
    """Mean demand of the most congested 10% of grid cells."""
    d = demand_map(pin_xy, pin_net, num_nets, cfg).ravel()
    k = max(1, math.ceil(0.1 * d.size))
    top = np.partition(d, d.size - k)[d.size - k :]
    return float(top.mean())


@dataclass
class RefineResult:
    xy: np.ndarray
    objective: list[float]
    converged: bool
    sweeps: int


def quadratic_objective(xy: np.ndarray, weights: np.ndarray) -> float:
    diff = xy[:, None, :] - xy[None, :, :]
    return float(0.5 * np.sum(weights * np.sum(diff * diff, axis=-1)))


def force_directed_refine(
    anchors: np.ndarray,
    weights: np.ndarray,
    start: np.ndarray,
    bounds: tuple[float, float],
    iters: int = 200,
    tol: float = 1e-2,
) -> RefineResult:
    """Jacobi relaxation of movable nodes toward their neighbours' weighted centroid.

    ``weights`` is the symmetric connectivity over ``[movable..., anchors...]``
    with the movable block first; ``start`` gives initial movable positions.
    A node without connections stays where it starts.
    """
    k = len(start)
    xy = np.array(start, dtype=float, copy=True)
    if k == 0:
        return RefineResult(xy, [], True, 0)
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    w_mm, w_ma = w[:k, :k], w[:k, k:]
    deg = w[:k].sum(axis=1)
    free = deg > 0
    bound_hi = np.array(bounds, dtype=float)

    def objective(p):
        return quadratic_objective(np.vstack([p, anchors]), w)

    history = [objective(xy)]
    converged = False
    sweeps = 0
    for sweeps in range(1, iters + 1):
        pull = w_mm @ xy + w_ma @ anchors
        new = xy.copy()
        new[free] = pull[free] / deg[free, None]
        new = np.clip(new, 0.0, bound_hi)
        move = np.abs(new - xy).max()
        xy = new
        history.append(objective(xy))
        if history[-1] > history[-2] * (1 + 1e-12) + 1e-9:
            raise AssertionError(f"quadratic objective rose from {history[-2]} to {history[-1]} at sweep {sweeps}")
        if move <= tol:
            converged = True
            break
    return RefineResult(xy, history, converged, sweeps)


@dataclass(frozen=True)
class RewardBreakdown:
    hpwl_um: float
    congestion: float
    density_peak: float
    reward: float
    refine_converged: bool = True

    def to_dict(self) -> dict:
        return {
            "hpwl_um": self.hpwl_um,
            "congestion": self.congestion,
            "density_peak": self.density_peak,
            "reward": self.reward,
            "refine_converged": self.refine_converged,
        }


ZERO_REWARD = RewardBreakdown(0.0, 0.0, 0.0, 0.0)


def compose_reward(h: float, c: float, cfg: CanvasConfig, baseline_hpwl: float | None = None) -> float:
    """Terminal reward from wirelength ``h`` and congestion ``c``.

    literal: (-h - λc) / h, which is exactly -1 whenever c is 0.
    baseline: -(h + λc) / mean random-placement HPWL.
    """
    lam = cfg.congestion_weight
    if cfg.reward_mode is RewardMode.LITERAL:
        if h == 0:
            return -1.0 - lam * c
        return (-h - lam * c) / h
    if baseline_hpwl is None:
        raise ValueError("baseline mode needs the random-placement HPWL")
    return -(h + lam * c) / (baseline_hpwl if baseline_hpwl > 0 else 1.0)


@dataclass
class Placement:
    """A complete placement with its metrics."""

    macro_cells: dict[int, tuple[int, int]]
    macro_xy: dict[int, tuple[float, float]]
    cluster_xy: dict[int, tuple[float, float]]
    breakdown: RewardBreakdown
    refine_history: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "macros": [
                {"id": m, "row": r, "col": c, "x_um": self.macro_xy[m][0], "y_um": self.macro_xy[m][1]}
                for m, (r, c) in sorted(self.macro_cells.items())
            ],
            "clusters": [{"id": k, "x_um": x, "y_um": y} for k, (x, y) in sorted(self.cluster_xy.items())],
            "reward": self.breakdown.to_dict(),
        }


class PlacementProblem:
    """Precomputed geometry and connectivity for one clustered netlist on one canvas."""

    def __init__(self, clustered: ClusteredNetlist | Netlist, cfg: CanvasConfig):
        if isinstance(clustered, Netlist):
            from rlplace.netlist import cluster_stdcells

            clustered = cluster_stdcells(clustered, max(1, len(clustered.stdcells)))
        self.clustered = clustered
        self.cfg = cfg
        macros = clustered.macros
        # big-first, ties by id
        self.order = [m.id for m in sorted(macros, key=lambda m: (-m.area, m.id))]
        if len(self.order) > cfg.num_cells:
            raise ValueError(f"{len(self.order)} macros cannot fit on {cfg.rows}x{cfg.cols} cells")
        self.macro_index = {m: i for i, m in enumerate(self.order)}
        self.footprints = []
        for mid in self.order:
            node = clustered.original.node(mid)
            fx = _cover(node.width_um, cfg.cell_w_um)
            fy = _cover(node.height_um, cfg.cell_h_um)
            if len(fx) > cfg.cols or len(fy) > cfg.rows:
                raise ValueError(f"macro {mid} ({node.width_um}x{node.height_um} µm) is larger than the canvas")
            self.footprints.append(np.outer(fy, fx))
        self.cluster_ids = [n.id for n in clustered.cluster_nodes]
        self.port_ids = [n.id for n in sorted(clustered.ports, key=lambda n: n.id)]
        self.port_xy = port_positions(self.port_ids, cfg)
        # object layout: clusters, macros (in placement order), ports
        self.obj_ids = self.cluster_ids + self.order + self.port_ids
        obj = {v: i for i, v in enumerate(self.obj_ids)}
        nets = clustered.rewired_nets
        self.num_nets = len(nets)
        pin_obj, pin_net, pin_off = [], [], []
        n_obj = len(self.obj_ids)
        self.weights = np.zeros((n_obj, n_obj))
        for k, net in enumerate(nets):
            members = sorted({obj[p.node] for p in net.pins})
            for a_pos, a in enumerate(members):
                for b in members[a_pos + 1 :]:
                    self.weights[a, b] += 1.0
                    self.weights[b, a] += 1.0
            for p in net.pins:
                pin_obj.append(obj[p.node])
                pin_net.append(k)
                pin_off.append((p.dx_um, p.dy_um))
        self.pin_obj = np.array(pin_obj, dtype=int)
        self.pin_net = np.array(pin_net, dtype=int)
        self.pin_off = np.array(pin_off, dtype=float).reshape(-1, 2)
        self._baseline_hpwl: float | None = None

    @property
    def num_macros(self) -> int:
        return len(self.order)

    def cell_center(self, cell: int) -> tuple[float, float]:
        r, c = divmod(int(cell), self.cfg.cols)
        return ((c + 0.5) * self.cfg.cell_w_um, (r + 0.5) * self.cfg.cell_h_um)

    def legal_mask(self, macro_pos: int, taken: np.ndarray, occupancy: np.ndarray) -> np.ndarray:
        """Legal anchor cells for the macro at position ``macro_pos`` in the order."""
        rows, cols = self.cfg.rows, self.cfg.cols
        frac = self.footprints[macro_pos]
        fh, fw = frac.shape
        mask = np.zeros((rows, cols), dtype=bool)
        if fh > rows or fw > cols or frac.max() > self.cfg.density_cap + _EPS:
            return mask.ravel()
        s = np.zeros((rows + 1, cols + 1))
        s[1:, 1:] = np.cumsum(np.cumsum(taken, axis=0), axis=1)
        nr, nc = rows - fh + 1, cols - fw + 1
        blocked = s[fh:, fw:] - s[:nr, fw:] - s[fh:, :nc] + s[:nr, :nc]
        mask[:nr, :nc] = blocked == 0
        return mask.ravel()

    def stamp(self, macro_pos: int, cell: int, taken: np.ndarray, occupancy: np.ndarray, sign: int = 1) -> None:
        r, c = divmod(int(cell), self.cfg.cols)
        frac = self.footprints[macro_pos]
        fh, fw = frac.shape
        taken[r : r + fh, c : c + fw] += sign
        occupancy[r : r + fh, c : c + fw] += sign * frac

    def evaluate(self, cells: dict[int, int] | list[int], baseline_hpwl: float | None = None) -> Placement:
        """Refine clusters and score a complete macro assignment.

        ``cells`` maps macro id -> anchor cell index (or lists anchors in
        placement order). Every baseline and the agent go through here.
        """
        cfg = self.cfg
        if not isinstance(cells, dict):
            cells = dict(zip(self.order, cells))
        anchor_cells = [int(cells[m]) for m in self.order]
        macro_xy = np.array([self.cell_center(c) for c in anchor_cells]).reshape(-1, 2)
        anchors = np.vstack([macro_xy, self.port_xy]).reshape(-1, 2)
        k = len(self.cluster_ids)
        start = np.tile([cfg.width_um / 2, cfg.height_um / 2], (k, 1))
        ref = force_directed_refine(anchors, self.weights, start, (cfg.width_um, cfg.height_um), cfg.refine_iters, cfg.tol)
        if not ref.converged:
            log.warning("force-directed refinement stopped after %d sweeps without converging", ref.sweeps)
        obj_xy = np.vstack([ref.xy.reshape(-1, 2), anchors])
        pin_xy = obj_xy[self.pin_obj] + self.pin_off if len(self.pin_obj) else np.zeros((0, 2))
        h = hpwl(pin_xy, self.pin_net, self.num_nets)
        c = congestion(pin_xy, self.pin_net, self.num_nets, cfg)
        taken = np.zeros((cfg.rows, cfg.cols))
        occ = np.zeros((cfg.rows, cfg.cols))
        for pos, cell in enumerate(anchor_cells):
            self.stamp(pos, cell, taken, occ)
        if cfg.reward_mode is RewardMode.BASELINE and baseline_hpwl is None:
            baseline_hpwl = self.baseline_hpwl()
        reward = compose_reward(h, c, cfg, baseline_hpwl)
        breakdown = RewardBreakdown(h, c, float(occ.max()) if occ.size else 0.0, reward, ref.converged)
        return Placement(
            macro_cells={m: divmod(cell, cfg.cols) for m, cell in zip(self.order, anchor_cells)},
            macro_xy={m: tuple(map(float, macro_xy[i])) for i, m in enumerate(self.order)},
            cluster_xy={cid: tuple(map(float, ref.xy[i])) for i, cid in enumerate(self.cluster_ids)},
            breakdown=breakdown,
            refine_history=ref.objective,
        )

    def random_assignment(self, rng: np.random.Generator, retries: int = 16) -> list[int]:
        """Uniformly random legal anchor per macro, in placement order."""
        for _ in range(retries + 1):
            taken = np.zeros((self.cfg.rows, self.cfg.cols))
            occ = np.zeros_like(taken)
            cells = []
            for pos in range(self.num_macros):
                legal = np.flatnonzero(self.legal_mask(pos, taken, occ))
                if len(legal) == 0:
                    break
                cell = int(rng.choice(legal))
                self.stamp(pos, cell, taken, occ)
                cells.append(cell)
            else:
                return cells
            rng = np.random.default_rng(rng.integers(2**63))
        raise DeadEndError(f"no legal random placement after {retries} reseeds")

    def baseline_hpwl(self) -> float:
        """Mean HPWL over seeded random legal placements; computed once."""
        if self._baseline_hpwl is None:
            seeds = np.random.SeedSequence(self.cfg.baseline_seed).spawn(self.cfg.baseline_samples)
            values = []
            for ss in seeds:
                cells = self.random_assignment(np.random.default_rng(ss))
                values.append(self.evaluate(cells, baseline_hpwl=1.0).breakdown.hpwl_um)
            self._baseline_hpwl = float(np.mean(values)) if values else 1.0
        return self._baseline_hpwl


@dataclass
class PlacementState:
    t: int
    order: list[int]
    positions: dict[int, int]
    occupancy: np.ndarray
    taken: np.ndarray
    done: bool

    def copy(self) -> "PlacementState":
        return PlacementState(self.t, list(self.order), dict(self.positions), self.occupancy.copy(), self.taken.copy(), self.done)


class PlacementEnv:
    """Episodic environment: one macro per step, reward only at the end."""

    def __init__(self, clustered: ClusteredNetlist | Netlist, cfg: CanvasConfig, problem: PlacementProblem | None = None):
        self.problem = problem if problem is not None else PlacementProblem(clustered, cfg)
        self.cfg = cfg
        self.state: PlacementState | None = None
        self.last_placement: Placement | None = None

    @property
    def num_steps(self) -> int:
        return self.problem.num_macros

    def reset(self) -> PlacementState:
        rows, cols = self.cfg.rows, self.cfg.cols
        self.state = PlacementState(
            t=0,
            order=list(self.problem.order),
            positions={},
            occupancy=np.zeros((rows, cols)),
            taken=np.zeros((rows, cols)),
            done=self.problem.num_macros == 0,
        )
        self.last_placement = None
        return self.state

    @property
    def current_macro(self) -> int:
        return self.state.order[self.state.t]

    def legal_mask(self) -> np.ndarray:
        s = self.state
        if s is None or s.done:
            raise RuntimeError("legal_mask called on a terminal state")
        return self.problem.legal_mask(s.t, s.taken, s.occupancy)

    def step(self, action: int) -> tuple[PlacementState, RewardBreakdown, bool]:
        s = self.state
        if s is None or s.done:
            raise RuntimeError("step called on a terminal state")
        a = int(action)
        if not 0 <= a < self.cfg.num_cells:
            raise IllegalActionError(a, "out of range")
        if not self.legal_mask()[a]:
            raise IllegalActionError(a)
        self.problem.stamp(s.t, a, s.taken, s.occupancy)
        s.positions[self.current_macro] = a
        s.t += 1
        s.done = s.t == self.num_steps
        if not s.done:
            return s, ZERO_REWARD, False
        self.last_placement = self.problem.evaluate(s.positions)
        return s, self.last_placement.breakdown, True

    def terminal_reward(self) -> RewardBreakdown:
        if self.state is None or not self.state.done:
            raise RuntimeError("terminal_reward needs a finished episode")
        return self.problem.evaluate(self.state.positions).breakdown
