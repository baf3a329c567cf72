"""Grid A* path planning over scene occupancy.

The planner rasterizes occupancy lazily on an implicit grid covering the
scene box (padded so start and goal always fit). A cell is free when every
sample point of the agent's box, taken at grid-resolution spacing plus the
corners, is unoccupied; results are memoized per cell. Search runs A* with a
Euclidean heuristic over 26-connected cells (8-connected in fixed-height
slice mode), edge cost equal to center distance, and lexicographic cell
tie-breaking, so returned paths are grid-optimal and deterministic.

The fine-grained occupancy of adaptive octrees is what lets a short agent
plan underneath tables: only the cells intersecting actual occupied leaves
block, not whole object boxes.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import SceneGraph, scene_is_occupied

Cell = tuple[int, int, int]


@dataclass
class PlanRequest:
    start: tuple[float, float, float]
    goal: tuple[float, float, float]
    grid_res: float = 0.1
    agent_half_extents: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mode: str = "full3d"  # or "slice" (plan at the start's height)

    def __post_init__(self):
        if self.grid_res <= 0:
            raise ValueError("grid_res must be > 0")
        if any(h < 0 for h in self.agent_half_extents):
            raise ValueError("agent half extents must be >= 0")
        if self.mode not in ("full3d", "slice"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class PlanResult:
    status: str  # success | start_blocked | goal_blocked | no_path
    waypoints: list[tuple[float, float, float]] = field(default_factory=list)
    cost: float = 0.0


def _axis_offsets(half: float, res: float) -> list[float]:
    """Sample offsets along one axis: center outward at res spacing, plus the
    two extremes. Degenerate extents sample only the center."""
    if half <= 0:
        return [0.0]
    offsets = {0.0, -half, half}
    steps = int(half / res)
    for i in range(1, steps + 1):
        offsets.add(i * res)
        offsets.add(-i * res)
    return sorted(offsets)


def cell_free(graph: SceneGraph, center, agent_half_extents, grid_res: float) -> bool:
    """An agent box placed at `center` is free iff all its samples are."""
    ox = _axis_offsets(agent_half_extents[0], grid_res)
    oy = _axis_offsets(agent_half_extents[1], grid_res)
    oz = _axis_offsets(agent_half_extents[2], grid_res)
    cx, cy, cz = center
    for dx in ox:
        for dy in oy:
            for dz in oz:
                if scene_is_occupied(graph, (cx + dx, cy + dy, cz + dz)):
                    return False
    return True


class OccupancyRaster:
    """Lazy, memoized cell occupancy over an implicit grid.

    The grid origin sits 1 m below the combined box of the scene and the
    endpoints; cell (i, j, k) has center origin + (i+.5, j+.5, k+.5) * res.
    """

    def __init__(self, graph: SceneGraph, req: PlanRequest, pad: float = 1.0):
        self.graph = graph
        self.req = req
        los, his = [], []
        for node in graph.nodes:
            los.append(node.aabb.b_min)
            his.append(node.aabb.b_max)
        los.extend([req.start, req.goal])
        his.extend([req.start, req.goal])
        lo = np.min(np.array(los), axis=0) - pad
        hi = np.max(np.array(his), axis=0) + pad
        self.origin = tuple(lo.tolist())
        self.shape = tuple(
            max(1, int(math.ceil((h - l) / req.grid_res))) for l, h in zip(lo, hi)
        )
        self._free: dict[Cell, bool] = {}

    def cell_of(self, p) -> Cell:
        return tuple(
            min(self.shape[ax] - 1, max(0, int((p[ax] - self.origin[ax]) / self.req.grid_res)))
            for ax in range(3)
        )

    def center_of(self, cell: Cell) -> tuple[float, float, float]:
        return tuple(
            self.origin[ax] + (cell[ax] + 0.5) * self.req.grid_res for ax in range(3)
        )

    def in_bounds(self, cell: Cell) -> bool:
        return all(0 <= cell[ax] < self.shape[ax] for ax in range(3))

    def is_free(self, cell: Cell) -> bool:
        cached = self._free.get(cell)
        if cached is None:
            cached = cell_free(
                self.graph, self.center_of(cell), self.req.agent_half_extents, self.req.grid_res
            )
            self._free[cell] = cached
        return cached


def _neighbor_steps(mode: str) -> list[Cell]:
    if mode == "slice":
        return [(di, dj, 0) for di, dj in itertools.product((-1, 0, 1), repeat=2) if (di, dj) != (0, 0)]
    return [step for step in itertools.product((-1, 0, 1), repeat=3) if step != (0, 0, 0)]


def plan(graph: SceneGraph, req: PlanRequest, raster: OccupancyRaster | None = None) -> PlanResult:
    """A* between the cells containing start and goal.

    Distinguishes blocked endpoints from an unreachable goal. On success the
    waypoint list runs start cell to goal cell through grid-adjacent free
    cells, and cost is the summed center-to-center distance.
    """
    if tuple(req.start) == tuple(req.goal):
        raise ValueError("start and goal must differ")
    raster = raster or OccupancyRaster(graph, req)
    start = raster.cell_of(req.start)
    goal = raster.cell_of(req.goal)
    if req.mode == "slice":
        goal = (goal[0], goal[1], start[2])
    if not raster.is_free(start):
        return PlanResult(status="start_blocked")
    if not raster.is_free(goal):
        return PlanResult(status="goal_blocked")
    if start == goal:
        return PlanResult(status="success", waypoints=[raster.center_of(start)], cost=0.0)

    res = req.grid_res
    steps = _neighbor_steps(req.mode)
    step_cost = {step: res * math.sqrt(sum(s * s for s in step)) for step in steps}
    goal_center = np.array(raster.center_of(goal))

    def heuristic(cell: Cell) -> float:
        return float(np.linalg.norm(np.array(raster.center_of(cell)) - goal_center))

    open_heap: list[tuple[float, Cell]] = [(heuristic(start), start)]
    g_score: dict[Cell, float] = {start: 0.0}
    came_from: dict[Cell, Cell] = {}
    closed: set[Cell] = set()

    while open_heap:
        _, current = heapq.heappop(open_heap)
        if current in closed:
            continue
        if current == goal:
            path = [current]
            while path[-1] in came_from:
                path.append(came_from[path[-1]])
            path.reverse()
            return PlanResult(
                status="success",
                waypoints=[raster.center_of(c) for c in path],
                cost=g_score[goal],
            )
        closed.add(current)
        for step in steps:
            neighbor = (current[0] + step[0], current[1] + step[1], current[2] + step[2])
            if neighbor in closed or not raster.in_bounds(neighbor):
                continue
            if not raster.is_free(neighbor):
                continue
            tentative = g_score[current] + step_cost[step]
            if tentative < g_score.get(neighbor, math.inf) - 1e-12:
                g_score[neighbor] = tentative
                came_from[neighbor] = current
                heapq.heappush(open_heap, (tentative + heuristic(neighbor), neighbor))
    return PlanResult(status="no_path")
