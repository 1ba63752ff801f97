"""Parametric design models: spanning trusses, a lattice tower, and deck bridges.

Each design model maps a small parameter vector (already scaled to physical
bounds) to a concrete ``Truss``. The spanning family ``dm{k}`` shares one
outer profile and varies only the bay count ``k`` (k bars along the top
chord); the tower and bridge cover different loadings and complexities.
All loads are 11.1 kN point loads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import Joint, Truss

LOAD_NEWTONS = 11100.0

SPAN_M = 10.0
TOWER_BASE_WIDTH_M = 2.0
BRIDGE_BAY_M = 0.4


@dataclass(frozen=True)
class DesignModel:
    """A named generator mapping a bounded parameter vector to a truss."""

    name: str
    param_count: int
    param_bounds: tuple[tuple[float, float], ...]
    generate: Callable[[np.ndarray], Truss]

    def __post_init__(self):
        if len(self.param_bounds) != self.param_count:
            raise ValueError("param_bounds length must equal param_count")

    def generate_scaled(self, unit_params: np.ndarray) -> Truss:
        """Generate from unit-cube parameters scaled through param_bounds."""
        u = np.asarray(unit_params, dtype=np.float64)
        if u.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got shape {u.shape}")
        lo = np.array([b[0] for b in self.param_bounds])
        hi = np.array([b[1] for b in self.param_bounds])
        return self.generate(lo + u * (hi - lo))


def _bump(t: np.ndarray | float) -> np.ndarray | float:
    """Parabolic bump: 0 at t=0 and t=1, 1 at t=0.5."""
    return 4.0 * t * (1.0 - t)


def _span_truss(bays: int, params: np.ndarray, end_loads_only: bool = False) -> Truss:
    """Warren-style spanning truss with ``bays`` bars along the top chord.

    Joints 0..bays are the top chord, bays+1..2*bays the bottom chord
    (one bottom joint per bay). Parameters: overall height, top-chord
    camber, bottom-joint horizontal shear, bottom-chord sag, bay-width skew.
    """
    height, camber, shear, sag, skew = params
    t_top = np.arange(bays + 1) / bays
    x_top = SPAN_M * (t_top + skew * t_top * (1.0 - t_top))
    y_top = height + camber * _bump(t_top)
    x_bot = 0.5 * (x_top[:-1] + x_top[1:])
    t_bot = x_bot / SPAN_M
    x_bot = x_bot + shear * _bump(t_bot)
    y_bot = -sag * _bump(t_bot)

    joints = []
    for i in range(bays + 1):
        load = (0.0, -LOAD_NEWTONS)
        if end_loads_only and i not in (0, bays):
            load = (0.0, 0.0)
        joints.append(Joint(position=(x_top[i], y_top[i]), load=load))
    first_bottom = bays + 1
    for j in range(bays):
        support = (False, False)
        if j == 0:
            support = (True, True)  # pin
        elif j == bays - 1:
            support = (False, True)  # roller
        joints.append(Joint(position=(x_bot[j], y_bot[j]), support=support))

    members = []
    for i in range(bays):
        members.append((i, i + 1))  # top chord
    for j in range(bays - 1):
        members.append((first_bottom + j, first_bottom + j + 1))  # bottom chord
    for j in range(bays):
        members.append((j, first_bottom + j))  # falling diagonal
        members.append((first_bottom + j, j + 1))  # rising diagonal
    return Truss(joints=tuple(joints), members=tuple(members))


SPAN_PARAM_BOUNDS = (
    (1.2, 3.0),  # height (m)
    (-0.4, 1.2),  # top-chord camber (m)
    (-0.35, 0.35),  # bottom-joint horizontal shear (m)
    (-0.4, 0.8),  # bottom-chord sag (m)
    (-0.45, 0.45),  # bay-width skew
)


def _tower(params: np.ndarray) -> Truss:
    """X-braced lattice tower: 13 joints, 26 members, apex on top.

    Pinned at both base joints; every other joint carries a horizontal load.
    Parameters: height, taper (top width over base width), lean.
    """
    height, taper, lean = params
    levels = 6  # pairs of joints; the apex sits above them
    joints = []
    for level in range(levels):
        t = level / levels
        width = TOWER_BASE_WIDTH_M * (1.0 - (1.0 - taper) * t)
        centre = lean * height * t
        y = height * t
        support = (True, True) if level == 0 else (False, False)
        load = (0.0, 0.0) if level == 0 else (LOAD_NEWTONS, 0.0)
        joints.append(Joint(position=(centre - width / 2, y), support=support, load=load))
        joints.append(Joint(position=(centre + width / 2, y), support=support, load=load))
    joints.append(Joint(position=(lean * height, height), load=(LOAD_NEWTONS, 0.0)))

    left = lambda level: 2 * level
    right = lambda level: 2 * level + 1
    apex = 2 * levels
    members = []
    for level in range(levels - 1):
        members.append((left(level), left(level + 1)))
        members.append((right(level), right(level + 1)))
        members.append((left(level), right(level + 1)))
        members.append((right(level), left(level + 1)))
    for level in range(1, levels - 1):
        members.append((left(level), right(level)))
    members.append((left(levels - 1), apex))
    members.append((right(levels - 1), apex))
    return Truss(joints=tuple(joints), members=tuple(members))


TOWER_PARAM_BOUNDS = (
    (4.0, 8.0),  # height (m)
    (0.3, 0.9),  # taper
    (-0.15, 0.15),  # lean
)


def _bridge(bays: int, params: np.ndarray) -> Truss:
    """Densely X-braced parallel-chord deck bridge with ``4 * bays`` members.

    Two chords of ``bays + 1`` joints each, every panel braced by both
    diagonals (no verticals). Uniform vertical loads across the top chord,
    pin and roller under the outer bottom joints. Parameters: deck depth,
    top-chord camber, bottom-chord camber.
    """
    depth, top_camber, bottom_camber = params
    length = BRIDGE_BAY_M * bays
    t = np.arange(bays + 1) / bays
    x = length * t
    y_top = depth + top_camber * _bump(t)
    y_bot = bottom_camber * _bump(t)

    joints = []
    for i in range(bays + 1):
        joints.append(Joint(position=(x[i], y_top[i]), load=(0.0, -LOAD_NEWTONS)))
    first_bottom = bays + 1
    for i in range(bays + 1):
        support = (False, False)
        if i == 0:
            support = (True, True)
        elif i == bays:
            support = (False, True)
        joints.append(Joint(position=(x[i], y_bot[i]), support=support))

    members = []
    for i in range(bays):
        members.append((i, i + 1))
        members.append((first_bottom + i, first_bottom + i + 1))
        members.append((i, first_bottom + i + 1))
        members.append((first_bottom + i, i + 1))
    return Truss(joints=tuple(joints), members=tuple(members))


BRIDGE_PARAM_BOUNDS = (
    (0.8, 1.6),  # deck depth (m)
    (-0.3, 0.6),  # top-chord camber (m)
    (-0.4, 0.4),  # bottom-chord camber (m)
)


def _span_model(bays: int) -> DesignModel:
    return DesignModel(
        name=f"dm{bays}",
        param_count=5,
        param_bounds=SPAN_PARAM_BOUNDS,
        generate=lambda p, bays=bays: _span_truss(bays, p),
    )


DESIGN_MODELS: dict[str, DesignModel] = {
    **{f"dm{k}": _span_model(k) for k in (5, 6, 7, 8, 9)},
    "dm7_endloads": DesignModel(
        name="dm7_endloads",
        param_count=5,
        param_bounds=SPAN_PARAM_BOUNDS,
        generate=lambda p: _span_truss(7, p, end_loads_only=True),
    ),
    "tower": DesignModel(
        name="tower",
        param_count=3,
        param_bounds=TOWER_PARAM_BOUNDS,
        generate=_tower,
    ),
    "bridge": DesignModel(
        name="bridge",
        param_count=3,
        param_bounds=BRIDGE_PARAM_BOUNDS,
        generate=lambda p: _bridge(101, p),
    ),
    # Reduced bridge for smoke tests; the 404-member bridge is a manual run.
    "bridge100": DesignModel(
        name="bridge100",
        param_count=3,
        param_bounds=BRIDGE_PARAM_BOUNDS,
        generate=lambda p: _bridge(25, p),
    ),
}


def get_design_model(name: str) -> DesignModel:
    try:
        return DESIGN_MODELS[name]
    except KeyError:
        raise KeyError(
            f"unknown design model {name!r}; available: {', '.join(sorted(DESIGN_MODELS))}"
        ) from None
