"""2D linear-elastic finite element analysis by the direct stiffness method.

Two element kinds are supported: ``truss_bar`` (axial-only rod, 2 DOF per
joint) and ``frame_beam`` (Euler-Bernoulli frame with axial and bending
stiffness, 3 DOF per joint). Supports are applied by eliminating restrained
degrees of freedom, so restrained displacements are exactly zero. The reduced
system is solved with a Cholesky factorization; a factorization failure means
the design is a mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg

from .model import Material, Truss

TRUSS_BAR = "truss_bar"
FRAME_BEAM = "frame_beam"
ELEMENT_KINDS = (TRUSS_BAR, FRAME_BEAM)

MIN_MEMBER_LENGTH = 1e-9  # m
RESIDUAL_TOL = 1e-8


class MechanismError(Exception):
    """The reduced stiffness matrix is singular or indefinite: the design is unstable."""


class NumericalError(Exception):
    """The solve completed but failed conditioning or residual checks."""


@dataclass(frozen=True)
class SolveResult:
    """Translational displacements (n, 2) and the largest joint displacement norm."""

    displacements: np.ndarray  # (n, 2), metres
    max_displacement: float  # metres

    def __post_init__(self):
        disp = np.ascontiguousarray(np.asarray(self.displacements, dtype=np.float64))
        disp.flags.writeable = False
        object.__setattr__(self, "displacements", disp)


def _member_geometry(joint_a, joint_b):
    (xa, ya), (xb, yb) = joint_a, joint_b
    dx, dy = xb - xa, yb - ya
    length = float(np.hypot(dx, dy))
    if length <= MIN_MEMBER_LENGTH:
        raise ValueError(f"zero-length member between {joint_a} and {joint_b}")
    return length, dx / length, dy / length


def element_stiffness(joint_a, joint_b, material: Material, kind: str = FRAME_BEAM) -> np.ndarray:
    """Element stiffness matrix in global coordinates.

    ``truss_bar`` returns the 4x4 rotated axial-rod matrix (EA/L); ``frame_beam``
    returns the 6x6 rotated Euler-Bernoulli frame matrix (EA/L axial plus EI
    bending). DOF order is (u, v[, theta]) per end joint.
    """
    length, c, s = _member_geometry(joint_a, joint_b)
    ea_l = material.elastic_modulus * material.section_area / length
    if kind == TRUSS_BAR:
        k_local = ea_l * np.array(
            [
                [1.0, 0.0, -1.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [-1.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )
        rot = np.array(
            [
                [c, s, 0.0, 0.0],
                [-s, c, 0.0, 0.0],
                [0.0, 0.0, c, s],
                [0.0, 0.0, -s, c],
            ]
        )
    elif kind == FRAME_BEAM:
        ei = material.elastic_modulus * material.second_moment
        b = ei / length**3
        ll = length
        k_local = np.array(
            [
                [ea_l, 0.0, 0.0, -ea_l, 0.0, 0.0],
                [0.0, 12 * b, 6 * b * ll, 0.0, -12 * b, 6 * b * ll],
                [0.0, 6 * b * ll, 4 * b * ll**2, 0.0, -6 * b * ll, 2 * b * ll**2],
                [-ea_l, 0.0, 0.0, ea_l, 0.0, 0.0],
                [0.0, -12 * b, -6 * b * ll, 0.0, 12 * b, -6 * b * ll],
                [0.0, 6 * b * ll, 2 * b * ll**2, 0.0, -6 * b * ll, 4 * b * ll**2],
            ]
        )
        r = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        rot = scipy.linalg.block_diag(r, r)
    else:
        raise ValueError(f"unknown element kind {kind!r}; expected one of {ELEMENT_KINDS}")
    return rot.T @ k_local @ rot


def _assemble(truss: Truss, kind: str):
    n = truss.joint_count
    dof_per_joint = 2 if kind == TRUSS_BAR else 3
    ndof = dof_per_joint * n
    stiffness = np.zeros((ndof, ndof))
    for a, b in truss.members:
        k = element_stiffness(truss.joints[a].position, truss.joints[b].position, truss.material, kind)
        idx = np.concatenate(
            [
                np.arange(dof_per_joint) + dof_per_joint * a,
                np.arange(dof_per_joint) + dof_per_joint * b,
            ]
        )
        stiffness[np.ix_(idx, idx)] += k
    loads = np.zeros(ndof)
    for i, joint in enumerate(truss.joints):
        loads[dof_per_joint * i] = joint.load[0]
        loads[dof_per_joint * i + 1] = joint.load[1]
    return stiffness, loads, dof_per_joint


def _fixed_dofs(truss: Truss, dof_per_joint: int, clamped_joints: Iterable[int]):
    fixed = []
    for i, joint in enumerate(truss.joints):
        if joint.support[0]:
            fixed.append(dof_per_joint * i)
        if joint.support[1]:
            fixed.append(dof_per_joint * i + 1)
    if dof_per_joint == 3:
        for i in clamped_joints:
            fixed.append(3 * int(i) + 2)
    return np.array(sorted(set(fixed)), dtype=np.int64)


def solve(truss: Truss, kind: str = FRAME_BEAM, clamped_joints: Iterable[int] = ()) -> SolveResult:
    """Solve a truss for its joint displacements under the stored loads.

    ``clamped_joints`` additionally fixes the rotational DOF of the listed
    joints (frame kind only); plain supports restrain translations only.

    Raises MechanismError when the reduced stiffness matrix is not positive
    definite and NumericalError when the solution fails the equilibrium
    residual check on the free DOFs.
    """
    if kind not in ELEMENT_KINDS:
        raise ValueError(f"unknown element kind {kind!r}; expected one of {ELEMENT_KINDS}")
    stiffness, loads, dof_per_joint = _assemble(truss, kind)
    ndof = stiffness.shape[0]
    fixed = _fixed_dofs(truss, dof_per_joint, clamped_joints)
    free = np.setdiff1d(np.arange(ndof), fixed)
    k_ff = stiffness[np.ix_(free, free)]
    f_f = loads[free]
    if not np.isfinite(k_ff).all():
        raise NumericalError("non-finite entries in the assembled stiffness matrix")
    try:
        factor = scipy.linalg.cho_factor(k_ff, check_finite=False)
        u_f = scipy.linalg.cho_solve(factor, f_f, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise MechanismError(f"singular or indefinite reduced stiffness matrix: {exc}") from exc
    if not np.isfinite(u_f).all():
        raise NumericalError("non-finite displacement solution")
    residual = np.abs(k_ff @ u_f - f_f).max()
    scale = max(np.abs(f_f).max(), 1.0)
    if residual / scale > RESIDUAL_TOL:
        raise NumericalError(
            f"equilibrium residual {residual / scale:.3e} exceeds {RESIDUAL_TOL:.0e}; "
            "the reduced system is too ill-conditioned"
        )
    u = np.zeros(ndof)
    u[free] = u_f
    displacements = u.reshape(-1, dof_per_joint)[:, :2]
    max_displacement = float(np.linalg.norm(displacements, axis=1).max(initial=0.0))
    return SolveResult(displacements=displacements, max_displacement=max_displacement)
