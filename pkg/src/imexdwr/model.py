"""Problem data: heat and Allen-Cahn equations with a convex/concave splitting.

The double-well is the truncated quartic

    psi(u) = (u + 1)**2          u < -1
             (u**2 - 1)**2 / 4   -1 <= u <= 1
             (u - 1)**2          u > 1

split as ``psi = psi_c - psi_e`` with ``psi_c = u**2 + 1/4`` treated
implicitly and ``psi_e`` explicitly. All functions accept scalars or arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .assembly import gauss_rule

HEAT = "heat"
ALLEN_CAHN = "allen_cahn"


def psi(u):
    u = np.asarray(u, dtype=float)
    return np.where(u < -1, (u + 1) ** 2, np.where(u > 1, (u - 1) ** 2, 0.25 * (u * u - 1) ** 2))


def psi_prime(u):
    u = np.asarray(u, dtype=float)
    return np.where(u < -1, 2 * (u + 1), np.where(u > 1, 2 * (u - 1), u ** 3 - u))


def psi_second(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) > 1, 2.0, 3 * u * u - 1)


def psi_c(u):
    u = np.asarray(u, dtype=float)
    return u * u + 0.25


def psi_e(u):
    u = np.asarray(u, dtype=float)
    return np.where(u < -1, -2 * u - 0.75, np.where(u > 1, 2 * u - 0.75, 1.5 * u * u - 0.25 * u ** 4))


def psi_c_prime(u):
    return 2.0 * np.asarray(u, dtype=float)


def psi_e_prime(u):
    u = np.asarray(u, dtype=float)
    return np.where(u < -1, -2.0, np.where(u > 1, 2.0, 3 * u - u ** 3))


def psi_mean_value(u, u_hat):
    """Exact ``integral_0^1 psi''(s*u + (1-s)*u_hat) ds``.

    ``psi''`` is ``3v**2 - 1`` on [-1, 1] and 2 outside, so the segment from
    ``u_hat`` to ``u`` is cut at the branch points and each piece integrated
    in closed form; the pieces are weighted by their fraction of the segment.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(u_hat, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    same_inner = (lo >= -1) & (hi <= 1)
    same_outer = (lo > 1) | (hi < -1)
    out = np.where(same_inner, u * u + u * v + v * v - 1.0, 2.0)
    cross = ~(same_inner | same_outer)
    if np.any(cross):
        a = np.clip(lo[cross], -1.0, 1.0)
        b = np.clip(hi[cross], -1.0, 1.0)
        length = hi[cross] - lo[cross]
        frac_in = (b - a) / length
        inner_mean = a * a + a * b + b * b - 1.0
        out = np.array(out, dtype=float)
        out[cross] = frac_in * inner_mean + (1.0 - frac_in) * 2.0
    return out if out.ndim else float(out)


def psi_c_mean(u, u_hat):
    shape = np.broadcast(np.asarray(u), np.asarray(u_hat)).shape
    return np.full(shape, 2.0) if shape else 2.0


def psi_e_mean(u, u_hat):
    return 2.0 - psi_mean_value(u, u_hat)


# -- problems ---------------------------------------------------------------
@dataclass(frozen=True)
class Problem:
    """Semilinear parabolic problem ``u_t - lap(u) + eps**-2 psi'(u) = f`` with natural BCs.

    Closures take points ``x`` of shape ``(n, dim)`` (and a scalar time ``t``)
    and return arrays of shape ``(n,)``. With ``exact`` set, the forcing is
    derived from it; ``exact_dt`` and ``exact_laplacian`` are then required.
    ``boundary_flux`` is the outward normal derivative ``g = du/dn`` on the
    boundary; None means homogeneous Neumann.
    """

    kind: str
    initial: Callable
    epsilon: float = 1.0
    forcing: Optional[Callable] = None
    exact: Optional[Callable] = None
    exact_dt: Optional[Callable] = None
    exact_laplacian: Optional[Callable] = None
    boundary_flux: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in (HEAT, ALLEN_CAHN):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == ALLEN_CAHN and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.exact is not None and self.forcing is None:
            object.__setattr__(self, "forcing", derive_forcing(self))

    @property
    def nonlinear(self):
        return self.kind == ALLEN_CAHN

    @property
    def inv_eps2(self):
        return 1.0 / self.epsilon ** 2 if self.nonlinear else 0.0


def derive_forcing(p: Problem) -> Callable:
    """``f = u_t - lap(u) + eps**-2 psi'(u)`` for the manufactured solution of ``p``."""
    if p.exact is None or p.exact_dt is None or p.exact_laplacian is None:
        raise ValueError("derive_forcing needs exact, exact_dt and exact_laplacian")
    u, ut, lap = p.exact, p.exact_dt, p.exact_laplacian
    if p.kind == HEAT:
        def f(x, t):
            return ut(x, t) - lap(x, t)
    else:
        c = 1.0 / p.epsilon ** 2

        def f(x, t):
            return ut(x, t) - lap(x, t) + c * psi_prime(u(x, t))
    return f


def strong_residual(p: Problem, x, t):
    """Pointwise ``f - u_t + lap(u) - eps**-2 psi'(u)`` of the exact solution."""
    r = p.forcing(x, t) - p.exact_dt(x, t) + p.exact_laplacian(x, t)
    if p.nonlinear:
        r = r - p.inv_eps2 * psi_prime(p.exact(x, t))
    return r


def time_average(f: Optional[Callable], t_a: float, t_b: float, order: int = 5) -> Optional[Callable]:
    """Closure ``x -> mean of f(x, .) over (t_a, t_b)`` by Gauss quadrature; None when f is None."""
    if not t_b > t_a:
        raise ValueError("empty time interval")
    if f is None:
        return None
    rule = gauss_rule(order, 1)
    ts = t_a + (t_b - t_a) * rule.points[:, 0]
    ws = rule.weights

    def fbar(x):
        return sum(w * f(x, t) for t, w in zip(ts, ws))
    return fbar


def time_averaged_forcing(p: Problem, t_a: float, t_b: float, order: int = 5) -> Optional[Callable]:
    return time_average(p.forcing, t_a, t_b, order)


def time_averaged_flux(p: Problem, t_a: float, t_b: float, order: int = 5) -> Optional[Callable]:
    return time_average(p.boundary_flux, t_a, t_b, order)


@dataclass(frozen=True)
class Qoi:
    """``Q(u) = (terminal, u(T)) + integral_0^T (distributed(t), u(t)) dt``."""

    terminal: object = None  # closure, constant or FE field
    distributed: Optional[Callable] = None  # q(x, t)

    def __post_init__(self):
        if self.terminal is None and self.distributed is None:
            raise ValueError("a QoI needs a terminal or a distributed weight")


def qoi_evaluate(q: Qoi, traj, order: int = 5, mesh=None) -> float:
    """Q applied to the piecewise-linear-in-time reconstruction of a trajectory.

    Spatial integrals use the overlay of the field meshes with ``mesh`` when
    given; pass a common mesh to compare two trajectories without a quadrature
    mismatch for non-polynomial weights.
    """
    from .assembly import Combination, l2_inner

    grid = traj.grid
    total = 0.0
    if q.terminal is not None:
        total += l2_inner(q.terminal, traj.functions[-1], mesh=mesh)
    if q.distributed is not None:
        rule = gauss_rule(order, 1)
        for k in range(grid.N):
            ta, tb = grid.t[k], grid.t[k + 1]
            tau = tb - ta
            u0, u1 = traj.functions[k], traj.functions[k + 1]
            for s, w in zip(rule.points[:, 0], rule.weights):
                t = ta + s * tau
                iu = Combination([(1.0 - s, u0), (s, u1)])
                total += w * tau * l2_inner(lambda x, t=t: q.distributed(x, t), iu, mesh=mesh)
    return total

