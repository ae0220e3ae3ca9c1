"""Explicit Runge-Kutta integrators."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as Fr

import numpy as np

from .limiter import llf_diffusion, node_diffusion_sums


class IntegrationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    def __post_init__(self):
        s = self.b.size
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise ValueError("inconsistent tableau shapes")
        if np.any(np.triu(self.a) != 0.0):
            raise ValueError("only explicit tableaus are supported")
        if abs(self.b.sum() - 1.0) > 1e-14:
            raise ValueError("weights must sum to 1")
        if np.max(np.abs(self.a.sum(axis=1) - self.c)) > 1e-14:
            raise ValueError("row sums of A must equal c")

    @property
    def stages(self) -> int:
        return self.b.size


def _tableau(name, rows, b, c, order):
    s = len(b)
    a = np.zeros((s, s))
    for i, row in enumerate(rows, start=1):
        a[i, : len(row)] = [float(x) for x in row]
    return ButcherTableau(name, a, np.array([float(x) for x in b]), np.array([float(x) for x in c]), order)


RK76 = _tableau(
    "rk76",
    rows=[
        [Fr(1, 3)],
        [0, Fr(2, 3)],
        [Fr(1, 12), Fr(1, 3), Fr(-1, 12)],
        [Fr(-1, 16), Fr(9, 8), Fr(-3, 16), Fr(-3, 8)],
        [0, Fr(9, 8), Fr(-3, 8), Fr(-3, 4), Fr(1, 2)],
        [Fr(9, 44), Fr(-9, 11), Fr(63, 44), Fr(18, 11), 0, Fr(-16, 11)],
    ],
    b=[Fr(11, 120), 0, Fr(27, 40), Fr(27, 40), Fr(-4, 15), Fr(-4, 15), Fr(11, 120)],
    c=[0, Fr(1, 3), Fr(2, 3), Fr(1, 3), Fr(1, 2), Fr(1, 2), 1],
    order=6,
)

SSPRK3 = _tableau(
    "ssprk3",
    rows=[[1], [Fr(1, 4), Fr(1, 4)]],
    b=[Fr(1, 6), Fr(1, 6), Fr(2, 3)],
    c=[0, 1, Fr(1, 2)],
    order=3,
)


def _check(u, stage):
    if not np.all(np.isfinite(u)):
        raise IntegrationError(f"non-finite state after stage {stage}")
    return u


def euler_step(rhs, u, dt, t=0.0):
    return _check(u + dt * rhs(u, t), 1)


def ssprk3_step(rhs, u, dt, t=0.0):
    """Shu-Osher form: three forward-Euler substeps combined convexly."""
    u1 = _check(u + dt * rhs(u, t), 1)
    u2 = _check(0.75 * u + 0.25 * (u1 + dt * rhs(u1, t + dt)), 2)
    return _check(u / 3.0 + 2.0 / 3.0 * (u2 + dt * rhs(u2, t + 0.5 * dt)), 3)


def explicit_rk_step(tableau: ButcherTableau, rhs, u, dt, t=0.0):
    k = []
    for i in range(tableau.stages):
        ui = u.copy()
        for j in range(i):
            if tableau.a[i, j] != 0.0:
                ui += dt * tableau.a[i, j] * k[j]
        _check(ui, i + 1)
        k.append(rhs(ui, t + tableau.c[i] * dt))
    out = u.copy()
    for bj, kj in zip(tableau.b, k):
        if bj != 0.0:
            out += dt * bj * kj
    return _check(out, tableau.stages)


def rk76_step(rhs, u, dt, t=0.0):
    return explicit_rk_step(RK76, rhs, u, dt, t)


INTEGRATORS = {
    "euler": euler_step,
    "ssprk3": ssprk3_step,
    "rk76": rk76_step,
}

SSP_INTEGRATORS = ("euler", "ssprk3")


def integrator(name: str):
    try:
        return INTEGRATORS[name]
    except KeyError:
        raise ValueError(f"unknown integrator {name!r}; choose from {', '.join(INTEGRATORS)}") from None


def observed_order(step, dts, t_end=1.0, lam=-1.0):
    """Orders of accuracy of ``step`` on u' = lam u from successive dt values."""
    errs = []
    for dt in dts:
        n = int(round(t_end / dt))
        u = np.array([1.0])
        for i in range(n):
            u = step(lambda x, t: lam * x, u, dt, i * dt)
        errs.append(abs(u[0] - np.exp(lam * n * dt)))
    errs = np.array(errs)
    ratios = np.array(dts[:-1]) / np.array(dts[1:])
    return np.log(errs[:-1] / errs[1:]) / np.log(ratios), errs


def cfl_timestep(space, u, cfl: float, remaining: float = np.inf) -> float:
    """dt = cfl * min_{e,i} m_i^e / sum_j 2 d~_ij^e over the compact stencil.

    Clamped to ``remaining``; with zero wave speeds everywhere the
    remaining time is returned.
    """
    if not cfl > 0.0:
        raise ValueError("cfl must be positive")
    d = llf_diffusion(space, space.gather(u))
    sums = node_diffusion_sums(space, 2.0 * d)
    pos = sums > 0.0
    if not np.any(pos):
        return float(remaining)
    ratio = np.broadcast_to(space.ops.lumped, sums.shape)[pos] / sums[pos]
    return float(min(cfl * ratio.min(), remaining))
