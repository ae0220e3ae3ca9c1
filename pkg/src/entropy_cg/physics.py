"""Flux models with square-entropy pairs, and the benchmark problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


def _square_entropy(u):
    return 0.5 * np.asarray(u) ** 2


def _square_entropy_variable(u):
    return np.asarray(u, dtype=float)


@dataclass(frozen=True)
class FluxModel:
    """Scalar flux f(u, x) in R^d together with an entropy pair.

    Every callable takes states of shape ``s`` and positions of shape
    ``s + (d,)`` (positions are ignored by autonomous fluxes) and returns
    arrays of shape ``s + (d,)`` for vector quantities.
    """

    name: str
    dimension: int
    flux: Callable
    flux_derivative: Callable
    entropy_flux: Callable
    #: lam(u_i, u_j, n, x_i, x_j) >= max_w |n . f'(w u_i + (1-w) u_j)|
    wave_speed: Callable
    #: global bound on |f'|, used for scale estimates
    speed_scale: float
    #: polynomial degree of f in u, None if not polynomial
    polynomial_degree: int | None
    entropy: Callable = _square_entropy
    entropy_variable: Callable = _square_entropy_variable
    square_entropy: bool = True
    autonomous: bool = True

    def f(self, u, x=None):
        return self.flux(np.asarray(u, dtype=float), x)

    def df(self, u, x=None):
        return self.flux_derivative(np.asarray(u, dtype=float), x)

    def q(self, u, x=None):
        return self.entropy_flux(np.asarray(u, dtype=float), x)

    def eta(self, u):
        return self.entropy(u)

    def v(self, u):
        return self.entropy_variable(u)

    def psi(self, u, x=None):
        """Entropy potential v(u) f(u) - q(u)."""
        u = np.asarray(u, dtype=float)
        return self.v(u)[..., None] * self.f(u, x) - self.q(u, x)

    def lam(self, ui, uj, n, xi=None, xj=None):
        return self.wave_speed(np.asarray(ui, dtype=float), np.asarray(uj, dtype=float),
                               np.asarray(n, dtype=float), xi, xj)


def linear_advection(velocity) -> FluxModel:
    """f(u) = v u with constant velocity v."""
    vel = np.atleast_1d(np.asarray(velocity, dtype=float))
    if not np.all(np.isfinite(vel)):
        raise ValueError("velocity must be finite")
    d = vel.size

    def flux(u, x):
        return u[..., None] * vel

    def dflux(u, x):
        return np.broadcast_to(vel, np.shape(u) + (d,)).copy()

    def qflux(u, x):
        return 0.5 * (u**2)[..., None] * vel

    def lam(ui, uj, n, xi, xj):
        return np.broadcast_to(np.abs(n @ vel), np.broadcast(ui, uj).shape).copy()

    return FluxModel(
        name="linear_advection",
        dimension=d,
        flux=flux,
        flux_derivative=dflux,
        entropy_flux=qflux,
        wave_speed=lam,
        speed_scale=float(np.linalg.norm(vel)),
        polynomial_degree=1,
    )


def rotating_advection(center=(0.5, 0.5), angular_speed=2.0 * np.pi) -> FluxModel:
    """f(u, x) = v(x) u with the rigid rotation v = w (c_y - y, x - c_x)."""
    cx, cy = center
    om = float(angular_speed)

    def velocity(x):
        x = np.asarray(x, dtype=float)
        return om * np.stack([cy - x[..., 1], x[..., 0] - cx], axis=-1)

    def flux(u, x):
        return u[..., None] * velocity(x)

    def dflux(u, x):
        return np.broadcast_to(velocity(x), np.shape(u) + (2,)).copy()

    def qflux(u, x):
        return 0.5 * (u**2)[..., None] * velocity(x)

    def lam(ui, uj, n, xi, xj):
        si = np.abs(np.sum(n * velocity(xi), axis=-1))
        sj = np.abs(np.sum(n * velocity(xj), axis=-1))
        return np.maximum(si, sj)

    return FluxModel(
        name="rotating_advection",
        dimension=2,
        flux=flux,
        flux_derivative=dflux,
        entropy_flux=qflux,
        wave_speed=lam,
        speed_scale=om * np.sqrt(0.5),
        polynomial_degree=1,
        autonomous=False,
    )


def burgers(dimension: int = 1) -> FluxModel:
    """f(u) = u^2/2 along every coordinate direction."""
    d = int(dimension)
    ones = np.ones(d)

    def flux(u, x):
        return 0.5 * (u**2)[..., None] * ones

    def dflux(u, x):
        return u[..., None] * ones

    def qflux(u, x):
        return (u**3 / 3.0)[..., None] * ones

    def lam(ui, uj, n, xi, xj):
        return np.abs(np.sum(n, axis=-1)) * np.maximum(np.abs(ui), np.abs(uj))

    return FluxModel(
        name="burgers",
        dimension=d,
        flux=flux,
        flux_derivative=dflux,
        entropy_flux=qflux,
        wave_speed=lam,
        speed_scale=1.0,
        polynomial_degree=2,
    )


BUCKLEY_LEVERETT_SPEED = 3.4
KPP_SPEED = 1.0


def buckley_leverett() -> FluxModel:
    """Two-dimensional Buckley-Leverett flux with gravity term."""

    def flux(u, x):
        a = u**2 / (u**2 + (1.0 - u) ** 2)
        return np.stack([a, a * (1.0 - 5.0 * (1.0 - u) ** 2)], axis=-1)

    def dflux(u, x):
        den = u**2 + (1.0 - u) ** 2
        a = u**2 / den
        da = 2.0 * u * (1.0 - u) / den**2
        g = 1.0 - 5.0 * (1.0 - u) ** 2
        dg = 10.0 * (1.0 - u)
        return np.stack([da, da * g + a * dg], axis=-1)

    def qflux(u, x):
        s = 2.0 * u**2 - 2.0 * u + 1.0
        qx = 0.25 * (2.0 * (u - 1.0) / s - np.log(s))
        qy = (-20.0 * u**3 + 15.0 * u**2 - (9.0 * u + 6.0) / s - 3.0 * np.log(s)
              - 15.0 * np.arctan(1.0 - 2.0 * u)) / 12.0
        return np.stack([qx, qy], axis=-1)

    def lam(ui, uj, n, xi, xj):
        return np.full(np.broadcast(ui, uj).shape, BUCKLEY_LEVERETT_SPEED)

    return FluxModel(
        name="buckley_leverett",
        dimension=2,
        flux=flux,
        flux_derivative=dflux,
        entropy_flux=qflux,
        wave_speed=lam,
        speed_scale=BUCKLEY_LEVERETT_SPEED,
        polynomial_degree=None,
    )


def kpp() -> FluxModel:
    """f(u) = (sin u, cos u)."""

    def flux(u, x):
        return np.stack([np.sin(u), np.cos(u)], axis=-1)

    def dflux(u, x):
        return np.stack([np.cos(u), -np.sin(u)], axis=-1)

    def qflux(u, x):
        return np.stack([u * np.sin(u) + np.cos(u), u * np.cos(u) - np.sin(u)], axis=-1)

    def lam(ui, uj, n, xi, xj):
        return np.full(np.broadcast(ui, uj).shape, KPP_SPEED)

    return FluxModel(
        name="kpp",
        dimension=2,
        flux=flux,
        flux_derivative=dflux,
        entropy_flux=qflux,
        wave_speed=lam,
        speed_scale=KPP_SPEED,
        polynomial_degree=None,
    )


# {{{ benchmarks


BURGERS_CRITICAL_TIME = 1.0 / (2.0 * np.pi)


def burgers_sine_exact(x, t, *, tol=1e-14, maxiter=100):
    """Smooth solution of u_t + (u^2/2)_x = 0 with u0 = sin(2 pi x), t < t_c.

    Solves u = sin(2 pi (x - u t)) by Newton's method, falling back to
    bisection on [-1, 1] for points that do not converge.
    """
    if t < 0.0 or t >= BURGERS_CRITICAL_TIME:
        raise ValueError(f"exact Burgers solution only valid for 0 <= t < {BURGERS_CRITICAL_TIME:.6f}")
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        return np.sin(2.0 * np.pi * x)
    k = 2.0 * np.pi
    u = np.sin(k * x)
    for _ in range(maxiter):
        arg = k * (x - u * t)
        g = u - np.sin(arg)
        dg = 1.0 + k * t * np.cos(arg)
        step = g / dg
        u = u - step
        if np.max(np.abs(step), initial=0.0) < tol:
            break
    resid = np.abs(u - np.sin(k * (x - u * t)))
    bad = resid > 1e-12
    if np.any(bad):
        lo = -np.ones(bad.sum())
        hi = np.ones(bad.sum())
        xb = x[bad]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = mid - np.sin(k * (xb - mid * t))
            lo = np.where(gm < 0.0, mid, lo)
            hi = np.where(gm < 0.0, hi, mid)
        u[bad] = 0.5 * (lo + hi)
    return u


def _cosine_profile(x):
    return np.cos(2.0 * np.pi * (x[..., 0] - 0.5))


def _three_body(x):
    s = 2.0 * x[..., 0]
    out = np.zeros(s.shape)
    gauss = np.abs(s - 0.3) <= 0.25
    out[gauss] = np.exp(-300.0 * (s[gauss] - 0.3) ** 2)
    out[np.abs(s - 0.9) <= 0.2] = 1.0
    semi = np.abs(s - 1.6) <= 0.2
    out[semi] = np.sqrt(np.maximum(0.0, 1.0 - ((s[semi] - 1.6) / 0.2) ** 2))
    return out


def _sine(x):
    return np.sin(2.0 * np.pi * x[..., 0])


def _solid_body(x):
    X, Y = x[..., 0], x[..., 1]
    out = np.zeros(X.shape)
    r_hump = np.sqrt((X - 0.25) ** 2 + (Y - 0.5) ** 2) / 0.15
    r_cone = np.sqrt((X - 0.5) ** 2 + (Y - 0.25) ** 2) / 0.15
    r_cyl = np.sqrt((X - 0.5) ** 2 + (Y - 0.75) ** 2) / 0.15
    cyl = (r_cyl <= 1.0) & ((np.abs(X - 0.5) >= 0.025) | (Y >= 0.85))
    out[cyl] = 1.0
    cone = r_cone <= 1.0
    out[cone] = 1.0 - r_cone[cone]
    hump = r_hump <= 1.0
    out[hump] = 0.25 * (1.0 + np.cos(np.pi * r_hump[hump]))
    return out


def _bl_initial(x):
    return np.where(x[..., 0] ** 2 + x[..., 1] ** 2 < 0.5, 1.0, 0.0)


def _kpp_initial(x):
    r = np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2)
    return np.where(r <= 1.0, 3.5 * np.pi, 0.25 * np.pi)


def _periodic_shift(u0, lower, upper, velocity):
    width = upper - lower

    def exact(x, t):
        shifted = lower + np.mod(x - velocity * t - lower, width)
        return u0(shifted)

    return exact


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    flux_model: FluxModel
    lower: tuple
    upper: tuple
    initial_condition: Callable
    final_time: float
    bounds: tuple[float, float]
    exact: Callable | None = None
    #: default coefficient initialization: "l2" projection or "nodal" values
    init: str = "nodal"
    smooth: bool = False
    default_scheme: str = "HO-VMS-EV-BP"
    notes: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.flux_model.dimension

    def exact_at(self, x, t):
        if self.exact is None:
            return None
        return self.exact(x, t)


def _sbr_exact(x, t):
    if abs(t - round(t)) > 1e-12:
        raise ValueError("solid body rotation exact solution only available at integer times")
    return _solid_body(x)


def benchmark(name: str) -> BenchmarkProblem:
    """Benchmark presets by name."""
    if name == "adv1d_cos":
        u0 = _cosine_profile
        return BenchmarkProblem(
            name=name, flux_model=linear_advection(1.0), lower=(0.0,), upper=(1.0,),
            initial_condition=u0, final_time=1.0, bounds=(-1.0, 1.0),
            exact=_periodic_shift(u0, np.array([0.0]), np.array([1.0]), np.array([1.0])),
            init="l2", smooth=True, default_scheme="HO-SUPG",
        )
    if name == "adv1d_threebody":
        u0 = _three_body
        return BenchmarkProblem(
            name=name, flux_model=linear_advection(1.0), lower=(0.0,), upper=(1.0,),
            initial_condition=u0, final_time=100.0, bounds=(0.0, 1.0),
            exact=_periodic_shift(u0, np.array([0.0]), np.array([1.0]), np.array([1.0])),
            init="nodal", default_scheme="HO-VMS-EV",
        )
    if name == "burgers1d":
        return BenchmarkProblem(
            name=name, flux_model=burgers(1), lower=(0.0,), upper=(1.0,),
            initial_condition=_sine, final_time=0.1, bounds=(-1.0, 1.0),
            exact=lambda x, t: burgers_sine_exact(x[..., 0], t),
            init="l2", smooth=True, default_scheme="HO-VMS-EV",
            notes={"critical_time": BURGERS_CRITICAL_TIME},
        )
    if name == "solid_body_rotation":
        return BenchmarkProblem(
            name=name, flux_model=rotating_advection(), lower=(0.0, 0.0), upper=(1.0, 1.0),
            initial_condition=_solid_body, final_time=1.0, bounds=(0.0, 1.0),
            exact=_sbr_exact, init="nodal", default_scheme="HO-VMS-EV-BP",
        )
    if name == "buckley_leverett":
        return BenchmarkProblem(
            name=name, flux_model=buckley_leverett(), lower=(-1.5, -1.5), upper=(1.5, 1.5),
            initial_condition=_bl_initial, final_time=0.5, bounds=(0.0, 1.0),
            init="nodal", default_scheme="HO-VMS-EV-FL",
        )
    if name == "kpp":
        return BenchmarkProblem(
            name=name, flux_model=kpp(), lower=(-2.0, -2.5), upper=(2.0, 1.5),
            initial_condition=_kpp_initial, final_time=1.0, bounds=(0.25 * np.pi, 3.5 * np.pi),
            init="nodal", default_scheme="HO-VMS-EV-FL",
        )
    raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")


BENCHMARKS = (
    "adv1d_cos",
    "adv1d_threebody",
    "burgers1d",
    "solid_body_rotation",
    "buckley_leverett",
    "kpp",
)

PRESET_ALIASES = {"sbr": "solid_body_rotation", "bl": "buckley_leverett", "burgers": "burgers1d"}

# }}}
