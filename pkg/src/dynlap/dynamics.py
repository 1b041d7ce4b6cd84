"""Test dynamical systems: iterated maps, non-autonomous flows, flow-map tools.

Flow maps carry their own native time axis.  Map-type systems (the standard
map, the circle shift) use integer iteration counts; ODE-backed systems use
physical time and an adaptive embedded Runge-Kutta pair of order 5(4) with
error control at the configured tolerances.

All point maps are pure and reentrant; trajectories for disjoint points may be
evaluated concurrently.  A module-level counter tallies flow-map point
evaluations so callers can verify cache hits perform no integration work.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigurationError, IntegrationError
from .mesh import Domain2D

log = logging.getLogger(__name__)

_FLOW_EVALS = 0

#: Points integrated per solver call; bounds the size of the stacked ODE system.
INTEGRATION_CHUNK = 20000


def flow_eval_count() -> int:
    """Total flow-map point evaluations since the last reset."""
    return _FLOW_EVALS


def reset_flow_eval_count():
    global _FLOW_EVALS
    _FLOW_EVALS = 0


def _count_evals(n):
    global _FLOW_EVALS
    _FLOW_EVALS += int(n)


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ConfigurationError("integrator tolerances must be positive")


@dataclass(frozen=True)
class FDSettings:
    """Finite-difference step for flow-map Jacobians, relative to domain diameter.

    The default 1e-5 balances the O(step^2) truncation error of the central
    stencil against amplified integrator noise at tolerance 1e-8.
    """

    step: float = 1e-5

    def __post_init__(self):
        if not 0 < self.step < 1:
            raise ConfigurationError("relative FD step must lie in (0, 1)")


def integrate(vector_field, x0, t0, t1, settings: IntegratorSettings | None = None):
    """Integrate one trajectory of `dx/dt = vector_field(t, x)` from t0 to t1.

    Backward integration (t1 < t0) is supported.  Raises `IntegrationError`
    with the last state if the solver gives up.
    """
    settings = settings or IntegratorSettings()
    x0 = np.asarray(x0, dtype=float)
    if t0 == t1:
        return x0.copy()
    sol = solve_ivp(
        lambda t, y: np.asarray(vector_field(t, y), dtype=float),
        (t0, t1),
        x0,
        method="RK45",
        rtol=settings.rel_tol,
        atol=settings.abs_tol,
    )
    if not sol.success:
        raise IntegrationError(
            f"integration from t={t0} to t={t1} failed: {sol.message}",
            last_state=sol.y[:, -1] if sol.y.size else x0,
        )
    return sol.y[:, -1]


def integrate_many(
    vector_field_many,
    points,
    t0,
    t1,
    settings: IntegratorSettings | None = None,
    chunk: int = INTEGRATION_CHUNK,
):
    """Integrate a batch of trajectories as stacked systems, chunked for memory.

    `vector_field_many(t, X)` must accept an (n, 2) array and return (n, 2).
    Chunks are processed in index order, so results are deterministic.
    """
    settings = settings or IntegratorSettings()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if t0 == t1:
        return pts.copy()
    out = np.empty_like(pts)
    for lo in range(0, len(pts), chunk):
        hi = min(lo + chunk, len(pts))
        block = pts[lo:hi]

        def rhs(t, y, n=hi - lo):
            return np.asarray(vector_field_many(t, y.reshape(n, 2)), dtype=float).ravel()

        sol = solve_ivp(
            rhs,
            (t0, t1),
            block.ravel(),
            method="RK45",
            rtol=settings.rel_tol,
            atol=settings.abs_tol,
        )
        if not sol.success:
            raise IntegrationError(
                f"batch integration from t={t0} to t={t1} failed: {sol.message}",
                last_state=sol.y[:, -1].reshape(hi - lo, 2) if sol.y.size else block,
            )
        out[lo:hi] = sol.y[:, -1].reshape(hi - lo, 2)
    return out


# ---------------------------------------------------------------------------
# flow maps
# ---------------------------------------------------------------------------

class FlowMap:
    """Forward/inverse point maps with Jacobians on a fixed domain.

    `forward_raw_many` returns unwrapped coordinates (periodic directions may
    drift out of the fundamental domain); finite differences of images must
    use it so that no wrap seam corrupts the stencil.
    """

    name = "flow"
    domain: Domain2D
    default_times: list
    volume_preserving = True

    def forward_raw_many(self, points, t0, t1):
        raise NotImplementedError

    def inverse_raw_many(self, points, t0, t1):
        """Preimages at time t0 of points given at time t1."""
        raise NotImplementedError

    def jacobian_many(self, points, t0, t1):
        raise NotImplementedError

    def forward_many(self, points, t0, t1):
        return self.domain.wrap(self.forward_raw_many(points, t0, t1))

    def inverse_many(self, points, t0, t1):
        return self.domain.wrap(self.inverse_raw_many(points, t0, t1))

    def forward(self, point, t0, t1):
        return self.forward_many(np.asarray(point, dtype=float)[None, :], t0, t1)[0]

    def inverse(self, point, t0, t1):
        return self.inverse_many(np.asarray(point, dtype=float)[None, :], t0, t1)[0]

    def jacobian(self, point, t0, t1):
        return self.jacobian_many(np.asarray(point, dtype=float)[None, :], t0, t1)[0]


class MapFlow(FlowMap):
    """Flow map generated by iterating an analytic map of the plane.

    Times are integer iterate counts; `forward(p, 0, n)` applies the map n
    times.  Jacobians are exact chain-rule products of the one-step Jacobian.
    """

    def __init__(self, name, domain, step, step_inverse, step_jacobian, iterations=1):
        self.name = name
        self.domain = domain
        self._step = step
        self._step_inv = step_inverse
        self._step_jac = step_jacobian
        self.default_times = [0, iterations]

    @staticmethod
    def _iterate_count(t0, t1):
        n = t1 - t0
        if n != int(n):
            raise ConfigurationError(f"map flows use integer times, got {t0}..{t1}")
        return int(n)

    def forward_raw_many(self, points, t0, t1):
        pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        n = self._iterate_count(t0, t1)
        _count_evals(len(pts) * abs(n))
        stepper = self._step if n >= 0 else self._step_inv
        for _ in range(abs(n)):
            pts = stepper(pts)
        return pts

    def inverse_raw_many(self, points, t0, t1):
        return self.forward_raw_many(points, t1, t0)

    def jacobian_many(self, points, t0, t1):
        pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        n = self._iterate_count(t0, t1)
        if n < 0:
            raise ConfigurationError("Jacobian of backward map iteration not needed")
        _count_evals(len(pts) * n)
        jac = np.tile(np.eye(2), (len(pts), 1, 1))
        for _ in range(n):
            jac = np.einsum("nij,njk->nik", self._step_jac(pts), jac)
            pts = self._step(pts)
        return jac


class ODEFlow(FlowMap):
    """Flow map of a non-autonomous ODE, with finite-difference Jacobians."""

    def __init__(
        self,
        name,
        domain,
        vector_field_many,
        t_start,
        t_end,
        settings: IntegratorSettings | None = None,
        fd: FDSettings | None = None,
    ):
        self.name = name
        self.domain = domain
        self.field = vector_field_many
        self.default_times = [t_start, t_end]
        self.settings = settings or IntegratorSettings()
        self.fd = fd or FDSettings()

    def forward_raw_many(self, points, t0, t1):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _count_evals(len(pts))
        return integrate_many(self.field, pts, t0, t1, self.settings)

    def inverse_raw_many(self, points, t0, t1):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _count_evals(len(pts))
        return integrate_many(self.field, pts, t1, t0, self.settings)

    def jacobian_many(self, points, t0, t1):
        return jacobian_fd_many(self, points, t0, t1, self.fd)


def jacobian_fd_many(flow: FlowMap, points, t0, t1, fd: FDSettings | None = None):
    """Second-order finite-difference flow-map Jacobians for a batch of points.

    Central differences are used wherever the stencil stays inside the domain;
    points within one step of a non-periodic boundary fall back to one-sided
    second-order stencils (logged once per call).
    """
    fd = fd or FDSettings()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dom = flow.domain
    h = fd.step * dom.diameter
    n = len(pts)
    jac = np.empty((n, 2, 2))
    base = None
    for d in range(2):
        lo_ok = np.ones(n, dtype=bool)
        hi_ok = np.ones(n, dtype=bool)
        periodic = dom.periodic_x if d == 0 else dom.periodic_y
        if not periodic:
            dmin = dom.x_min if d == 0 else dom.y_min
            dmax = dom.x_max if d == 0 else dom.y_max
            lo_ok = pts[:, d] - h >= dmin
            hi_ok = pts[:, d] + h <= dmax
        central = lo_ok & hi_ok
        fwd = ~lo_ok
        bwd = ~hi_ok & lo_ok
        if np.any(fwd) or np.any(bwd):
            log.warning(
                "FD stencil touches the boundary for %d point(s) in dim %d; "
                "using one-sided differences",
                int(np.sum(fwd) + np.sum(bwd)),
                d,
            )
            if base is None:
                base = flow.forward_raw_many(pts, t0, t1)
        col = np.empty((n, 2))
        if np.any(central):
            p_hi = pts[central].copy()
            p_hi[:, d] += h
            p_lo = pts[central].copy()
            p_lo[:, d] -= h
            f_hi = flow.forward_raw_many(p_hi, t0, t1)
            f_lo = flow.forward_raw_many(p_lo, t0, t1)
            col[central] = (f_hi - f_lo) / (2 * h)
        for mask, sign in ((fwd, 1.0), (bwd, -1.0)):
            if not np.any(mask):
                continue
            p1 = pts[mask].copy()
            p1[:, d] += sign * h
            p2 = pts[mask].copy()
            p2[:, d] += sign * 2 * h
            f1 = flow.forward_raw_many(p1, t0, t1)
            f2 = flow.forward_raw_many(p2, t0, t1)
            col[mask] = sign * (-3 * base[mask] + 4 * f1 - f2) / (2 * h)
        jac[:, :, d] = col
    return jac


def jacobian_fd(flow: FlowMap, p, t0, t1, fd: FDSettings | None = None):
    """Finite-difference Jacobian of the flow map at a single point."""
    return jacobian_fd_many(flow, np.asarray(p, dtype=float)[None, :], t0, t1, fd)[0]


# ---------------------------------------------------------------------------
# named systems
# ---------------------------------------------------------------------------

STANDARD_MAP_A = 0.971635


def standard_map(p, a=STANDARD_MAP_A):
    """One application of the shear map on the 2-pi torus."""
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    out = _standard_step(pts, a)
    out = np.mod(out, 2 * np.pi)
    return out[0] if np.asarray(p).ndim == 1 else out


def standard_map_inverse(p, a=STANDARD_MAP_A):
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    out = _standard_step_inv(pts, a)
    out = np.mod(out, 2 * np.pi)
    return out[0] if np.asarray(p).ndim == 1 else out


def _standard_step(pts, a):
    x, y = pts[:, 0], pts[:, 1]
    y_new = y + a * np.sin(x)
    return np.column_stack([x + y_new, y_new])


def _standard_step_inv(pts, a):
    X, Y = pts[:, 0], pts[:, 1]
    x = X - Y
    return np.column_stack([x, Y - a * np.sin(x)])


def _standard_step_jac(pts, a):
    x = pts[:, 0]
    jac = np.empty((len(pts), 2, 2))
    jac[:, 0, 0] = 1 + a * np.cos(x)
    jac[:, 0, 1] = 1.0
    jac[:, 1, 0] = a * np.cos(x)
    jac[:, 1, 1] = 1.0
    return jac


def shift_map_1d(x, alpha):
    """Rigid rotation of the unit circle: x -> (x + alpha) mod 1."""
    return np.mod(np.asarray(x, dtype=float) + alpha, 1.0)


@dataclass(frozen=True)
class Shift1DMap:
    """Circle rotation as a tiny flow-map object for the one-dimensional study.

    As with the other map systems, the transported map is `iterations`
    applications of the one-step rotation, so the total shift is
    `iterations * alpha`.
    """

    alpha: float = 0.15
    iterations: int = 2

    @property
    def total_shift(self):
        return self.alpha * self.iterations

    def forward(self, x):
        return shift_map_1d(x, self.total_shift)

    def inverse(self, x):
        return shift_map_1d(x, -self.total_shift)

    def forward_single(self, x):
        return shift_map_1d(x, self.alpha)


def cylinder_field(t, p, c=0.5, nu=0.5, eps=0.25):
    """Velocity of the periodically forced cylinder flow.

    The unforced part is the stream-function flow of
    `psi = A(t) sin(x - nu t) sin(y) - c y`; the forcing enters the
    x-component only.
    """
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    amp = 1.0 + 0.125 * np.sin(2.0 * np.sqrt(5.0) * t)
    phase = x - nu * t
    g = np.sin(phase) * np.sin(y) + y / 2.0 - np.pi / 4.0
    forcing = eps * np.sin(t / 2.0) / (g * g + 1.0) ** 2
    vx = c - amp * np.sin(phase) * np.cos(y) + forcing
    vy = amp * np.cos(phase) * np.sin(y)
    out = np.column_stack([vx, vy])
    return out[0] if np.asarray(p).ndim == 1 else out


@dataclass(frozen=True)
class BickleyParams:
    """Constants of the meandering-jet benchmark (lengths in Mm, time in s)."""

    U0: float = 62.66e-6
    L: float = 1.77
    r0: float = 6.371
    amplitudes: tuple = (0.0075, 0.15, 0.3)
    days: float = 40.0

    @property
    def wavenumbers(self):
        return tuple(2.0 * n / self.r0 for n in (1, 2, 3))

    @property
    def phase_speeds(self):
        c3 = 0.461 * self.U0
        c2 = 0.205 * self.U0
        k1, k2, _ = self.wavenumbers
        c1 = c3 + ((np.sqrt(5.0) - 1.0) / 2.0) * (k2 / k1) * (c2 - c3)
        return (c1, c2, c3)

    @property
    def x_period(self):
        return np.pi * self.r0

    @property
    def seconds(self):
        return self.days * 86400.0


def bickley_stream_function(t, p, params: BickleyParams = BickleyParams()):
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    U0, L = params.U0, params.L
    psi = -U0 * L * np.tanh(y / L)
    sech2 = 1.0 / np.cosh(y / L) ** 2
    for amp, k, c in zip(params.amplitudes, params.wavenumbers, params.phase_speeds):
        psi = psi + amp * U0 * L * sech2 * np.cos(k * (x - c * t))
    return psi[0] if np.asarray(p).ndim == 1 else psi


def bickley_field(t, p, params: BickleyParams = BickleyParams()):
    """Velocity (-dpsi/dy, dpsi/dx) of the meandering-jet stream function."""
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    U0, L = params.U0, params.L
    sech2 = 1.0 / np.cosh(y / L) ** 2
    tanh_y = np.tanh(y / L)
    vx = U0 * sech2
    vy = np.zeros_like(x)
    for amp, k, c in zip(params.amplitudes, params.wavenumbers, params.phase_speeds):
        cos_term = np.cos(k * (x - c * t))
        sin_term = np.sin(k * (x - c * t))
        vx = vx + 2.0 * amp * U0 * sech2 * tanh_y * cos_term
        vy = vy - amp * U0 * L * k * sech2 * sin_term
    out = np.column_stack([vx, vy])
    return out[0] if np.asarray(p).ndim == 1 else out


TORUS_2PI = Domain2D(0.0, 2 * np.pi, 0.0, 2 * np.pi, periodic_x=True, periodic_y=True)

CYLINDER_DOMAIN = Domain2D(0.0, 2 * np.pi, 1e-2, np.pi - 1e-2, periodic_x=True)


def make_system(name, **params):
    """Named system presets with parameter overrides.

    `standard_map`, `cylinder` and `bickley` return `FlowMap`s; `shift1d`
    returns the circle rotation used by the one-dimensional study.
    """
    if name == "standard_map":
        a = params.pop("a", STANDARD_MAP_A)
        iterations = params.pop("iterations", 2)
        _reject_extras(name, params)
        return MapFlow(
            "standard_map",
            TORUS_2PI,
            lambda pts: _standard_step(pts, a),
            lambda pts: _standard_step_inv(pts, a),
            lambda pts: _standard_step_jac(pts, a),
            iterations=iterations,
        )
    if name == "cylinder":
        c = params.pop("c", 0.5)
        nu = params.pop("nu", 0.5)
        eps = params.pop("eps", 0.25)
        t_end = params.pop("t_end", 40.0)
        settings = params.pop("settings", None)
        fd = params.pop("fd", None)
        _reject_extras(name, params)
        return ODEFlow(
            "cylinder",
            CYLINDER_DOMAIN,
            lambda t, pts: cylinder_field(t, pts, c=c, nu=nu, eps=eps),
            0.0,
            t_end,
            settings=settings,
            fd=fd,
        )
    if name == "bickley":
        fields = {f.name for f in BickleyParams.__dataclass_fields__.values()}
        bp = BickleyParams(**{k: params.pop(k) for k in list(params) if k in fields})
        settings = params.pop("settings", None)
        fd = params.pop("fd", None)
        _reject_extras(name, params)
        domain = Domain2D(0.0, bp.x_period, -3.0, 3.0, periodic_x=True)
        return ODEFlow(
            "bickley",
            domain,
            lambda t, pts: bickley_field(t, pts, params=bp),
            0.0,
            bp.seconds,
            settings=settings,
            fd=fd,
        )
    if name == "shift1d":
        alpha = params.pop("alpha", 0.15)
        iterations = params.pop("iterations", 2)
        _reject_extras(name, params)
        return Shift1DMap(alpha=alpha, iterations=iterations)
    raise ConfigurationError(f"unknown system {name!r}")


def _reject_extras(name, params):
    if params:
        raise ConfigurationError(f"unknown parameters for {name}: {sorted(params)}")
