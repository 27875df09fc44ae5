"""Collinear n-body integration through binary collisions.

Away from collisions the first-order system is integrated in physical time
with an adaptive 8(5,3) Runge-Kutta pair.  Two ways through a collision:

``regularized``
    When an adjacent gap drops below ``switch_radius`` its pair enters a
    Levi-Civita chart ``gap = Q**2`` with conjugate momentum ``P_Q`` while
    the pair centre of mass and every other body stay Cartesian.  Time is
    transformed by ``dt = g ds`` with ``g = 1 / sum_j Q_j**-2``, which is
    ``Q**2`` for one pair and stays regular when several pairs collide at
    once.  The flow of ``g * (H - E)`` on its zero level is smooth through
    ``Q = 0``.

``bounce``
    When a gap reaches ``switch_radius`` the pair is replaced by its centre
    of mass for the time the unperturbed radial Kepler motion spends inside
    that radius, and re-emerges with the relative velocity reflected.  This
    is the elastic extension that block regularization gives in one
    dimension.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.optimize import brentq

from .action import DiscretePath
from .core import PhaseState
from .errors import CollisionConfiguration, NonRegularizableEvent, StepFailure

REGULARIZED = "regularized"
BOUNCE = "bounce"
SWITCH_FRACTION = 1e-3
PROBE_FRACTION = 1e-2  # alpha probes sit at gap ~ PROBE_FRACTION * switch_radius
SAFE_GAP = 0.1  # energy drift is judged where every gap exceeds this fraction of the scale


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    switch_radius: float | None = None
    max_step: float = np.inf
    collision_mode: str = REGULARIZED
    max_events: int = 100000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("integration tolerances must be positive")
        if self.switch_radius is not None and not self.switch_radius > 0:
            raise ValueError("switch_radius must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.collision_mode not in (REGULARIZED, BOUNCE):
            raise ValueError(f"unknown collision mode {self.collision_mode!r}")


@dataclass(frozen=True)
class PairData:
    """Relative coordinate ``xi = x_b - x_a``, its sign and the pair energy.

    ``alpha`` is the two-body energy of the relative motion.  ``alpha_literal``
    carries the square root of the reduced mass on the potential term; it is
    kept as a diagnostic only and is not finite at a collision.
    """

    pair: tuple[int, int]
    xi: float
    s: int
    alpha: float
    alpha_literal: float = float("nan")


@dataclass
class CollisionEvent:
    time: float
    pairs: tuple
    pre: tuple
    post: tuple
    energy_before: float
    energy_after: float
    mode: str
    switch_radius: float


@dataclass
class Trajectory:
    samples: list
    events: list = field(default_factory=list)
    masses: np.ndarray | None = None
    switch_radius: float = float("nan")
    mode: str = REGULARIZED

    @property
    def times(self) -> np.ndarray:
        return np.array([p.time for p in self.samples])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.positions for p in self.samples]).T

    @property
    def velocities(self) -> np.ndarray:
        return np.array([p.velocities for p in self.samples]).T

    @property
    def final(self) -> PhaseState:
        return self.samples[-1]


# ----------------------------------------------------------------- physics


def accelerations(x, masses) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    m = np.asarray(masses, dtype=float)
    d = x[None, :] - x[:, None]
    r = np.abs(d)
    np.fill_diagonal(r, 1.0)
    if np.any(r == 0.0):
        raise CollisionConfiguration("two bodies occupy the same point")
    inv = 1.0 / r**3
    np.fill_diagonal(inv, 0.0)
    return (d * inv) @ m


def derivative_field(state: PhaseState, masses) -> PhaseState:
    """Time derivative ``(x', v') = (v, a)`` packed as a PhaseState."""
    return PhaseState(state.time, state.velocities.copy(), accelerations(state.positions, masses))


def energy(positions, velocities, masses) -> float:
    """Total energy ``K - U`` with ``U`` the positive force function."""
    x = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    m = np.asarray(masses, dtype=float)
    U = 0.0
    for i in range(m.size):
        U += float(np.sum(m[i] * m[i + 1 :] / np.abs(x[i + 1 :] - x[i])))
    return 0.5 * float(m @ v**2) - U


def pair_data(x, v, masses, a) -> PairData:
    m = np.asarray(masses, dtype=float)
    ma, mb = m[a], m[a + 1]
    mu = ma * mb / (ma + mb)
    xi = float(x[a + 1] - x[a])
    xid = float(v[a + 1] - v[a])
    alpha = 0.5 * mu * xid**2 - ma * mb / abs(xi)
    literal = 0.5 * mu * xid**2 - np.sqrt(mu) * ma * mb / abs(xi)
    return PairData((a + 1, a + 2), xi, int(np.sign(xi)), alpha, literal)


def system_scale(positions) -> float:
    g = np.diff(np.sort(np.asarray(positions, dtype=float)))
    return float(np.mean(g)) if g.size else 1.0


# ------------------------------------------------------- radial Kepler motion


def radial_fall_time(xi, e, k) -> float:
    """Time a radial Kepler orbit ``xi'' = -k / xi**2`` needs between 0 and ``xi``.

    ``e = xi'**2 / 2 - k / xi`` is the specific energy.  The substitution
    ``r = xi w**2`` removes the endpoint singularity.
    """
    if xi <= 0.0:
        return 0.0
    c = k / xi

    def f(w):
        return 2.0 * xi * w * w / np.sqrt(2.0 * (e * w * w + c))

    # starting at apocentre leaves an integrable 1/sqrt singularity at w = 1
    # on which quad warns while still meeting the tolerance
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        return quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)[0]


def radial_separation(tau, e, k, xi_max) -> float:
    """Inverse of :func:`radial_fall_time` on ``[0, xi_max]``."""
    if tau <= 0.0:
        return 0.0
    t_max = radial_fall_time(xi_max, e, k)
    if tau >= t_max:
        return xi_max
    return brentq(lambda r: radial_fall_time(r, e, k) - tau, 0.0, xi_max, xtol=1e-16, rtol=1e-15)


# ----------------------------------------------------------- Levi-Civita chart


class _Chart:
    """Phase-space chart regularizing the adjacent pairs in ``pairs``.

    Coordinates ``y = [t, q..., p...]`` with one slot per single body and
    two slots ``(X, Q)`` / ``(P, P_Q)`` per regularized pair.
    """

    def __init__(self, masses, pairs, E):
        self.m = np.asarray(masses, dtype=float)
        self.n = self.m.size
        self.pairs = tuple(sorted(pairs))
        self.E = float(E)
        members = {a for p in self.pairs for a in (p, p + 1)}
        self.singles = [i for i in range(self.n) if i not in members]
        self.k = len(self.pairs)
        ma = self.m[list(self.pairs)]
        mb = self.m[[p + 1 for p in self.pairs]]
        self.ma, self.mb = ma, mb
        self.Mp = ma + mb
        self.mu = ma * mb / self.Mp
        self.mm = ma * mb
        mask = np.ones((self.n, self.n))
        np.fill_diagonal(mask, 0.0)
        for p in self.pairs:
            mask[p, p + 1] = mask[p + 1, p] = 0.0
        self.mask = mask
        self.mm_full = np.outer(self.m, self.m)
        self.ns = len(self.singles)
        self.dim = self.ns + 2 * self.k

    # layout: q = [x_singles, X_pairs, Q_pairs], p = [p_singles, P_pairs, PQ_pairs]
    def split(self, y):
        q = y[1 : 1 + self.dim]
        p = y[1 + self.dim :]
        ns, k = self.ns, self.k
        return (q[:ns], q[ns : ns + k], q[ns + k :], p[:ns], p[ns : ns + k], p[ns + k :])

    def positions(self, y):
        xs, X, Q, _, _, _ = self.split(y)
        x = np.empty(self.n)
        x[self.singles] = xs
        xi = Q * Q
        x[list(self.pairs)] = X - self.mb * xi / self.Mp
        x[[p + 1 for p in self.pairs]] = X + self.ma * xi / self.Mp
        return x

    def gaps(self, y):
        return np.diff(self.positions(y))

    def to_physical(self, y):
        xs, X, Q, ps, P, PQ = self.split(y)
        x = self.positions(y)
        v = np.empty(self.n)
        v[self.singles] = ps / self.m[self.singles]
        V = P / self.Mp
        with np.errstate(divide="ignore", invalid="ignore"):
            xid = PQ / (2.0 * Q * self.mu)
        v[list(self.pairs)] = V - self.mb * xid / self.Mp
        v[[p + 1 for p in self.pairs]] = V + self.ma * xid / self.Mp
        return float(y[0]), x, v

    def from_physical(self, t, x, v):
        m = self.m
        a = list(self.pairs)
        b = [p + 1 for p in self.pairs]
        X = (m[a] * x[a] + m[b] * x[b]) / self.Mp
        P = m[a] * v[a] + m[b] * v[b]
        xi = x[b] - x[a]
        if np.any(xi <= 0.0):
            raise CollisionConfiguration("cannot enter the chart at a collision")
        Q = np.sqrt(xi)
        PQ = 2.0 * Q * self.mu * (v[b] - v[a])
        s = self.singles
        return np.concatenate([[t], x[s], X, Q, m[s] * v[s], P, PQ])

    def convert(self, y, other: "_Chart"):
        """Map a point of ``other`` into this chart, copying shared pairs."""
        t, x, v = other.to_physical(y)
        z = self.from_physical_partial(t, x, v, other, y)
        return z

    def from_physical_partial(self, t, x, v, other, y):
        oxs, oX, oQ, ops, oP, oPQ = other.split(y)
        m = self.m
        s = self.singles
        X = np.empty(self.k)
        Q = np.empty(self.k)
        P = np.empty(self.k)
        PQ = np.empty(self.k)
        for j, p in enumerate(self.pairs):
            if p in other.pairs:
                i = other.pairs.index(p)
                X[j], Q[j], P[j], PQ[j] = oX[i], oQ[i], oP[i], oPQ[i]
            else:
                a, b = p, p + 1
                X[j] = (m[a] * x[a] + m[b] * x[b]) / self.Mp[j]
                P[j] = m[a] * v[a] + m[b] * v[b]
                Q[j] = np.sqrt(x[b] - x[a])
                PQ[j] = 2.0 * Q[j] * self.mu[j] * (v[b] - v[a])
        return np.concatenate([[t], x[s], X, Q, m[s] * v[s], P, PQ])

    def _weights(self, Q):
        sq = Q * Q
        k = self.k
        G = np.array([np.prod(np.delete(sq, j)) for j in range(k)])
        D = float(G.sum())
        Pr = float(np.prod(sq))
        # dG[l, j] = d G_l / d Q_j
        dG = np.zeros((k, k))
        for l in range(k):
            for j in range(k):
                if l != j:
                    dG[l, j] = 2.0 * Q[j] * np.prod(np.delete(sq, [l, j]))
        dD = dG.sum(axis=0)
        dPr = 2.0 * Q * G
        g = Pr / D
        dg = (dPr * D - Pr * dD) / D**2
        w = G / D
        dw = (dG * D - np.outer(G, dD)) / D**2
        return g, dg, w, dw

    def rest_potential(self, x):
        d = x[None, :] - x[:, None]
        r = np.where(self.mask > 0.0, np.abs(d), 1.0)
        inv = self.mask / r
        U = 0.5 * float(np.sum(self.mm_full * inv))
        F = np.sum(self.mm_full * inv * d / r**2, axis=1)
        return U, F

    def hamiltonian_parts(self, y):
        xs, X, Q, ps, P, PQ = self.split(y)
        x = self.positions(y)
        U, F = self.rest_potential(x)
        K = float(np.sum(ps**2 / self.m[self.singles])) / 2.0 + float(np.sum(P**2 / self.Mp)) / 2.0
        C = PQ**2 / (8.0 * self.mu) - self.mm
        return x, U, F, K - U - self.E, C

    def rhs(self, s, y):
        xs, X, Q, ps, P, PQ = self.split(y)
        x, U, F, Hreg, C = self.hamiltonian_parts(y)
        g, dg, w, dw = self._weights(Q)
        a = list(self.pairs)
        b = [p + 1 for p in self.pairs]
        Fs = F[self.singles]
        FP = F[a] + F[b]
        dUdQ = 2.0 * Q * (F[b] * self.ma - F[a] * self.mb) / self.Mp
        dxs = g * ps / self.m[self.singles]
        dX = g * P / self.Mp
        dQ = w * PQ / (4.0 * self.mu)
        dps = g * Fs
        dP = g * FP
        dPQ = -(dg * Hreg - g * dUdQ + dw.T @ C)
        return np.concatenate([[g], dxs, dX, dQ, dps, dP, dPQ])

    def gamma(self, y):
        """Regularized Hamiltonian; zero on the energy level ``E``."""
        _, Hreg, C = self.hamiltonian_parts(y)[2:]
        g, _, w, _ = self._weights(self.split(y)[2])
        return g * Hreg + float(w @ C)

    def alpha(self, y, j):
        """Energy of pair ``j`` from energy closure ``sum_l alpha_l = -H_reg``.

        Only the other pairs enter through ``C_l / Q_l**2``, so the value is
        regular at ``Q_j = 0`` and free of the cancellation in ``C_j / Q_j**2``.
        """
        Q = self.split(y)[2]
        _, Hreg, C = self.hamiltonian_parts(y)[2:]
        others = [l for l in range(self.k) if l != j]
        return -Hreg - float(sum(C[l] / Q[l] ** 2 for l in others))


# ----------------------------------------------------------------- drivers


def _phys_rhs(masses):
    n = len(masses)

    def f(t, y):
        return np.concatenate([y[n:], accelerations(y[:n], masses)])

    return f


def _gap_event(j, r, direction, n):
    def ev(t, y):
        return y[j + 1] - y[j] - r

    ev.terminal = True
    ev.direction = direction
    return ev


class _Recorder:
    def __init__(self, masses, sample_times):
        self.masses = masses
        self.samples = []
        self.sample_times = None if sample_times is None else np.sort(np.asarray(sample_times, dtype=float))
        self.last = -np.inf

    def add(self, t, x, v):
        if t > self.last and np.all(np.isfinite(v)):
            self.samples.append(PhaseState(float(t), np.array(x, dtype=float), np.array(v, dtype=float)))
            self.last = t

    def wanted(self, t0, t1, include_end=False):
        st = self.sample_times
        if st is None:
            return np.empty(0)
        sel = (st > t0) & ((st <= t1) if include_end else (st < t1))
        return st[sel]


def _solve(fun, span, y0, opts, events, max_step=np.inf):
    sol = solve_ivp(
        fun,
        span,
        y0,
        method="DOP853",
        rtol=opts.rel_tol,
        atol=opts.abs_tol,
        events=events,
        dense_output=True,
        max_step=max_step,
    )
    if sol.status == -1:
        raise StepFailure(sol.message)
    return sol


def integrate(state0: PhaseState, t_end: float, masses, opts: IntegratorOptions | None = None, sample_times=None) -> Trajectory:
    """Integrate forward from ``state0`` to ``t_end`` through binary collisions.

    Bodies must start strictly ordered.  Without ``sample_times`` every
    accepted step is recorded; otherwise the trajectory holds the start,
    the requested times in ``(t0, t_end]`` and the end state.
    """
    opts = opts or IntegratorOptions()
    m = np.asarray(masses, dtype=float)
    x0 = np.asarray(state0.positions, dtype=float)
    v0 = np.asarray(state0.velocities, dtype=float)
    if x0.shape != m.shape or v0.shape != m.shape:
        raise ValueError("state and masses disagree in size")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(v0))):
        raise ValueError("start state is not finite")
    if np.any(np.diff(x0) <= 0.0):
        raise CollisionConfiguration("bodies must start strictly ordered and separated")
    t0 = float(state0.time)
    if not t_end > t0:
        raise ValueError("t_end must exceed the start time")
    r = opts.switch_radius if opts.switch_radius is not None else SWITCH_FRACTION * system_scale(x0)
    rec = _Recorder(m, sample_times)
    rec.add(t0, x0, v0)
    if opts.collision_mode == REGULARIZED:
        events = _run_regularized(t0, x0, v0, float(t_end), m, opts, r, rec)
    else:
        events = _run_bounce(t0, x0, v0, float(t_end), m, opts, r, rec)
    return Trajectory(rec.samples, events, m, r, opts.collision_mode)


def _check_pairs(pairs, t):
    ps = sorted(pairs)
    for a, b in zip(ps, ps[1:]):
        if b == a + 1:
            raise NonRegularizableEvent(
                f"bodies {a + 1}, {a + 2}, {a + 3} are within the switch radius of a common point",
                time=t,
                bodies=(a + 1, a + 2, a + 3),
            )


def _run_regularized(t, x, v, t_end, m, opts, r, rec):
    n = m.size
    events = []
    chart = None
    y = None
    while True:
        if chart is None:
            fun = _phys_rhs(m)
            evs = [_gap_event(j, r, -1, n) for j in range(n - 1)]
            sol = _solve(fun, (t, t_end), np.concatenate([x, v]), opts, evs, opts.max_step)
            ts = sol.t
            for tt, yy in zip(ts[1:], sol.y[:, 1:].T):
                if rec.sample_times is None:
                    rec.add(tt, yy[:n], yy[n:])
            for tt in rec.wanted(ts[0], ts[-1], include_end=True):
                yy = sol.sol(tt)
                rec.add(tt, yy[:n], yy[n:])
            t, x, v = float(ts[-1]), sol.y[:n, -1].copy(), sol.y[n:, -1].copy()
            if sol.status == 0:
                rec.add(t, x, v)
                return events
            hit = [j for j in range(n - 1) if sol.t_events[j].size]
            gaps = np.diff(x)
            pairs = set(hit) | {j for j in range(n - 1) if gaps[j] <= r}
            _check_pairs(pairs, t)
            chart = _Chart(m, pairs, energy(x, v, m))
            y = chart.from_physical(t, x, v)
            continue

        y, chart, status = _chart_segment(chart, y, t_end, m, opts, r, rec, events)
        if len(events) > opts.max_events:
            raise StepFailure("too many collision events")
        if status == "done":
            t, x, v = chart.to_physical(y)
            rec.add(t, x, v)
            return events
        if chart.k == 0:
            t, x, v = chart.to_physical(y)
            chart = None


def _chart_segment(chart, y, t_end, m, opts, r, rec, events):
    n = m.size
    k = chart.k
    fun = chart.rhs

    def ev_time(s, yy):
        return yy[0] - t_end

    ev_time.terminal = True
    ev_time.direction = 1
    evs = [ev_time]
    exits = []
    for j in range(k):
        def ev(s, yy, j=j):
            return chart.split(yy)[2][j] ** 2 - r

        ev.terminal = True
        ev.direction = 1
        exits.append(ev)
    evs += exits
    outside = [j for j in range(n - 1) if j not in chart.pairs]
    entries = []
    for j in outside:
        def ev(s, yy, j=j):
            xx = chart.positions(yy)
            return xx[j + 1] - xx[j] - r

        ev.terminal = True
        ev.direction = -1
        entries.append(ev)
    evs += entries
    roots = []
    for j in range(k):
        def ev(s, yy, j=j):
            return chart.split(yy)[2][j]

        ev.terminal = False
        ev.direction = 0
        roots.append(ev)
    evs += roots

    # s runs until a terminal event; bound it generously by the physical span
    Q = chart.split(y)[2]
    g0 = 1.0 / float(np.sum(1.0 / (Q * Q)))
    s_span = 1e6 * max(t_end - y[0], r ** 1.5) / g0
    sol = _solve(fun, (0.0, s_span), y, opts, evs)
    if sol.status == 0:
        raise StepFailure("regularized segment ended without reaching an event")

    if rec.sample_times is None:
        for yy in sol.y[:, 1:].T:
            t, xx, vv = chart.to_physical(yy)
            rec.add(t, xx, vv)
    else:
        tvals = sol.y[0]
        for tt in rec.wanted(tvals[0], tvals[-1], include_end=True):
            ss = brentq(lambda s: sol.sol(s)[0] - tt, sol.t[0], sol.t[-1], xtol=1e-15, rtol=1e-15)
            t_, xx, vv = chart.to_physical(sol.sol(ss))
            rec.add(tt, xx, vv)

    base = 1 + k + len(outside)
    for j in range(k):
        for s0 in sol.t_events[base + j]:
            events.append(_chart_collision(chart, sol, float(s0), j, r, opts))

    yend = sol.y[:, -1].copy()
    if sol.t_events[0].size:
        return yend, chart, "done"
    leaving = {chart.pairs[j] for j in range(k) if sol.t_events[1 + j].size}
    joining = {outside[i] for i in range(len(outside)) if sol.t_events[1 + k + i].size}
    pairs = (set(chart.pairs) - leaving) | joining
    _check_pairs(pairs, float(yend[0]))
    if pairs:
        new = _Chart(m, pairs, chart.E)
        t, xx, vv = chart.to_physical(yend)
        yend = new.from_physical_partial(t, xx, vv, chart, yend)
    else:
        new = _Chart(m, (), chart.E)
        t, xx, vv = chart.to_physical(yend)
        yend = np.concatenate([[t], xx, m * vv])
    return yend, new, "switch"


def _chart_collision(chart, sol, s0, j, r, opts):
    y0 = sol.sol(s0)
    Q = chart.split(y0)[2]
    PQ = chart.split(y0)[5]
    g, dg, w, dw = chart._weights(Q)
    rate = abs(w[j] * PQ[j] / (4.0 * chart.mu[j]))
    h = np.sqrt(PROBE_FRACTION * r) / max(rate, 1e-300)
    lo, hi = sol.t[0], sol.t[-1]

    def side(sign):
        vals = []
        for i in (1, 2, 3):
            s = min(max(s0 + sign * i * h, lo), hi)
            vals.append(chart.alpha(sol.sol(s), j))
        # quadratic extrapolation from s0 +- (h, 2h, 3h) back to s0
        return 3.0 * vals[0] - 3.0 * vals[1] + vals[2]

    a_minus = side(-1.0)
    a_plus = side(+1.0)
    # energies where the segment enters and leaves the chart
    e_minus = energy(*chart.to_physical(sol.y[:, 0])[1:], chart.m)
    e_plus = energy(*chart.to_physical(sol.y[:, -1])[1:], chart.m)
    p = chart.pairs[j]
    pre = PairData((p + 1, p + 2), 0.0, 1, float(a_minus))
    post = PairData((p + 1, p + 2), 0.0, 1, float(a_plus))
    return CollisionEvent(float(y0[0]), ((p + 1, p + 2),), (pre,), (post,), e_minus, e_plus, REGULARIZED, r)


# ------------------------------------------------------------------ bounce


@dataclass
class _Merge:
    a: int
    t_c: float
    t_out: float
    e: float
    k: float
    r: float


def _run_bounce(t, x, v, t_end, m, opts, r, rec):
    n = m.size
    events = []
    merges: dict[int, _Merge] = {}

    def units():
        """Unit index lists (body ids) for the current merge state."""
        out = []
        i = 0
        while i < n:
            if i in merges:
                out.append((i, i + 1))
                i += 2
            else:
                out.append((i,))
                i += 1
        return out

    def compress(x, v):
        us = units()
        mu = np.array([m[list(u)].sum() for u in us])
        X = np.array([m[list(u)] @ x[list(u)] for u in us]) / mu
        V = np.array([m[list(u)] @ v[list(u)] for u in us]) / mu
        return us, mu, X, V

    def expand(us, X, V, tt):
        xx = np.empty(n)
        vv = np.empty(n)
        for u, Xu, Vu in zip(us, X, V):
            if len(u) == 1:
                xx[u[0]], vv[u[0]] = Xu, Vu
                continue
            a, b = u
            mg = merges[a]
            tau = tt - mg.t_c
            xi = radial_separation(abs(tau), mg.e, mg.k, mg.r)
            xid = np.sign(tau) * np.sqrt(max(2.0 * (mg.e + mg.k / xi), 0.0)) if xi > 0 else np.nan
            xx[a] = Xu - m[b] * xi / mg.k
            xx[b] = Xu + m[a] * xi / mg.k
            vv[a] = Vu - m[b] * xid / mg.k
            vv[b] = Vu + m[a] * xid / mg.k
        return xx, vv

    while True:
        us, mu, X, V = compress(x, v)
        nu = len(us)
        t_stop = min([t_end] + [mg.t_out for mg in merges.values()])
        fun = _phys_rhs(mu)
        evs = [_gap_event(j, r, -1, nu) for j in range(nu - 1)]
        sol = _solve(fun, (t, t_stop), np.concatenate([X, V]), opts, evs, opts.max_step)
        ts = sol.t
        if rec.sample_times is None:
            for tt, yy in zip(ts[1:], sol.y[:, 1:].T):
                xx, vv = expand(us, yy[:nu], yy[nu:], tt)
                rec.add(tt, xx, vv)
        else:
            for tt in rec.wanted(ts[0], ts[-1], include_end=True):
                yy = sol.sol(tt)
                xx, vv = expand(us, yy[:nu], yy[nu:], tt)
                rec.add(tt, xx, vv)
        t = float(ts[-1])
        Xe, Ve = sol.y[:nu, -1], sol.y[nu:, -1]
        if sol.status == 0:
            if t >= t_end:
                x, v = expand(us, Xe, Ve, t)
                rec.add(t, x, v)
                return events
            # a merged pair re-emerges at exactly the switch radius
            done = [a for a, mg in merges.items() if mg.t_out <= t]
            for a in done:
                mg = merges[a]
                i = us.index((a, a + 1))
                xid = np.sqrt(2.0 * (mg.e + mg.k / mg.r))
                Xu, Vu = Xe[i], Ve[i]
                Xe = np.concatenate([Xe[:i], [Xu - m[a + 1] * mg.r / mg.k, Xu + m[a] * mg.r / mg.k], Xe[i + 1 :]])
                Ve = np.concatenate([Ve[:i], [Vu - m[a + 1] * xid / mg.k, Vu + m[a] * xid / mg.k], Ve[i + 1 :]])
                us = us[:i] + [(a,), (a + 1,)] + us[i + 1 :]
                del merges[a]
            x, v = expand(us, Xe, Ve, t)
            for ev in events:
                if ev.energy_after is None:
                    ev.energy_after = energy(x, v, m)
            continue

        x, v = expand(us, Xe, Ve, t)
        hit = [j for j in range(nu - 1) if sol.t_events[j].size]
        for j in hit:
            if len(us[j]) > 1 or len(us[j + 1]) > 1:
                bodies = tuple(i + 1 for i in us[j] + us[j + 1])
                raise NonRegularizableEvent(
                    f"bodies {', '.join(map(str, bodies))} are within the switch radius of a common point",
                    time=t,
                    bodies=bodies,
                )
        e_before = energy(x, v, m)
        for j in hit:
            a = us[j][0]
            k = m[a] + m[a + 1]
            xi = x[a + 1] - x[a]
            xid = v[a + 1] - v[a]
            e = 0.5 * xid**2 - k / xi
            tau = radial_fall_time(xi, e, k)
            merges[a] = _Merge(a, t + tau, t + 2.0 * tau, e, k, xi)
            mu_ab = m[a] * m[a + 1] / k
            pd = PairData((a + 1, a + 2), 0.0, 1, float(mu_ab * e))
            events.append(CollisionEvent(t + tau, ((a + 1, a + 2),), (pd,), (pd,), e_before, None, BOUNCE, r))
        if len(events) > opts.max_events:
            raise StepFailure("too many collision events")


# ------------------------------------------------------- path-level checks


@dataclass
class ExtendedTable:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def at(self, t):
        """Node sample at time ``t`` (taken modulo the period)."""
        period = self.times[-1]
        tm = float(np.mod(t, period))
        i = int(np.argmin(np.abs(self.times - tm)))
        return self.positions[:, i], self.velocities[:, i]


def extend_by_symmetry(path: DiscretePath) -> ExtendedTable:
    """Mirror a half-period path about ``t = T``: ``x(2T - t) = x(t)``."""
    t = path.times
    T = path.T
    x = path.positions
    v = np.gradient(x, t, axis=1, edge_order=2)
    times = np.concatenate([t, 2.0 * T - t[-2::-1]])
    pos = np.hstack([x, x[:, -2::-1]])
    vel = np.hstack([v, -v[:, -2::-1]])
    return ExtendedTable(times, pos, vel)


@dataclass
class PeriodicityReport:
    defect: float
    position_defect: float
    velocity_defect: float
    table_supnorm: float
    energy_drift: float
    events: int
    periods: float
    trajectory: Trajectory
    start: str = "node"

    def as_dict(self):
        return {
            "defect": self.defect,
            "position_defect": self.position_defect,
            "velocity_defect": self.velocity_defect,
            "table_supnorm": self.table_supnorm,
            "energy_drift": self.energy_drift,
            "events": self.events,
            "periods": self.periods,
            "start": self.start,
        }


def _mid_state(path: DiscretePath) -> PhaseState:
    if path.M % 2:
        raise ValueError("the mid node needs an even mesh")
    k = path.M // 2
    v = np.gradient(path.positions, path.times, axis=1, edge_order=2)
    return PhaseState(float(path.times[k]), path.positions[:, k].copy(), v[:, k].copy())


def start_state(path: DiscretePath, coarse: DiscretePath | None = None) -> PhaseState:
    """State at ``t = T/2``, the mid node of a mirrored mesh.

    Velocities come from the nonuniform three-point stencil.  With
    ``coarse`` (the solution on half as many cells) the state is
    Richardson-extrapolated, ``(4 fine - coarse) / 3``: the graded mesh
    makes the path smooth in the mesh parameter, so node errors expand in
    even powers of ``1/M``.
    """
    fine = _mid_state(path)
    if coarse is None:
        return fine
    if 2 * coarse.M != path.M or abs(coarse.T - path.T) > 1e-12 * path.T:
        raise ValueError("coarse path must have half the cells and the same T")
    c = _mid_state(coarse)
    return PhaseState(
        fine.time,
        (4.0 * fine.positions - c.positions) / 3.0,
        (4.0 * fine.velocities - c.velocities) / 3.0,
    )


def periodicity_check(
    path: DiscretePath,
    masses,
    opts: IntegratorOptions | None = None,
    periods: float = 1.0,
    coarse: DiscretePath | None = None,
) -> PeriodicityReport:
    """Integrate the mid-period state over ``periods`` full periods ``2T``.

    ``defect`` is the largest per-body sum of position and velocity
    mismatch against the start state.  ``energy_drift`` is taken over
    samples with every gap above ``SAFE_GAP`` times the system scale, where
    physical-time errors are not magnified by a close encounter.
    """
    opts = opts or IntegratorOptions()
    m = np.asarray(masses, dtype=float)
    s0 = start_state(path, coarse)
    table = extend_by_symmetry(path)
    P = table.times[-1]
    t_end = s0.time + periods * P
    reps = int(np.ceil(periods)) + 1
    grid = np.concatenate([table.times[:-1] + i * P for i in range(reps)])
    grid = grid[(grid > s0.time) & (grid < t_end)]
    traj = integrate(s0, t_end, m, opts, sample_times=grid)
    end = traj.final
    dx = np.abs(end.positions - s0.positions)
    dv = np.abs(end.velocities - s0.velocities)
    sup = 0.0
    for p in traj.samples[1:-1]:
        xt, _ = table.at(p.time)
        sup = max(sup, float(np.max(np.abs(p.positions - xt))))
    E0 = energy(s0.positions, s0.velocities, m)
    floor = SAFE_GAP * system_scale(s0.positions)
    drift = max(
        abs(energy(p.positions, p.velocities, m) - E0)
        for p in traj.samples
        if np.min(np.diff(p.positions)) >= floor
    )
    return PeriodicityReport(
        defect=float(np.max(dx + dv)),
        position_defect=float(np.max(dx)),
        velocity_defect=float(np.max(dv)),
        table_supnorm=sup,
        energy_drift=float(drift),
        events=len(traj.events),
        periods=float(periods),
        trajectory=traj,
        start="extrapolated" if coarse is not None else "node",
    )


@dataclass
class PairSeries:
    pair: tuple
    times: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    alpha_literal: np.ndarray
    limits: list
    sampled_limits: list


def _one_sided(t, alpha, tc):
    """Quadratic extrapolation in ``|t - tc|**(1/3)`` from three samples per side."""
    out = []
    for idx in (np.where(t < tc)[0][-3:], np.where(t > tc)[0][:3]):
        if idx.size < 3:
            out.append(float("nan"))
            continue
        z = np.abs(t[idx] - tc) ** (1.0 / 3.0)
        out.append(float(np.polyval(np.polyfit(z, alpha[idx], 2), 0.0)))
    return out


def pair_series(trajectory: Trajectory, pair) -> PairSeries:
    """``xi``, ``s`` and ``alpha`` of an adjacent pair (1-based labels).

    ``limits`` holds ``(t_c, alpha_minus, alpha_plus)`` for each collision
    of the pair as recorded by the integrator at the event.
    ``sampled_limits`` re-estimates them from the output samples alone and
    is only as good as the sampling near ``t_c``.
    """
    a, b = int(pair[0]) - 1, int(pair[1]) - 1
    if b != a + 1:
        raise ValueError(f"pair {pair} is not adjacent")
    m = trajectory.masses
    data = [pair_data(p.positions, p.velocities, m, a) for p in trajectory.samples]
    t = trajectory.times
    xi = np.array([d.xi for d in data])
    alpha = np.array([d.alpha for d in data])
    limits, sampled = [], []
    for ev in trajectory.events:
        if (a + 1, b + 1) not in ev.pairs:
            continue
        k = ev.pairs.index((a + 1, b + 1))
        limits.append((ev.time, ev.pre[k].alpha, ev.post[k].alpha))
        sampled.append((ev.time, *_one_sided(t, alpha, ev.time)))
    return PairSeries(
        (a + 1, b + 1),
        t,
        xi,
        np.sign(xi).astype(int),
        alpha,
        np.array([d.alpha_literal for d in data]),
        limits,
        sampled,
    )
