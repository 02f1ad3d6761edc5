"""Geometric programs and a primal-dual interior-point solver.

A GP is solved in log variables ``y = log x``: the objective and every
posynomial constraint become log-sum-exp functions of affine maps of ``y``,
which are convex, and monomial equalities become linear equalities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import DomainError, InfeasibleError, InputError, NonConvergenceError, UnboundVariableError
from .posynomial import Monomial, Posynomial, VarId, logsumexp

SLACK = 1e-9


@dataclass
class GeometricProgram:
    """minimize objective s.t. each ``ineq`` <= 1, each ``eq`` == 1, optional box bounds."""

    objective: Posynomial
    ineq: list[Posynomial] = field(default_factory=list)
    eq: list[Monomial] = field(default_factory=list)
    variables: list[VarId] = field(default_factory=list)
    bounds: dict[VarId, tuple[Optional[float], Optional[float]]] = field(default_factory=dict)
    ineq_labels: list[str] = field(default_factory=list)
    start: Optional[dict[VarId, float]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.variables:
            names = set(self.objective.variables)
            for q in self.ineq:
                names |= set(q.variables)
            for h in self.eq:
                names |= set(h.exponents)
            self.variables = sorted(names)
        known = set(self.variables)
        if len(known) != len(self.variables):
            raise InputError("duplicate variable registrations")
        referenced = [self.objective, *self.ineq, *(h.as_posynomial() for h in self.eq)]
        for p in referenced:
            missing = set(p.variables) - known
            if missing:
                raise UnboundVariableError(f"unregistered variables {sorted(missing)}")
        for v, (lo, hi) in self.bounds.items():
            if v not in known:
                raise UnboundVariableError(f"bounds given for unregistered variable {v!r}")
            if lo is not None and hi is not None and not 0 < lo <= hi:
                raise DomainError(f"bad bounds for {v!r}: {lo}, {hi}")
            if (lo is not None and lo <= 0) or (hi is not None and hi <= 0):
                raise DomainError(f"bounds for {v!r} must be positive")
        if not self.ineq_labels:
            self.ineq_labels = [f"ineq[{i}]" for i in range(len(self.ineq))]
        if len(self.ineq_labels) != len(self.ineq):
            raise InputError("one label per inequality is required")

    @property
    def n(self) -> int:
        return len(self.variables)


@dataclass
class SolverStats:
    iterations: int
    phase1_iterations: int
    kkt_residual: float
    dual_residual: float
    primal_residual: float
    gap: float
    duals: dict[str, float]
    merit_history: list[tuple[float, float]]
    relaxed: bool = False


@dataclass
class GPResult:
    x: dict[VarId, float]
    objective_value: float
    stats: SolverStats

    def constraint_values(self, gp: GeometricProgram) -> list[float]:
        return [q.eval(self.x) for q in gp.ineq]


class _LSE:
    """f(z) = log sum exp(b + A z) - shift, over a fixed-length vector z."""

    def __init__(self, logc: np.ndarray, a: np.ndarray, shift: float = 0.0):
        self.b = np.asarray(logc, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.shift = shift
        self.linear = self.b.size == 1

    def value(self, z: np.ndarray) -> float:
        if self.linear:
            return float(self.b[0] + self.a[0] @ z) - self.shift
        return logsumexp(self.b + self.a @ z) - self.shift

    def full(self, z: np.ndarray, hess: bool = True):
        n = z.size
        if self.linear:
            return float(self.b[0] + self.a[0] @ z) - self.shift, self.a[0].copy(), np.zeros((n, n)) if hess else None
        u = self.b + self.a @ z
        v = logsumexp(u)
        w = np.exp(u - v)
        g = w @ self.a
        if not hess:
            return v - self.shift, g, None
        aw = self.a * np.sqrt(w)[:, None]
        h = aw.T @ aw - np.outer(g, g)
        return v - self.shift, g, h


def _pd_ipm(
    f0: Callable,
    fs: Sequence[Callable],
    a_eq: np.ndarray,
    b_eq: np.ndarray,
    z0: np.ndarray,
    tol: float,
    max_iter: int,
    stop: Optional[Callable[[np.ndarray], bool]] = None,
):
    """Primal-dual interior-point iterations for smooth convex constraints ``f_i(z) <= 0``.

    ``f0`` and each ``fs[i]`` map ``z`` to ``(value, gradient, hessian)``;
    ``z0`` must be strictly feasible for the inequalities.
    """
    mu, alpha, shrink = 10.0, 0.01, 0.5
    n, m, p = z0.size, len(fs), a_eq.shape[0]
    z = z0.astype(float).copy()
    vals = np.array([f(z, False)[0] for f in fs])
    if m and np.any(vals >= 0):
        raise InputError("interior-point start is not strictly feasible")
    lam = 1.0 / np.maximum(-vals, 1e-12) if m else np.zeros(0)
    lam = np.minimum(lam, 1e6)
    nu = np.zeros(p)
    history: list[tuple[float, float]] = []

    def residuals(z, lam, nu, t, hess=False):
        v0, g0, h0 = f0(z, hess)
        ev = [f(z, hess) for f in fs]
        fv = np.array([e[0] for e in ev])
        df = np.array([e[1] for e in ev]).reshape(m, n)
        r_dual = g0 + df.T @ lam + a_eq.T @ nu
        r_cent = -lam * fv - 1.0 / t if m else np.zeros(0)
        r_pri = a_eq @ z - b_eq
        return (v0, g0, h0), ev, fv, df, r_dual, r_cent, r_pri

    it = 0
    for it in range(1, max_iter + 1):
        eta = float(-vals @ lam) if m else 0.0
        t = mu * m / eta if m and eta > 0 else 1e12
        (v0, g0, h0), ev, fv, df, r_dual, r_cent, r_pri = residuals(z, lam, nu, t, hess=True)
        kkt = max(np.max(np.abs(r_dual), initial=0.0), np.max(np.abs(r_pri), initial=0.0), eta)
        if kkt <= tol or (stop is not None and stop(z)):
            return z, lam, nu, it - 1, (r_dual, r_pri, eta), history
        hess = h0.copy()
        for li, e in zip(lam, ev):
            hess += li * e[2]
        if m:
            hess += df.T @ ((lam / -fv)[:, None] * df)
        rhs = -(g0 + a_eq.T @ nu + (df.T @ (1.0 / (-fv)) / t if m else 0.0))
        kkt_mat = np.block([[hess, a_eq.T], [a_eq, np.zeros((p, p))]])
        sol_rhs = np.concatenate([rhs, -r_pri])
        try:
            sol = np.linalg.solve(kkt_mat, sol_rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt_mat, sol_rhs, rcond=None)[0]
        dz, dnu = sol[:n], sol[n:]
        if m:
            dlam = -lam * (df @ dz) / fv - lam - 1.0 / (t * fv)
            neg = dlam < 0
            smax = min(1.0, float(np.min(-lam[neg] / dlam[neg]))) if np.any(neg) else 1.0
        else:
            dlam = np.zeros(0)
            smax = 1.0
        s = 0.99 * smax
        norm0 = float(np.linalg.norm(np.concatenate([r_dual, r_cent, r_pri])))
        while m and np.any(np.array([f(z + s * dz, False)[0] for f in fs]) >= 0):
            s *= shrink
            if s < 1e-20:
                break
        while True:
            zn, lamn, nun = z + s * dz, lam + s * dlam, nu + s * dnu
            _, _, _, _, rd, rc, rp = residuals(zn, lamn, nun, t)
            norm1 = float(np.linalg.norm(np.concatenate([rd, rc, rp])))
            if norm1 <= (1 - alpha * s) * norm0 or s < 1e-20:
                break
            s *= shrink
        if s < 1e-20:
            raise NonConvergenceError(f"line search stalled at iteration {it}", residual=kkt)
        history.append((norm0, norm1))
        z, lam, nu = zn, lamn, nun
        vals = np.array([f(z, False)[0] for f in fs]) if m else np.zeros(0)
    eta = float(-vals @ lam) if m else 0.0
    t = mu * m / eta if m and eta > 0 else 1e12
    *_, r_dual, _, r_pri = residuals(z, lam, nu, t)
    kkt = max(np.max(np.abs(r_dual), initial=0.0), np.max(np.abs(r_pri), initial=0.0), eta)
    if kkt <= tol:
        return z, lam, nu, it, (r_dual, r_pri, eta), history
    raise NonConvergenceError(f"iteration cap {max_iter} reached with KKT residual {kkt:.3e}", residual=kkt)


def _compile(gp: GeometricProgram):
    index = {v: j for j, v in enumerate(gp.variables)}
    n = gp.n
    obj = _LSE(*gp.objective.compile(index, n))
    cons, labels = [], []
    for q, label in zip(gp.ineq, gp.ineq_labels):
        if q.is_constant:
            if q.constant_value() > 1.0 + SLACK:
                raise InfeasibleError(
                    f"constant constraint {label} evaluates to {q.constant_value():.6g} > 1",
                    constraint=label,
                    violation=q.constant_value() - 1.0,
                )
            continue
        cons.append(_LSE(*q.compile(index, n)))
        labels.append(label)
    box, box_labels = [], []
    for v, (lo, hi) in gp.bounds.items():
        j = index[v]
        e = np.zeros((1, n))
        if hi is not None:
            e[0, j] = 1.0
            box.append(_LSE(np.array([-math.log(hi)]), e.copy()))
            box_labels.append(f"{v} <= {hi:.6g}")
        if lo is not None:
            e[0, j] = -1.0
            box.append(_LSE(np.array([math.log(lo)]), e.copy()))
            box_labels.append(f"{v} >= {lo:.6g}")
    a_eq = np.zeros((len(gp.eq), n))
    b_eq = np.zeros(len(gp.eq))
    for i, h in enumerate(gp.eq):
        for v, a in h.exponents.items():
            a_eq[i, index[v]] = a
        b_eq[i] = -math.log(h.coeff)
    return obj, cons, labels, box, box_labels, a_eq, b_eq


def _start_point(gp: GeometricProgram) -> np.ndarray:
    y = np.zeros(gp.n)
    for j, v in enumerate(gp.variables):
        if gp.start and v in gp.start:
            y[j] = math.log(gp.start[v])
            continue
        lo, hi = gp.bounds.get(v, (None, None))
        if lo is not None and hi is not None:
            y[j] = 0.5 * (math.log(lo) + math.log(hi))
        elif lo is not None:
            y[j] = math.log(lo) + 1.0
        elif hi is not None:
            y[j] = math.log(hi) - 1.0
    return y


def _wrap(fn: _LSE, n_extra: int = 0, s_coeff: float = 0.0, offset: float = 0.0):
    if n_extra == 0 and offset == 0.0:
        return fn.full

    def f(z, hess=True):
        v, g, h = fn.full(z[: z.size - n_extra], hess)
        gz = np.zeros(z.size)
        gz[: g.size] = g
        hz = None
        if hess:
            hz = np.zeros((z.size, z.size))
            hz[: g.size, : g.size] = h
        if n_extra:
            gz[-1] = s_coeff
            v = v + s_coeff * z[-1]
        return v - offset, gz, hz

    return f


def solve(gp: GeometricProgram, tol: float = 1e-8, max_iter: int = 200) -> GPResult:
    """Solve a GP to a KKT residual of ``tol`` in log variables.

    When the midpoint start violates a constraint, a phase-one problem that
    minimises the largest constraint value is solved first. A feasible set
    with no interior (to within ``SLACK``) is handled by relaxing the
    posynomial constraints by ``SLACK`` relative.
    """
    obj, cons, labels, box, box_labels, a_eq, b_eq = _compile(gp)
    n = gp.n
    y0 = _start_point(gp)
    all_cons = cons + box
    all_labels = labels + box_labels

    for c, label in zip(box, box_labels):
        if c.value(y0) >= 0:
            raise InfeasibleError(f"empty box at {label}", constraint=label)

    phase1_iters = 0
    relaxed = False
    vals = np.array([c.value(y0) for c in cons])
    needs_phase1 = bool(cons) and float(np.max(vals)) > -1e-6
    y_start = y0
    if needs_phase1 and cons:
        s0 = max(float(np.max(vals)), 0.0) + 1.0
        z0 = np.concatenate([y0, [s0]])
        f0 = lambda z, hess=True: (z[-1], np.eye(z.size)[-1], np.zeros((z.size, z.size)))  # noqa: E731
        fs = [_wrap(c, 1, -1.0) for c in cons]
        fs += [_wrap(c, 1, 0.0) for c in box]
        floor = lambda z, hess=True: (-1.0 - z[-1], -np.eye(z.size)[-1], np.zeros((z.size, z.size)))  # noqa: E731
        fs.append(floor)
        a1 = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
        try:
            z, _, _, phase1_iters, _, _ = _pd_ipm(
                f0, fs, a1, b_eq, z0, tol=1e-10, max_iter=max_iter, stop=lambda z: z[-1] < -1e-2
            )
        except NonConvergenceError:
            z = z0
        y_start = z[:-1]
        s_star = max(c.value(y_start) for c in cons)
        if s_star >= SLACK:
            worst = int(np.argmax([c.value(y_start) for c in cons]))
            raise InfeasibleError(
                f"no feasible point: constraint {labels[worst]} exceeds 1 by a factor of {math.exp(s_star):.6g}",
                constraint=labels[worst],
                violation=math.expm1(s_star),
            )
        relaxed = s_star > -1e-7
    offset = SLACK if relaxed else 0.0
    fs = [_wrap(c, 0, 0.0, offset) for c in cons] + [c.full for c in box]
    y, lam, nu, iters, (r_dual, r_pri, eta), history = _pd_ipm(
        obj.full, fs, a_eq, b_eq, y_start, tol=tol, max_iter=max_iter
    )
    x = {v: math.exp(y[j]) for j, v in enumerate(gp.variables)}
    for v, (lo, hi) in gp.bounds.items():
        if lo is not None:
            x[v] = max(x[v], lo)
        if hi is not None:
            x[v] = min(x[v], hi)
    duals = {label: float(l) for label, l in zip(all_labels, lam)}
    rd = float(np.max(np.abs(r_dual), initial=0.0))
    rp = float(np.max(np.abs(r_pri), initial=0.0))
    stats = SolverStats(
        iterations=iters,
        phase1_iterations=phase1_iters,
        kkt_residual=max(rd, rp, eta),
        dual_residual=rd,
        primal_residual=rp,
        gap=eta,
        duals=duals,
        merit_history=history,
        relaxed=relaxed,
    )
    return GPResult(x=x, objective_value=gp.objective.eval(x), stats=stats)
