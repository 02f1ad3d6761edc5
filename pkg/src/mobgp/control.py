"""Mobility-restriction schedules as geometric programs.

Two programs are built for a single fitted region:

* minimum discounted deaths subject to an economic budget and a hospital cap;
* minimum budget subject to the hospital cap alone.

Controls are tied per block of ``week_length`` days, one GP variable per
(category, block). Hospitalisations and deaths enter either as fully expanded
posynomials in the controls (``formulation="expanded"``) or through one
auxiliary variable per state and day with posynomial upper-bound constraints
(``formulation="epigraph"``). Both describe the same optimum because every
objective and constraint is nondecreasing in the states.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .epimodel import GlobalParams, RegionInit, Trajectory, rollout, symbolic_state_posynomials
from .errors import DegeneracyError, DomainError, InfeasibleError, InputError
from .gpsolve import GeometricProgram, GPResult, SolverStats, solve
from .mobility import MobilityMapParams, beta_posynomial, beta_series
from .posynomial import Entry, Posynomial, add_entries

FORMULATIONS = ("expanded", "epigraph")


@dataclass(frozen=True)
class RegionModel:
    global_params: GlobalParams
    mobility_map: MobilityMapParams
    init: RegionInit


@dataclass
class ControlConfig:
    model: RegionModel
    T: int
    u_lower: Sequence[float]
    u_upper: Sequence[float]
    c: Sequence[float]
    gamma_D: float = 0.99
    tau_H: float = math.inf
    budget: Optional[float] = None
    week_length: int = 7
    cost_weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        K = self.model.mobility_map.K
        self.u_lower = tuple(float(v) for v in self.u_lower)
        self.u_upper = tuple(float(v) for v in self.u_upper)
        self.c = tuple(float(v) for v in self.c)
        if not (len(self.u_lower) == len(self.u_upper) == len(self.c) == K):
            raise InputError(f"u_lower, u_upper and c need {K} entries each")
        if any(not 0 < lo < hi for lo, hi in zip(self.u_lower, self.u_upper)):
            raise DomainError("bounds must satisfy 0 < u_lower < u_upper")
        if any(ck < 0 for ck in self.c) or not any(ck > 0 for ck in self.c):
            raise DomainError("cost weights must be nonnegative and not all zero")
        if not 0 < self.gamma_D < 1:
            raise DomainError("gamma_D must lie in (0, 1)")
        if not self.tau_H > 0:
            raise DomainError("tau_H must be positive")
        if self.T < 1 or self.week_length < 1:
            raise InputError("T and week_length must be >= 1")
        if self.budget is not None and not self.budget >= 0:
            raise DomainError("budget must be nonnegative")
        if self.cost_weights is None:
            self.cost_weights = (1.0,) * self.T
        self.cost_weights = tuple(float(w) for w in self.cost_weights)
        if len(self.cost_weights) != self.T or any(w < 0 for w in self.cost_weights):
            raise InputError("cost_weights needs T nonnegative entries")

    @property
    def K(self) -> int:
        return self.model.mobility_map.K

    @property
    def n_blocks(self) -> int:
        return -(-self.T // self.week_length)

    def block_of(self, t: int) -> int:
        return t // self.week_length

    def var_name(self, k: int, w: int) -> str:
        return f"u_{k}_{w}"

    def variables(self) -> list[str]:
        return [self.var_name(k, w) for w in range(self.n_blocks) for k in range(self.K)]

    def replace(self, **changes) -> "ControlConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ControlConfig(**d)

    @classmethod
    def from_json(cls, obj: dict, model: RegionModel, **overrides) -> "ControlConfig":
        tau = obj.get("tau_H")
        kw = dict(
            model=model,
            T=int(obj["T"]),
            week_length=int(obj.get("week_length", 7)),
            tau_H=math.inf if tau is None else float(tau),
            budget=obj.get("budget"),
            gamma_D=float(obj.get("gamma_D", 0.99)),
            c=obj["c"],
            u_lower=obj.get("u_lower"),
            u_upper=obj.get("u_upper"),
            cost_weights=obj.get("cost_weights"),
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass
class ControlSolution:
    u_star: np.ndarray  # (T, K) daily schedule, constant within blocks
    objective_value: float
    per_day_cost: np.ndarray
    trajectory: Trajectory
    solver_stats: SolverStats
    kind: str
    total_cost: float
    J: float
    gp_objective: float
    variables: dict[str, float] = field(default_factory=dict)

    def schedule_csv(self, categories: Sequence[str] | None = None) -> str:
        K = self.u_star.shape[1]
        names = list(categories) if categories else [str(k) for k in range(K)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "category", "u_star", "cost"])
        for t in range(self.u_star.shape[0]):
            for k in range(K):
                w.writerow([t, names[k], repr(float(self.u_star[t, k])), repr(float(self.per_day_cost[t]))])
        return buf.getvalue()

    def cost_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "cost", "cumulative_cost"])
        acc = 0.0
        for t, c in enumerate(self.per_day_cost):
            acc += float(c)
            w.writerow([t, repr(float(c)), repr(acc)])
        return buf.getvalue()


def gamma_infinity(gamma_D: float, T: int) -> float:
    """Terminal weight summarising deaths beyond the horizon."""
    if not 0 < gamma_D < 1:
        raise DomainError(f"gamma_D must lie in (0, 1), got {gamma_D!r}")
    if T < 1:
        raise DomainError("T must be >= 1")
    return gamma_D**T / (1.0 - gamma_D)


def discounted_deaths(D: Sequence[float], gamma_D: float, T: int) -> float:
    """sum_{t=1}^{T-1} gamma_D^t D(t) + gamma_inf D(T)."""
    D = np.asarray(D, dtype=float)
    if D.size < T + 1:
        raise InputError(f"need D(0..{T})")
    head = sum(gamma_D**t * D[t] for t in range(1, T))
    return float(head + gamma_infinity(gamma_D, T) * D[T])


def _cost_scales(cfg: ControlConfig) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(cfg.u_lower)
    hi = np.asarray(cfg.u_upper)
    denom = 1.0 / lo - 1.0 / hi
    return np.asarray(cfg.c) / denom, np.asarray(cfg.c) / (hi * denom)


def cost_term(u: Sequence[float], cfg: ControlConfig) -> float:
    """Daily restriction cost: 0 at the upper bounds, sum(c) at the lower bounds."""
    u = np.asarray(u, dtype=float)
    lo = np.asarray(cfg.u_lower)
    hi = np.asarray(cfg.u_upper)
    if u.shape != lo.shape:
        raise DomainError(f"control must have {lo.size} entries")
    if np.any(u < lo * (1 - 1e-9)) or np.any(u > hi * (1 + 1e-9)):
        raise DomainError("control outside its bounds")
    c = np.asarray(cfg.c)
    return float(np.sum(c * (1.0 / u - 1.0 / hi) / (1.0 / lo - 1.0 / hi)))


def cost_posynomial(cfg: ControlConfig, variables: Sequence[str]) -> tuple[Posynomial, float]:
    """One day's cost as (posynomial part, constant offset): C = posy - offset."""
    scale, offset = _cost_scales(cfg)
    terms = [(v, s) for v, s in zip(variables, scale) if s > 0]
    posy = Posynomial([v for v, _ in terms], -np.eye(len(terms)), [s for _, s in terms])
    return posy, float(np.sum(offset))


def total_cost_posynomial(cfg: ControlConfig) -> tuple[Posynomial, float]:
    """sum_t w_t C(u(t)) as (posynomial part, constant offset)."""
    total: Entry = None
    offset = 0.0
    for t in range(cfg.T):
        w = cfg.cost_weights[t]
        if w <= 0:
            continue
        w_vars = [cfg.var_name(k, cfg.block_of(t)) for k in range(cfg.K)]
        posy, off = cost_posynomial(cfg, w_vars)
        total = add_entries(total, posy.scale(w))
        offset += w * off
    if total is None:
        raise InputError("all cost weights are zero")
    return total, offset


def _beta_posys(cfg: ControlConfig) -> list[Posynomial]:
    per_block = [
        beta_posynomial(cfg.model.mobility_map, [cfg.var_name(k, w) for k in range(cfg.K)])
        for w in range(cfg.n_blocks)
    ]
    return [per_block[cfg.block_of(t)] for t in range(cfg.T)]


def _bounds(cfg: ControlConfig) -> dict:
    return {
        cfg.var_name(k, w): (cfg.u_lower[k], cfg.u_upper[k])
        for w in range(cfg.n_blocks)
        for k in range(cfg.K)
    }


def _state_posynomials(cfg: ControlConfig, formulation: str):
    """H(t), D(t) entries plus extra (constraint, label) pairs, variables and a start point."""
    m = cfg.model
    if formulation == "expanded":
        H, D = symbolic_state_posynomials(m.init, m.global_params, m.mobility_map.gamma_A, _beta_posys(cfg), cfg.T)
        return H, D, [], [], ({}, {})
    if formulation != "epigraph":
        raise InputError(f"unknown formulation {formulation!r}; choose from {FORMULATIONS}")

    init, g = m.init, m.global_params
    if init.E0 == init.I0 == init.A0 == init.H0 == 0:
        raise DegeneracyError("E0 = I0 = A0 = H0 = 0: H(t) and D(t) do not depend on the controls")
    betas = _beta_posys(cfg)
    gA = m.mobility_map.gamma_A
    mid = np.sqrt(np.asarray(cfg.u_lower) * np.asarray(cfg.u_upper))
    sim = rollout(init, g, gA, beta_series(np.tile(mid, (cfg.T, 1)), m.mobility_map), cfg.T).array()
    # any admissible schedule stays below the trajectory driven by the largest attainable beta
    mp = m.mobility_map
    beta_max = sum(
        th * max(lo**al, hi**al) for th, al, lo, hi in zip(mp.theta, mp.alpha, cfg.u_lower, cfg.u_upper)
    ) + mp.b
    ceiling = rollout(init, g, gA, [beta_max] * cfg.T, cfg.T).array()

    def const(v: float) -> Entry:
        return Posynomial.constant(v) if v > 0 else None

    def lin(entry: Entry, coeff: float) -> Entry:
        return entry.scale(coeff) if entry is not None and coeff > 0 else None

    state = [const(init.E0), const(init.I0), const(init.A0), const(init.H0)]
    extra, names, start, upper = [], [], {}, {}
    H: list[Entry] = [state[3]]
    D: list[Entry] = [const(init.D0)]
    death_rate = g.alpha_D * g.rho_HR
    for t in range(cfg.T):
        E, I, A, Hs = state
        infect = add_entries(I, lin(A, gA))
        rhs = [
            add_entries(lin(E, 1 - g.rho_EI - g.rho_EA), None if infect is None else infect.mul(betas[t]).scale(init.S0)),
            add_entries(lin(I, 1 - g.rho_IR - g.rho_IH), lin(E, g.rho_EI)),
            add_entries(lin(A, 1 - g.rho_AR), lin(E, g.rho_EA)),
            add_entries(lin(Hs, 1 - g.rho_HR), lin(I, g.rho_IH)),
        ]
        D.append(add_entries(D[-1], lin(Hs, death_rate)))
        new_state = []
        for name, r, sim_val, top in zip("EIAH", rhs, sim[t + 1, :4], ceiling[t + 1, :4]):
            if r is None or r.is_constant:
                new_state.append(r)
                continue
            var = f"{name}_{t + 1}"
            names.append(var)
            start[var] = 1.05 * sim_val
            upper[var] = 2.0 * top
            extra.append((r.mul(Posynomial.variable(var, -1.0)), f"{name}({t + 1}) epigraph"))
            new_state.append(Posynomial.variable(var))
        state = new_state
        H.append(state[3])
    return H, D, extra, names, (start, upper)


def _assemble(cfg, objective, ineq, labels, formulation, extra, names, start, kind) -> GeometricProgram:
    for posy, label in extra:
        ineq.append(posy)
        labels.append(label)
    start, upper = start
    bounds = _bounds(cfg)
    bounds.update({v: (None, hi) for v, hi in upper.items()})
    gp_start = None
    if start:
        gp_start = {v: math.sqrt(lo * hi) for v, (lo, hi) in _bounds(cfg).items()}
        gp_start.update(start)
    gp = GeometricProgram(
        objective=objective,
        ineq=ineq,
        variables=cfg.variables() + names,
        bounds=bounds,
        ineq_labels=labels,
        start=gp_start,
    )
    gp.meta = {"kind": kind, "formulation": formulation}
    return gp


def _hospital_constraints(cfg: ControlConfig, H: Sequence[Entry]):
    ineq, labels = [], []
    if math.isinf(cfg.tau_H):
        return ineq, labels
    for t in range(1, cfg.T + 1):
        h = H[t]
        if h is None:
            continue
        if h.is_constant:
            if h.constant_value() > cfg.tau_H * (1 + 1e-9):
                raise InfeasibleError(
                    f"H({t}) = {h.constant_value():.6g} exceeds tau_H = {cfg.tau_H:.6g} regardless of the controls",
                    constraint=f"H({t}) <= tau_H",
                    violation=h.constant_value() / cfg.tau_H - 1,
                )
            continue
        ineq.append(h.scale(1.0 / cfg.tau_H))
        labels.append(f"H({t}) <= tau_H")
    return ineq, labels


def build_min_deaths(cfg: ControlConfig, formulation: str = "expanded") -> GeometricProgram:
    if cfg.budget is None:
        raise InputError("the minimum-deaths program needs a budget")
    H, D, extra, names, start = _state_posynomials(cfg, formulation)
    objective: Entry = None
    for t in range(1, cfg.T):
        if D[t] is not None:
            objective = add_entries(objective, D[t].scale(cfg.gamma_D**t))
    if D[cfg.T] is not None:
        objective = add_entries(objective, D[cfg.T].scale(gamma_infinity(cfg.gamma_D, cfg.T)))
    if objective is None:
        raise DegeneracyError("discounted deaths are identically zero over the horizon")
    ineq, labels = _hospital_constraints(cfg, H)
    cost, offset = total_cost_posynomial(cfg)
    ineq.insert(0, cost.scale(1.0 / (cfg.budget + offset)))
    labels.insert(0, "budget")
    gp = _assemble(cfg, objective, ineq, labels, formulation, extra, names, start, "min-deaths")
    gp.meta["cost_offset"] = offset
    return gp


def build_min_cost(cfg: ControlConfig, formulation: str = "expanded") -> GeometricProgram:
    H, _, extra, names, start = _state_posynomials(cfg, formulation)
    ineq, labels = _hospital_constraints(cfg, H)
    cost, offset = total_cost_posynomial(cfg)
    gp = _assemble(cfg, cost, ineq, labels, formulation, extra, names, start, "min-cost")
    gp.meta["cost_offset"] = offset
    return gp


def schedule_from_assignment(cfg: ControlConfig, x: dict) -> np.ndarray:
    u = np.empty((cfg.T, cfg.K))
    for t in range(cfg.T):
        for k in range(cfg.K):
            u[t, k] = x[cfg.var_name(k, cfg.block_of(t))]
    return u


def simulate_schedule(cfg: ControlConfig, u: np.ndarray) -> Trajectory:
    m = cfg.model
    return rollout(m.init, m.global_params, m.mobility_map.gamma_A, beta_series(u, m.mobility_map), cfg.T)


def daily_costs(cfg: ControlConfig, u: np.ndarray) -> np.ndarray:
    return np.array([cfg.cost_weights[t] * cost_term(u[t], cfg) for t in range(cfg.T)])


def _solution(cfg: ControlConfig, gp: GeometricProgram, res: GPResult, kind: str) -> ControlSolution:
    u = schedule_from_assignment(cfg, res.x)
    traj = simulate_schedule(cfg, u)
    costs = daily_costs(cfg, u)
    J = discounted_deaths(traj.column("D"), cfg.gamma_D, cfg.T)
    total = float(np.sum(costs))
    controls = {v: res.x[v] for v in cfg.variables()}
    return ControlSolution(
        u_star=u,
        objective_value=total if kind == "min-cost" else J,
        per_day_cost=costs,
        trajectory=traj,
        solver_stats=res.stats,
        kind=kind,
        total_cost=total,
        J=J,
        gp_objective=res.objective_value,
        variables=controls,
    )


def solve_min_deaths(cfg: ControlConfig, formulation: str = "expanded", tol: float = 1e-8) -> ControlSolution:
    gp = build_min_deaths(cfg, formulation)
    return _solution(cfg, gp, solve(gp, tol=tol), "min-deaths")


def solve_min_cost(cfg: ControlConfig, formulation: str = "expanded", tol: float = 1e-8) -> ControlSolution:
    gp = build_min_cost(cfg, formulation)
    return _solution(cfg, gp, solve(gp, tol=tol), "min-cost")


def minimal_budget(cfg: ControlConfig, formulation: str = "expanded", tol: float = 1e-8) -> tuple[float, ControlSolution]:
    """Least total cost that keeps H(t) <= tau_H, with the schedule achieving it."""
    sol = solve_min_cost(cfg, formulation, tol)
    return sol.total_cost, sol
