"""Discrete-time seven-compartment epidemic dynamics with a constant susceptible pool.

The hospital compartment empties at the total discharge rate ``rho_HR``; a
fraction ``alpha_D`` of the discharges die and the rest recover.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, TextIO

import numpy as np

from .errors import DegeneracyError, InputError, SizeLimitError, ValidationError
from .posynomial import Entry, Posynomial, PosyMatrix, add_entries

COMPARTMENTS = ("E", "I", "A", "H", "R", "D")

MAX_SYMBOLIC_TERMS = 2_000_000


@dataclass(frozen=True)
class GlobalParams:
    rho_EI: float
    rho_EA: float
    rho_IR: float
    rho_IH: float
    rho_AR: float
    rho_HR: float
    alpha_D: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (0.0 < v < 1.0):
                raise ValidationError(f"{f.name} must lie in (0, 1), got {v!r}")
        if not self.rho_EI + self.rho_EA < 1.0:
            raise ValidationError("rho_EI + rho_EA must be < 1")
        if not self.rho_IR + self.rho_IH < 1.0:
            raise ValidationError("rho_IR + rho_IH must be < 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "GlobalParams":
        return cls(**{f.name: float(obj[f.name]) for f in fields(cls)})


@dataclass(frozen=True)
class RegionInit:
    S0: float
    E0: float
    I0: float
    A0: float
    H0: float
    R0: float = 0.0
    D0: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and np.isfinite(v)):
                raise ValidationError(f"{f.name} must be finite and >= 0, got {v!r}")
        if not self.S0 > 0:
            raise ValidationError("S0 must be positive")

    def state(self) -> "EpiState":
        return EpiState(self.E0, self.I0, self.A0, self.H0, self.R0, self.D0)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RegionInit":
        return cls(**{f.name: float(obj[f.name]) for f in fields(cls)})


@dataclass(frozen=True)
class EpiState:
    E: float
    I: float
    A: float
    H: float
    R: float
    D: float

    def as_array(self) -> np.ndarray:
        return np.array([self.E, self.I, self.A, self.H, self.R, self.D])

    @classmethod
    def from_array(cls, a) -> "EpiState":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class Trajectory:
    states: tuple[EpiState, ...]
    beta_series: tuple[float, ...]

    @property
    def T(self) -> int:
        return len(self.states) - 1

    def array(self) -> np.ndarray:
        """``(T + 1, 6)`` array in E, I, A, H, R, D order."""
        return np.array([s.as_array() for s in self.states])

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, COMPARTMENTS.index(name)]

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *COMPARTMENTS, "beta"])
        for t, s in enumerate(self.states):
            b = self.beta_series[t] if t < len(self.beta_series) else ""
            w.writerow([t, *(repr(float(v)) for v in s.as_array()), repr(float(b)) if b != "" else ""])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def step(s: EpiState, g: GlobalParams, S0: float, beta: float, gamma_A: float) -> EpiState:
    if not beta >= 0:
        raise ValidationError(f"beta must be >= 0, got {beta!r}")
    if not gamma_A >= 0:
        raise ValidationError(f"gamma_A must be >= 0, got {gamma_A!r}")
    infections = S0 * beta * (gamma_A * s.A + s.I)
    discharged = g.rho_HR * s.H
    return EpiState(
        E=(1.0 - g.rho_EI - g.rho_EA) * s.E + infections,
        I=(1.0 - g.rho_IR - g.rho_IH) * s.I + g.rho_EI * s.E,
        A=(1.0 - g.rho_AR) * s.A + g.rho_EA * s.E,
        H=(1.0 - g.rho_HR) * s.H + g.rho_IH * s.I,
        R=s.R + g.rho_IR * s.I + g.rho_AR * s.A + (1.0 - g.alpha_D) * discharged,
        D=s.D + g.alpha_D * discharged,
    )


def rollout(
    init: RegionInit,
    g: GlobalParams,
    gamma_A: float,
    beta_series: Sequence[float],
    T: int,
) -> Trajectory:
    if T < 0:
        raise InputError("T must be >= 0")
    if len(beta_series) < T:
        raise InputError(f"beta series has {len(beta_series)} entries, need {T}")
    states = [init.state()]
    for t in range(T):
        states.append(step(states[-1], g, init.S0, float(beta_series[t]), gamma_A))
    return Trajectory(tuple(states), tuple(float(b) for b in beta_series[:T]))


def transition_matrix(g: GlobalParams, S0: float, gamma_A: float, beta_t: Posynomial) -> PosyMatrix:
    """4x4 update matrix over (E, I, A, H) with beta entering the first row."""

    def const(v: float) -> Entry:
        return Posynomial.constant(v) if v > 0 else None

    infect = beta_t.scale(S0)
    infect_a = infect.scale(gamma_A) if gamma_A > 0 else None
    return PosyMatrix(
        [
            [const(1.0 - g.rho_EI - g.rho_EA), infect, infect_a, None],
            [const(g.rho_EI), const(1.0 - g.rho_IR - g.rho_IH), None, None],
            [const(g.rho_EA), None, const(1.0 - g.rho_AR), None],
            [None, const(g.rho_IH), None, const(1.0 - g.rho_HR)],
        ]
    )


def symbolic_state_posynomials(
    init: RegionInit,
    g: GlobalParams,
    gamma_A: float,
    beta_posys: Sequence[Posynomial],
    T: int,
    max_terms: int = MAX_SYMBOLIC_TERMS,
) -> tuple[list[Entry], list[Entry]]:
    """H(t) and D(t), t = 0..T, as posynomials in the variables of ``beta_posys``.

    Entries are ``None`` where the compartment is structurally zero (for example
    H(1) when both H0 and I0 vanish).
    """
    if T < 1:
        raise InputError("T must be >= 1")
    if len(beta_posys) < T:
        raise InputError(f"need {T} beta posynomials, got {len(beta_posys)}")
    if init.E0 == init.I0 == init.A0 == init.H0 == 0:
        raise DegeneracyError("E0 = I0 = A0 = H0 = 0: H(t) and D(t) do not depend on the controls")
    n_vars = max(len(b.variables) for b in beta_posys[:T])
    if T > 90 and n_vars > 6:
        raise SizeLimitError(f"symbolic expansion refused for T={T} with {n_vars} control variables per day")

    y: list[Entry] = [Posynomial.constant(v) if v > 0 else None for v in (init.E0, init.I0, init.A0, init.H0)]
    d: Entry = Posynomial.constant(init.D0) if init.D0 > 0 else None
    death_rate = g.alpha_D * g.rho_HR
    H_posys: list[Entry] = [y[3]]
    D_posys: list[Entry] = [d]
    for t in range(T):
        if y[3] is not None:
            d = add_entries(d, y[3].scale(death_rate))
        y = transition_matrix(g, init.S0, gamma_A, beta_posys[t]).matvec(y)
        size = sum(len(e) for e in y if e is not None)
        if size > max_terms:
            raise SizeLimitError(f"symbolic state exceeded {max_terms} terms at t={t + 1}")
        H_posys.append(y[3])
        D_posys.append(d)
    return H_posys, D_posys
