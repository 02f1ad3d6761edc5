import json
from pathlib import Path

import numpy as np
import pytest

from mobgp.control import ControlConfig, RegionModel
from mobgp.epimodel import GlobalParams, RegionInit
from mobgp.mobility import MobilityMapParams

TOY_N = 1e6


def toy_model(K: int = 1) -> RegionModel:
    g = GlobalParams(0.2, 0.25, 0.1, 0.03, 0.15, 0.1, 0.2)
    theta = [0.25 / TOY_N, 0.15 / TOY_N][:K]
    alpha = [1.5, 1.0][:K]
    mm = MobilityMapParams(theta=theta, alpha=alpha, b=0.01 / TOY_N, gamma_A=0.5)
    init = RegionInit(S0=TOY_N, E0=200, I0=100, A0=100, H0=20, R0=0, D0=5)
    return RegionModel(g, mm, init)


def toy_config(K: int = 1, T: int = 14, **kw) -> ControlConfig:
    return ControlConfig(model=toy_model(K), T=T, u_lower=[0.3] * K, u_upper=[1.0] * K, c=[1.0] * K, **kw)


def batch_simulate(model: RegionModel, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Independent vectorised rollout for many daily schedules at once.

    ``u`` has shape (P, T, K); returns H and D with shape (P, T + 1).
    """
    g, mm, x0 = model.global_params, model.mobility_map, model.init
    P, T, _ = u.shape
    beta = (np.asarray(mm.theta) * u ** np.asarray(mm.alpha)).sum(axis=2) + mm.b
    E = np.full(P, x0.E0, dtype=float)
    I = np.full(P, x0.I0, dtype=float)
    A = np.full(P, x0.A0, dtype=float)
    H = np.full(P, x0.H0, dtype=float)
    D = np.full(P, x0.D0, dtype=float)
    Hs, Ds = [H.copy()], [D.copy()]
    for t in range(T):
        newE = (1 - g.rho_EI - g.rho_EA) * E + x0.S0 * beta[:, t] * (mm.gamma_A * A + I)
        newI = (1 - g.rho_IR - g.rho_IH) * I + g.rho_EI * E
        newA = (1 - g.rho_AR) * A + g.rho_EA * E
        newH = (1 - g.rho_HR) * H + g.rho_IH * I
        D = D + g.alpha_D * g.rho_HR * H
        E, I, A, H = newE, newI, newA, newH
        Hs.append(H.copy())
        Ds.append(D.copy())
    return np.stack(Hs, axis=1), np.stack(Ds, axis=1)


def weekly_to_daily(cfg: ControlConfig, blocks: np.ndarray) -> np.ndarray:
    """(P, n_blocks, K) weekly values -> (P, T, K) daily schedule."""
    idx = np.array([cfg.block_of(t) for t in range(cfg.T)])
    return blocks[:, idx, :]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_minimize(objective, feasible, lo, hi, n: int = 200, rounds: int = 6, m: int = 41):
    """Exhaustive 2-D grid search followed by local zoom-in refinement.

    ``objective`` and ``feasible`` take an array of shape (P, 2). Returns (point, value).
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)

    def best_on(a, b):
        X, Y = np.meshgrid(a, b, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        vals = np.where(feasible(pts), objective(pts), np.inf)
        i = int(np.argmin(vals))
        return pts[i], vals[i]

    a, b = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
    x, v = best_on(a, b)
    if not np.isfinite(v):
        raise AssertionError("grid oracle found no feasible point")
    h = (hi - lo) / (n - 1)
    for _ in range(rounds):
        w0, w1 = np.clip([x - 2 * h, x + 2 * h], lo, hi)
        x2, v2 = best_on(np.linspace(w0[0], w1[0], m), np.linspace(w0[1], w1[1], m))
        if v2 <= v:
            x, v = x2, v2
        h = h * 4 / (m - 1)
    return x, v


REGIONS = "42001,42003,42005"


def run_pipeline(root: Path, seed: int = 0, epochs: int = 300, figures: bool = False) -> Path:
    """synth -> ingest -> train -> predict -> control, all through the CLI entry point."""
    from mobgp.cli import main

    fx, out = root / "fx", root / "out"
    out.mkdir(parents=True)
    assert main(["synth", "--out-dir", str(fx), "--seed", "7", "--days", "40", "--categories", "2"]) == 0
    (root / "train.json").write_text(json.dumps({"epochs": epochs, "trials": 2, "train_days": 25, "test_days": 10}))
    (root / "control.json").write_text(json.dumps({"T": 14, "c": [1, 1], "tau_H": None}))
    fig = ["--figures"] if figures else []
    steps = [
        ["ingest", "--mobility", str(fx / "mobility.csv"), "--deaths", str(fx / "deaths.csv"), "--regions", REGIONS,
         "--population", str(fx / "population.csv"), "--from", "2020-07-01", "--to", "2020-08-09", "--out", str(out / "ds.json")],
        ["train", "--data", str(out / "ds.json"), "--config", str(root / "train.json"), "--out", str(out / "params.json"),
         "--report", str(out / "report.csv"), "--seed", str(seed)] + fig,
        ["predict", "--params", str(out / "params.json"), "--data", str(out / "ds.json"), "--horizon", "5",
         "--out", str(out / "pred.csv")] + fig,
        ["control", "min-deaths", "--params", str(out / "params.json"), "--region", "42001", "--config", str(root / "control.json"),
         "--data", str(out / "ds.json"), "--budget-from-min-cost", "--budget-factor", "1.5", "--out", str(out / "md")] + fig,
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    return out


def _gamma_inf(g, T):
    return g**T / (1 - g)


def grid_objectives(cfg):
    """Vectorised cost, peak H and discounted deaths over weekly (P, 2) control points, K = 1."""
    def costs(pts):
        u = weekly_to_daily(cfg, pts[:, :, None])
        c = (1 / u[:, :, 0] - 1.0) / (1 / 0.3 - 1.0)
        return c.sum(axis=1)

    def hmax(pts):
        H, _ = batch_simulate(cfg.model, weekly_to_daily(cfg, pts[:, :, None]))
        return H.max(axis=1)

    def J(pts):
        _, D = batch_simulate(cfg.model, weekly_to_daily(cfg, pts[:, :, None]))
        w = np.array([cfg.gamma_D**t for t in range(cfg.T)] + [_gamma_inf(cfg.gamma_D, cfg.T)])
        w[0] = 0.0
        return D @ w

    return costs, hmax, J


ACCEPTANCE: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
