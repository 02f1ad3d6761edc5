"""Multitask calibration of the mobility-driven epidemic model.

Clinical rates are shared by every region; the mobility map and the initial
compartments belong to one region each. All parameters live in an
unconstrained vector:

* exit rates of E and of I go through a softmax over (stay, exit 1, exit 2);
* rho_AR, rho_HR and alpha_D go through a logistic function;
* theta, b, gamma_A, S0 and the initial compartments are exponentials;
* alpha is used as is.

The loss gradient is computed by a hand-written adjoint of the rollout.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .data import RegionDataset
from .epimodel import GlobalParams, RegionInit, rollout
from .errors import InputError, TrainingError
from .mobility import MobilityMapParams, beta_series
from .params import ParamSet, RegionParams

GLOBAL_NAMES = ("rho_EI", "rho_EA", "rho_IR", "rho_IH", "rho_AR", "rho_HR", "alpha_D")
INIT_NAMES = ("E0", "I0", "A0", "H0", "R0", "D0")

DEFAULT_GLOBAL_RANGES = {
    "rho_EI": (0.1, 0.4),
    "rho_EA": (0.1, 0.4),
    "rho_IR": (0.05, 0.2),
    "rho_IH": (0.01, 0.1),
    "rho_AR": (0.05, 0.2),
    "rho_HR": (0.05, 0.2),
    "alpha_D": (0.1, 0.4),
}


@dataclass
class TrainConfig:
    epochs: int = 50000
    batch_size: Optional[int] = None  # None -> min(4, regions)
    learning_rate: float = 1e-2
    trials: int = 10
    rng_seed: int = 0
    train_days: int = 60
    test_days: int = 21
    learn_S0: bool = True
    log_every: int = 1000
    workers: int = 1
    global_ranges: dict = field(default_factory=lambda: dict(DEFAULT_GLOBAL_RANGES))

    def __post_init__(self):
        if self.epochs < 0 or self.trials < 1 or self.train_days < 1 or self.test_days < 0:
            raise InputError("epochs >= 0, trials >= 1, train_days >= 1, test_days >= 0 are required")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise InputError("batch_size must be positive")
        if self.log_every < 1 or self.workers < 1:
            raise InputError("log_every and workers must be positive")

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise InputError(f"unknown training options {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)


# -- data preparation ----------------------------------------------------------
def rolling7(series: Sequence[float]) -> np.ndarray:
    """Trailing 7-day mean; the first six days average what is available."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise InputError("cannot smooth an empty series")
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(0, idx - 6)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)


def targets(ds: RegionDataset) -> np.ndarray:
    """Cumulative-death target: running maximum, then 7-day smoothing."""
    if ds.smoothed:
        return ds.deaths_raw.copy()
    return rolling7(np.maximum.accumulate(ds.deaths_raw))


# -- parameter packing ---------------------------------------------------------
class Layout:
    """Positions of every free parameter in the flat unconstrained vector."""

    def __init__(self, region_ids: Sequence[str], K: int):
        self.region_ids = list(region_ids)
        self.K = K
        self.n_global = 7
        self.per_region = 2 * K + 3 + len(INIT_NAMES)
        self.size = self.n_global + self.per_region * len(self.region_ids)

    def region_slice(self, i: int) -> slice:
        start = self.n_global + i * self.per_region
        return slice(start, start + self.per_region)

    def names(self) -> list[str]:
        out = ["z_E_to_I", "z_E_to_A", "z_I_to_R", "z_I_to_H", "z_rho_AR", "z_rho_HR", "z_alpha_D"]
        for rid in self.region_ids:
            out += [f"{rid}.log_theta[{k}]" for k in range(self.K)]
            out += [f"{rid}.alpha[{k}]" for k in range(self.K)]
            out += [f"{rid}.log_b", f"{rid}.log_gamma_A", f"{rid}.log_S0"]
            out += [f"{rid}.log_{n}" for n in INIT_NAMES]
        return out


def _softmax_exits(z1: float, z2: float) -> tuple[float, float]:
    m = max(0.0, z1, z2)
    e0, e1, e2 = math.exp(-m), math.exp(z1 - m), math.exp(z2 - m)
    s = e0 + e1 + e2
    return e1 / s, e2 / s


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def unpack_globals(z: np.ndarray) -> GlobalParams:
    ei, ea = _softmax_exits(z[0], z[1])
    ir, ih = _softmax_exits(z[2], z[3])
    return GlobalParams(ei, ea, ir, ih, _sigmoid(z[4]), _sigmoid(z[5]), _sigmoid(z[6]))


def pack(params: ParamSet, layout: Layout) -> np.ndarray:
    g = params.global_params
    z = np.empty(layout.size)
    stay_e = 1.0 - g.rho_EI - g.rho_EA
    stay_i = 1.0 - g.rho_IR - g.rho_IH
    z[0], z[1] = math.log(g.rho_EI / stay_e), math.log(g.rho_EA / stay_e)
    z[2], z[3] = math.log(g.rho_IR / stay_i), math.log(g.rho_IH / stay_i)
    z[4], z[5], z[6] = _logit(g.rho_AR), _logit(g.rho_HR), _logit(g.alpha_D)
    K = layout.K
    for i, rid in enumerate(layout.region_ids):
        rp = params.region(rid)
        mm, init = rp.mobility_map, rp.init
        if mm.K != K:
            raise InputError(f"region {rid} has {mm.K} categories, expected {K}")
        seg = np.empty(layout.per_region)
        with np.errstate(divide="ignore"):
            seg[:K] = np.log(np.maximum(mm.theta, 1e-300))
        seg[K : 2 * K] = mm.alpha
        tiny = 1e-300
        seg[2 * K] = math.log(max(mm.b, tiny))
        seg[2 * K + 1] = math.log(max(mm.gamma_A, tiny))
        seg[2 * K + 2] = math.log(init.S0)
        for j, n in enumerate(INIT_NAMES):
            seg[2 * K + 3 + j] = math.log(max(getattr(init, n), tiny))
        z[layout.region_slice(i)] = seg
    return z


def unpack(z: np.ndarray, layout: Layout, categories: Sequence[str] = ()) -> ParamSet:
    g = unpack_globals(z)
    K = layout.K
    per_region = {}
    for i, rid in enumerate(layout.region_ids):
        seg = z[layout.region_slice(i)]
        mm = MobilityMapParams(
            theta=np.exp(seg[:K]),
            alpha=seg[K : 2 * K],
            b=math.exp(seg[2 * K]),
            gamma_A=math.exp(seg[2 * K + 1]),
            categories=categories,
        )
        vals = np.exp(seg[2 * K + 3 :])
        init = RegionInit(S0=math.exp(seg[2 * K + 2]), **dict(zip(INIT_NAMES, vals)))
        per_region[rid] = RegionParams(mm, init)
    return ParamSet(g, per_region)


# -- loss and adjoint ----------------------------------------------------------
@dataclass
class _Batch:
    idx: np.ndarray  # positions in the layout
    logm: np.ndarray  # (B, T, K) log mobility levels
    X: np.ndarray  # (B, T + 1) targets
    N: np.ndarray  # (B,)


def _make_batch(layout: Layout, data: Sequence[RegionDataset], idx, T: int, t0: int = 1, t1: Optional[int] = None) -> _Batch:
    t1 = T if t1 is None else t1
    by_id = {d.region_id: d for d in data}
    rows = [by_id[layout.region_ids[i]] for i in idx]
    for d in rows:
        if len(d) < T + 1:
            raise InputError(f"region {d.region_id} has {len(d)} days, need {T + 1}")
    logm = np.stack([np.log(d.mobility[:T]) for d in rows]).reshape(len(rows), T, layout.K)
    X = np.stack([targets(d)[: T + 1] for d in rows])
    N = np.array([d.population for d in rows])
    b = _Batch(np.asarray(idx), logm, X, N)
    b.window = (t0, t1)
    return b


@njit(cache=True)
def _rollout_adjoint(rates, beta, S0, gA, x0, X, N, mask, scale, want_grad):
    """Forward rollout of the tracked compartments plus the reverse sweep.

    Returns the loss, D (B, T+1), gradients of the seven clinical rates,
    of beta (B, T), of S0, of gamma_A and of the initial state (B, 6).
    """
    B, T = beta.shape
    rEI, rEA, rIR, rIH, rAR, rHR, aD = rates[0], rates[1], rates[2], rates[3], rates[4], rates[5], rates[6]
    aE = 1.0 - rEI - rEA
    aI = 1.0 - rIR - rIH
    aA = 1.0 - rAR
    aH = 1.0 - rHR
    dr = aD * rHR
    E = np.empty((B, T + 1))
    I = np.empty((B, T + 1))
    A = np.empty((B, T + 1))
    H = np.empty((B, T + 1))
    D = np.empty((B, T + 1))
    loss = 0.0
    for r in range(B):
        E[r, 0], I[r, 0], A[r, 0], H[r, 0], D[r, 0] = x0[r, 0], x0[r, 1], x0[r, 2], x0[r, 3], x0[r, 5]
        for t in range(T):
            E[r, t + 1] = aE * E[r, t] + S0[r] * beta[r, t] * (gA[r] * A[r, t] + I[r, t])
            I[r, t + 1] = aI * I[r, t] + rEI * E[r, t]
            A[r, t + 1] = aA * A[r, t] + rEA * E[r, t]
            H[r, t + 1] = aH * H[r, t] + rIH * I[r, t]
            D[r, t + 1] = D[r, t] + dr * H[r, t]
        for t in range(T + 1):
            res = (D[r, t] - X[r, t]) / N[r]
            loss += scale * mask[t] * res * res
    g = np.zeros(7)
    beta_bar = np.zeros((B, T))
    S0_bar = np.zeros(B)
    gA_bar = np.zeros(B)
    x0_bar = np.zeros((B, 6))
    if not want_grad:
        return loss, D, g, beta_bar, S0_bar, gA_bar, x0_bar
    for r in range(B):
        w = 2.0 * scale / (N[r] * N[r])
        eb = 0.0
        ib = 0.0
        ab = 0.0
        hb = 0.0
        db = w * mask[T] * (D[r, T] - X[r, T])
        for t in range(T - 1, -1, -1):
            src = gA[r] * A[r, t] + I[r, t]
            sb = S0[r] * beta[r, t]
            beta_bar[r, t] = eb * S0[r] * src
            S0_bar[r] += eb * beta[r, t] * src
            gA_bar[r] += eb * sb * A[r, t]
            g[0] += (ib - eb) * E[r, t]
            g[1] += (ab - eb) * E[r, t]
            g[2] -= ib * I[r, t]
            g[3] += (hb - ib) * I[r, t]
            g[4] -= ab * A[r, t]
            g[5] += (aD * db - hb) * H[r, t]
            g[6] += rHR * db * H[r, t]
            eb, ib, ab, hb, db = (
                aE * eb + rEI * ib + rEA * ab,
                sb * eb + aI * ib + rIH * hb,
                sb * gA[r] * eb + aA * ab,
                aH * hb + dr * db,
                db + w * mask[t] * (D[r, t] - X[r, t]),
            )
        x0_bar[r, 0], x0_bar[r, 1], x0_bar[r, 2], x0_bar[r, 3], x0_bar[r, 5] = eb, ib, ab, hb, db
    return loss, D, g, beta_bar, S0_bar, gA_bar, x0_bar



def _loss_grad(z: np.ndarray, layout: Layout, batch: _Batch, want_grad: bool = True, fixed_S0: Optional[np.ndarray] = None):
    """Loss over the batch's scoring window and its gradient with respect to ``z``."""
    K = layout.K
    B, T = batch.logm.shape[0], batch.logm.shape[1]
    t0, t1 = batch.window
    n_scored = t1 - t0 + 1
    if n_scored <= 0:
        raise InputError("empty scoring window")
    g = unpack_globals(z)
    segs = np.stack([z[layout.region_slice(i)] for i in batch.idx])
    theta = np.exp(segs[:, :K])
    alpha = segs[:, K : 2 * K]
    b = np.exp(segs[:, 2 * K])
    gA = np.exp(segs[:, 2 * K + 1])
    S0 = np.exp(segs[:, 2 * K + 2]) if fixed_S0 is None else fixed_S0[batch.idx]
    x0 = np.exp(segs[:, 2 * K + 3 :])

    pw = np.exp(alpha[:, None, :] * batch.logm)  # (B, T, K)
    beta = np.einsum("btk,bk->bt", pw, theta) + b[:, None]

    rates = np.array([getattr(g, n) for n in GLOBAL_NAMES])
    mask = np.zeros(T + 1)
    mask[t0 : t1 + 1] = 1.0
    scale = 1.0 / (B * n_scored)
    loss, D, g_vec, beta_bar, S0_bar, gA_bar, x0_bar = _rollout_adjoint(
        rates, beta, S0, gA, x0, batch.X, batch.N, mask, scale, want_grad
    )
    if not want_grad:
        return loss, None, D
    g_rho = dict(zip(GLOBAL_NAMES, g_vec))

    grad = np.zeros(layout.size)
    # globals through softmax / logistic
    for (n1, n2), (j1, j2) in ((("rho_EI", "rho_EA"), (0, 1)), (("rho_IR", "rho_IH"), (2, 3))):
        p1, p2 = getattr(g, n1), getattr(g, n2)
        g1, g2 = g_rho[n1], g_rho[n2]
        mean = g1 * p1 + g2 * p2
        grad[j1] = p1 * (g1 - mean)
        grad[j2] = p2 * (g2 - mean)
    for n, j in (("rho_AR", 4), ("rho_HR", 5), ("alpha_D", 6)):
        p = getattr(g, n)
        grad[j] = g_rho[n] * p * (1.0 - p)

    theta_bar = np.einsum("bt,btk->bk", beta_bar, pw)
    alpha_bar = np.einsum("bt,btk->bk", beta_bar, pw * batch.logm) * theta
    b_bar = beta_bar.sum(axis=1)
    for r, i in enumerate(batch.idx):
        seg = np.empty(layout.per_region)
        seg[:K] = theta_bar[r] * theta[r]
        seg[K : 2 * K] = alpha_bar[r]
        seg[2 * K] = b_bar[r] * b[r]
        seg[2 * K + 1] = gA_bar[r] * gA[r]
        seg[2 * K + 2] = S0_bar[r] * S0[r] if fixed_S0 is None else 0.0
        seg[2 * K + 3 :] = x0_bar[r] * x0[r]
        grad[layout.region_slice(i)] += seg
    return loss, grad, D


def _layout_for(params: ParamSet, data: Sequence[RegionDataset]) -> Layout:
    K = data[0].K
    return Layout([d.region_id for d in data], K)


def loss(params: ParamSet, data: Sequence[RegionDataset], T: int) -> float:
    """Normalised mean-squared error of cumulative deaths over days 1..T."""
    layout = _layout_for(params, data)
    batch = _make_batch(layout, data, range(len(data)), T)
    return _loss_grad(pack(params, layout), layout, batch, want_grad=False)[0]


def loss_gradient(params: ParamSet, data: Sequence[RegionDataset], T: int) -> tuple[np.ndarray, list[str]]:
    """Gradient of ``loss`` in the unconstrained coordinates, with coordinate names."""
    layout = _layout_for(params, data)
    batch = _make_batch(layout, data, range(len(data)), T)
    _, grad, _ = _loss_grad(pack(params, layout), layout, batch)
    return grad, layout.names()


def predict_deaths(params: ParamSet, ds: RegionDataset, T: int) -> np.ndarray:
    """D(0..T) for one region driven by its observed mobility."""
    rp = params.region(ds.region_id)
    if len(ds) < T:
        raise InputError(f"region {ds.region_id} has {len(ds)} days, need {T}")
    beta = beta_series(ds.mobility[:T], rp.mobility_map)
    return rollout(rp.init, params.global_params, rp.mobility_map.gamma_A, beta, T).column("D")


def evaluate_test(params: ParamSet, data: Sequence[RegionDataset], train_T: int, test_T: int) -> dict[str, float]:
    """Per-region normalised MSE on days train_T+1 .. train_T+test_T."""
    if test_T <= 0:
        raise InputError("test window is empty")
    out = {}
    for ds in data:
        total = train_T + test_T
        if len(ds) < total + 1:
            raise InputError(f"region {ds.region_id} has {len(ds)} days, need {total + 1}")
        D = predict_deaths(params, ds, total)
        X = targets(ds)[: total + 1]
        r = (X[train_T + 1 :] - D[train_T + 1 :]) / ds.population
        out[ds.region_id] = float(np.mean(r**2))
    return out


# -- initialisation ------------------------------------------------------------
def init_params(
    data: Sequence[RegionDataset],
    rng: np.random.Generator,
    ranges: Optional[dict] = None,
    learn_S0: bool = True,
) -> ParamSet:
    """Globals uniform over plausibility intervals; locals random around data-derived scales."""
    ranges = ranges or DEFAULT_GLOBAL_RANGES
    while True:
        vals = {n: float(rng.uniform(*ranges[n])) for n in GLOBAL_NAMES}
        if vals["rho_EI"] + vals["rho_EA"] < 1 and vals["rho_IR"] + vals["rho_IH"] < 1:
            break
    g = GlobalParams(**vals)

    def jitter() -> float:
        return float(math.exp(rng.uniform(math.log(1 / 3), math.log(3))))

    per_region = {}
    for ds in data:
        K = ds.K
        N = ds.population
        S0 = 0.5 * N if learn_S0 else N
        theta = np.exp(rng.uniform(math.log(0.02), math.log(0.2), size=K)) / (K * S0)
        alpha = rng.uniform(0.5, 2.0, size=K)
        b = float(math.exp(rng.uniform(math.log(1e-3), math.log(1e-2)))) / S0
        gamma_A = float(rng.uniform(0.2, 1.0))
        X = targets(ds)
        w = min(7, len(X) - 1)
        daily = max((X[w] - X[0]) / max(w, 1), 1e-6 * N)
        H0 = daily / (g.alpha_D * g.rho_HR) * jitter()
        I0 = H0 * g.rho_HR / g.rho_IH * jitter()
        E0 = I0 * (g.rho_IR + g.rho_IH) / g.rho_EI * jitter()
        A0 = E0 * g.rho_EA / g.rho_AR * jitter()
        R0 = float(math.exp(rng.uniform(math.log(1e-4), math.log(1e-2)))) * N
        D0 = max(float(X[0]), 1e-3)
        mm = MobilityMapParams(theta, alpha, b, gamma_A, categories=ds.categories)
        per_region[ds.region_id] = RegionParams(mm, RegionInit(S0, E0, I0, A0, H0, R0, D0))
    return ParamSet(g, per_region)


# -- optimisation --------------------------------------------------------------
class Adam:
    """Adaptive-moment gradient steps on a flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, z: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return z - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrialResult:
    trial: int
    params: Optional[ParamSet]
    train_loss: float
    test_loss: float
    failed: bool
    history: list[tuple[int, float, float]]  # (epoch, train, test)


@dataclass
class TrainReport:
    trials: list[TrialResult]
    best_trial: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "epoch", "train_loss", "test_loss"])
        for tr in self.trials:
            for epoch, a, b in tr.history:
                w.writerow([tr.trial, epoch, repr(float(a)), repr(float(b))])
        return buf.getvalue()


def _check_data(data: Sequence[RegionDataset], cfg: TrainConfig) -> None:
    if not data:
        raise InputError("no regions to train on")
    Ks = {d.K for d in data}
    if len(Ks) != 1:
        raise InputError("all regions must share the same mobility categories")
    ids = [d.region_id for d in data]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate region ids")
    need = cfg.train_days + cfg.test_days + 1
    for d in data:
        if len(d) < need:
            raise InputError(f"region {d.region_id} has {len(d)} days, need {need}")


def _run_trial(data: Sequence[RegionDataset], cfg: TrainConfig, trial: int) -> TrialResult:
    rng = np.random.default_rng([cfg.rng_seed, trial])
    layout = Layout([d.region_id for d in data], data[0].K)
    cats = data[0].categories
    init = init_params(data, rng, cfg.global_ranges, cfg.learn_S0)
    z = pack(init, layout)
    fixed_S0 = None if cfg.learn_S0 else np.array([d.population for d in data])
    M = len(data)
    T = cfg.train_days
    bs = cfg.batch_size or min(4, M)
    bs = min(bs, M)
    full = _make_batch(layout, data, range(M), T)
    test = None
    if cfg.test_days > 0:
        test = _make_batch(layout, data, range(M), T + cfg.test_days, t0=T + 1)
    batches_cache: dict = {}
    opt = Adam(layout.size, cfg.learning_rate)
    history = []

    def losses(zc):
        tr = _loss_grad(zc, layout, full, want_grad=False, fixed_S0=fixed_S0)[0]
        te = _loss_grad(zc, layout, test, want_grad=False, fixed_S0=fixed_S0)[0] if test else float("nan")
        return tr, te

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            if epoch % cfg.log_every == 0:
                history.append((epoch, *losses(z)))
            perm = rng.permutation(M)
            for s in range(0, M, bs):
                idx = tuple(sorted(perm[s : s + bs]))
                if idx not in batches_cache:
                    batches_cache[idx] = _make_batch(layout, data, idx, T)
                _, grad, _ = _loss_grad(z, layout, batches_cache[idx], fixed_S0=fixed_S0)
                if not np.all(np.isfinite(grad)):
                    return TrialResult(trial, None, float("nan"), float("nan"), True, history)
                z = opt.step(z, grad)
        tr, te = losses(z)
    history.append((cfg.epochs, tr, te))
    if not (np.isfinite(tr) and (test is None or np.isfinite(te))):
        return TrialResult(trial, None, tr, te, True, history)
    try:
        params = unpack(z, layout, cats)
        if fixed_S0 is not None:
            params = _with_S0(params, {d.region_id: d.population for d in data})
    except Exception:  # an iterate left the valid parameter space numerically
        return TrialResult(trial, None, tr, te, True, history)
    return TrialResult(trial, params, tr, te, False, history)


def _with_S0(params: ParamSet, S0: dict) -> ParamSet:
    per = {}
    for rid, rp in params.per_region.items():
        d = rp.init.to_json()
        d["S0"] = S0[rid]
        per[rid] = RegionParams(rp.mobility_map, RegionInit.from_json(d))
    return ParamSet(params.global_params, per)


def train(data: Sequence[RegionDataset], cfg: TrainConfig) -> tuple[ParamSet, TrainReport]:
    """Independent Adam trials from random starts; keep the lowest held-out loss."""
    data = list(data)
    _check_data(data, cfg)
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_run_trial, [data] * cfg.trials, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        results = [_run_trial(data, cfg, k) for k in range(cfg.trials)]
    ok = [r for r in results if not r.failed]
    if not ok:
        raise TrainingError(f"all {cfg.trials} trials diverged")
    key = (lambda r: (r.test_loss, r.trial)) if cfg.test_days > 0 else (lambda r: (r.train_loss, r.trial))
    best = min(ok, key=key)
    return best.params, TrainReport(results, best.trial)
