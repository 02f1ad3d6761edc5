import io

import numpy as np
import pytest

from mobgp.epimodel import (
    EpiState,
    GlobalParams,
    RegionInit,
    rollout,
    step,
    symbolic_state_posynomials,
    transition_matrix,
)
from mobgp.errors import DegeneracyError, InputError, SizeLimitError, ValidationError
from mobgp.mobility import MobilityMapParams, beta_posynomial, beta_series
from mobgp.posynomial import Posynomial

G_EX = GlobalParams(0.2, 0.3, 0.1, 0.05, 0.1, 0.1, 0.2)
S_EX = EpiState(10, 5, 4, 2, 0, 0)


def random_globals(rng):
    ei, ea = rng.uniform(0.05, 0.45, 2)
    ir, ih = rng.uniform(0.02, 0.45, 2)
    return GlobalParams(ei, ea, ir, ih, *rng.uniform(0.02, 0.5, 3))


def random_state(rng):
    return EpiState(*rng.uniform(0, 1000, 6))


def test_single_step_hand_values():
    s = step(S_EX, G_EX, S0=1000, beta=1e-4, gamma_A=0.5)
    np.testing.assert_allclose(s.as_array(), [5.7, 6.25, 6.6, 2.05, 1.06, 0.04], rtol=1e-12, atol=1e-12)


def test_no_flows_leave_state_unchanged():
    # rates must be strictly positive, so use the smallest representable ones
    tiny = GlobalParams(*([1e-300] * 7))
    s = step(S_EX, tiny, S0=1000, beta=0.0, gamma_A=0.5)
    np.testing.assert_allclose(s.as_array(), S_EX.as_array(), rtol=1e-15, atol=1e-290)


def test_disease_free_state_is_fixed():
    s = step(EpiState(0, 0, 0, 0, 7, 3), G_EX, S0=1000, beta=0.5, gamma_A=0.5)
    assert s == EpiState(0, 0, 0, 0, 7, 3)


@pytest.mark.parametrize(
    "args",
    [
        (0.6, 0.5, 0.1, 0.1, 0.1, 0.1, 0.1),
        (0.1, 0.1, 0.6, 0.5, 0.1, 0.1, 0.1),
        (0.1, 0.1, 0.1, 0.1, 1.0, 0.1, 0.1),
        (0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.0),
    ],
)
def test_invalid_global_params(args):
    with pytest.raises(ValidationError):
        GlobalParams(*args)


def test_negative_beta_rejected():
    with pytest.raises(ValidationError):
        step(S_EX, G_EX, 1000, -1.0, 0.5)


def test_flow_conservation_and_monotonicity(rng):
    for _ in range(10_000):
        g = random_globals(rng)
        s = random_state(rng)
        S0, beta, gA = rng.uniform(1, 1e6), rng.uniform(0, 1e-5), rng.uniform(0, 2)
        n = step(s, g, S0, beta, gA)
        inflow = S0 * beta * (gA * s.A + s.I)
        total = n.as_array().sum() - s.as_array().sum()
        assert abs(total - inflow) <= 1e-12 * max(1.0, s.as_array().sum() + inflow)
        assert n.D >= s.D and n.R >= s.R
        assert min(n.as_array()) >= 0


def test_rollout_zero_horizon():
    init = RegionInit(1000, 10, 5, 4, 2, 0, 0)
    tr = rollout(init, G_EX, 0.5, [], 0)
    assert tr.T == 0 and tr.states[0] == init.state()


def test_rollout_one_step_matches_step():
    init = RegionInit(1000, 10, 5, 4, 2, 0, 0)
    tr = rollout(init, G_EX, 0.5, [1e-4], 1)
    np.testing.assert_allclose(tr.states[1].as_array(), [5.7, 6.25, 6.6, 2.05, 1.06, 0.04], rtol=1e-12)


def test_rollout_short_series():
    with pytest.raises(InputError):
        rollout(RegionInit(1000, 1, 1, 1, 1), G_EX, 0.5, [0.1], 3)


def test_zero_beta_closed_form_deaths():
    g = G_EX
    init = RegionInit(1000, 10, 5, 4, 2, 0, 1)
    T = 30
    tr = rollout(init, g, 0.5, np.zeros(T), T)
    # E, I, H in closed form without infections
    aE, aI, aH = 1 - g.rho_EI - g.rho_EA, 1 - g.rho_IR - g.rho_IH, 1 - g.rho_HR
    t = np.arange(T + 1)
    E = init.E0 * aE**t
    np.testing.assert_allclose(tr.column("E"), E, rtol=1e-12)
    I = np.empty(T + 1)
    H = np.empty(T + 1)
    I[0], H[0] = init.I0, init.H0
    for k in range(T):
        I[k + 1] = aI * I[k] + g.rho_EI * E[k]
        H[k + 1] = aH * H[k] + g.rho_IH * I[k]
    expected_D = init.D0 + g.alpha_D * g.rho_HR * H[:T].sum()
    assert tr.column("D")[-1] == pytest.approx(expected_D, rel=1e-12)


def test_linearity_in_state(rng):
    init = RegionInit(5000, 10, 5, 4, 2, 3, 1)
    lam = 3.7
    scaled = RegionInit(5000, *(lam * np.array([10, 5, 4, 2, 3, 1.0])))
    beta = rng.uniform(0, 1e-4, 20)
    a = rollout(init, G_EX, 0.5, beta, 20).array()
    b = rollout(scaled, G_EX, 0.5, beta, 20).array()
    np.testing.assert_allclose(b, lam * a, rtol=1e-12)


def test_trajectory_csv():
    tr = rollout(RegionInit(1000, 10, 5, 4, 2, 0, 0), G_EX, 0.5, [1e-4, 2e-4], 2)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,E,I,A,H,R,D,beta"
    assert len(lines) == 4
    assert lines[-1].endswith(",")  # no rate after the last day
    buf = io.StringIO()
    tr.write_csv(buf)
    assert buf.getvalue() == tr.to_csv()


def test_transition_matrix_structure():
    beta = Posynomial.constant(2e-4)
    M = transition_matrix(G_EX, 1000.0, 0.5, beta).to_numeric()
    g = G_EX
    expected = np.array(
        [
            [1 - g.rho_EI - g.rho_EA, 1000 * 2e-4, 0.5 * 1000 * 2e-4, 0],
            [g.rho_EI, 1 - g.rho_IR - g.rho_IH, 0, 0],
            [g.rho_EA, 0, 1 - g.rho_AR, 0],
            [0, g.rho_IH, 0, 1 - g.rho_HR],
        ]
    )
    np.testing.assert_allclose(M, expected, rtol=1e-15)
    sym = transition_matrix(G_EX, 1000.0, 0.5, Posynomial.variable("u"))
    for i, j in [(0, 3), (1, 2), (1, 3), (2, 1), (2, 3), (3, 0), (3, 2)]:
        assert sym[i, j] is None


def test_symbolic_first_step_is_constant():
    init = RegionInit(1000, 10, 5, 4, 2, 0, 0)
    mm = MobilityMapParams([1e-4], [1.0], 1e-6, 0.5)
    bp = beta_posynomial(mm, ["u"])
    H, D = symbolic_state_posynomials(init, G_EX, 0.5, [bp] * 3, 3)
    assert H[1].is_constant
    assert H[1].constant_value() == pytest.approx((1 - G_EX.rho_HR) * 2 + G_EX.rho_IH * 5, rel=1e-15)
    # beta enters E first, so controls reach H with a lag of three days
    assert H[2].is_constant and not H[3].is_constant


def test_symbolic_matches_rollout(rng):
    for _ in range(100):
        T = int(rng.integers(1, 11))
        K = int(rng.integers(1, 4))
        g = random_globals(rng)
        S0 = rng.uniform(1e3, 1e5)
        mm = MobilityMapParams(rng.uniform(0.05, 0.4, K) / (K * S0), rng.uniform(-1, 2, K), rng.uniform(0, 0.01) / S0, rng.uniform(0, 1))
        init = RegionInit(S0, *rng.uniform(0, 50, 4), 0.0, rng.uniform(0, 5))
        n_blocks = int(rng.integers(1, 3))
        names = [[f"u_{k}_{w}" for k in range(K)] for w in range(n_blocks)]
        posys = [beta_posynomial(mm, names[min(t * n_blocks // T, n_blocks - 1)]) for t in range(T)]
        H, D = symbolic_state_posynomials(init, g, mm.gamma_A, posys, T)
        for _ in range(3):
            pt = {v: float(rng.uniform(0.2, 1.5)) for row in names for v in row}
            betas = [p.eval(pt) for p in posys]
            tr = rollout(init, g, mm.gamma_A, betas, T)
            for t in range(T + 1):
                for sym, num in ((H[t], tr.states[t].H), (D[t], tr.states[t].D)):
                    if sym is None:
                        assert num == 0
                    else:
                        assert sym.eval(pt) == pytest.approx(num, rel=1e-9)


def test_symbolic_degenerate_state():
    init = RegionInit(1000, 0, 0, 0, 0, 0, 5)
    bp = Posynomial.variable("u")
    with pytest.raises(DegeneracyError):
        symbolic_state_posynomials(init, G_EX, 0.5, [bp] * 2, 2)


def test_symbolic_size_limit():
    init = RegionInit(1000, 10, 5, 4, 2)
    names = [f"u{k}" for k in range(7)]
    bp = sum((Posynomial.variable(n) for n in names[1:]), Posynomial.variable(names[0]))
    with pytest.raises(SizeLimitError):
        symbolic_state_posynomials(init, G_EX, 0.5, [bp] * 91, 91)


def test_series_helper_matches_rates():
    mm = MobilityMapParams([0.1, 0.2], [1.0, 2.0], 0.01, 0.5)
    m = np.array([[1.0, 1.0], [0.5, 2.0]])
    np.testing.assert_allclose(beta_series(m, mm), [0.31, 0.1 * 0.5 + 0.2 * 4 + 0.01], rtol=1e-15)
