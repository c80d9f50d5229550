"""Backward-solver tests: stencil identities, ODE oracle, policy, artifacts.

The main independent oracle reduces the solved equation to a system of
ordinary differential equations: with identical variance drift under both
measures and a zero terminal condition the solution cannot depend on the
variance coordinate (advection, diffusion and the drift-gap source all
vanish), and with vega nodes placed at exact multiples of one fill's vega
jump the interpolation onto jump targets is exact, so the value at node m
obeys

    dv_m/ds = -(gamma xi^2 / 8) (m z vega)^2
              + z [ H_bid((v_m - v_{m+1}) / z)  if |m+1| within the limit ]
              + z [ H_ask((v_m - v_{m-1}) / z)  if |m-1| within the limit ]

in backward time s = T - t.  A high-order adaptive integration of that system
is compared against the explicit march.
"""

import hashlib
import logging
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from optmm.hjb import (
    CFLViolation,
    OptionBook,
    SolverGrid,
    TraderConfig,
    ValueFunction,
    artifact_id,
    cfl_number,
    load_value_function,
    quote_policy,
    save_value_function,
    side_sign,
    solve,
    validate_book_trader,
    value_at,
    value_function_bytes,
    value_function_csv,
    value_function_from_bytes,
)
from optmm.model import OptionSpec
from optmm.quoting import IntensityCurve, TradeSizeLaw

from helpers import (
    flat_drift_params,
    make_params,
    one_option_book,
    small_trader,
    vega_multiple_grid,
)


# ---------------------------------------------------------------------------
# Structural pieces
# ---------------------------------------------------------------------------

def test_side_sign():
    assert side_sign("ask") == 1
    assert side_sign("bid") == -1
    with pytest.raises(ValueError):
        side_sign("mid")


def test_trader_validation():
    with pytest.raises(ValueError):
        small_trader(gamma=-1.0)
    with pytest.raises(ValueError):
        small_trader(vega_limit=0.0)
    with pytest.raises(ValueError):
        small_trader(horizon=0.0)
    with pytest.raises(ValueError):
        small_trader(delta_floor=math.inf)


def test_book_validation():
    curve = IntensityCurve.logistic(lambda_max=10.0, alpha=0.7, slope=30.0)
    opt = OptionSpec(strike=10.0, maturity=1.0)
    with pytest.raises(ValueError):
        OptionBook(options=(), vegas=np.array([]), sizes=(), curves=())
    with pytest.raises(ValueError):
        OptionBook(options=(opt,), vegas=np.array([1.0, 2.0]),
                   sizes=(TradeSizeLaw(z=1.0),), curves=((curve, curve),))
    with pytest.raises(ValueError):
        OptionBook(options=(opt,), vegas=np.array([-1.0]),
                   sizes=(TradeSizeLaw(z=1.0),), curves=((curve, curve),))
    book = one_option_book()
    assert book.n_options == 1
    assert book.vega_jump(0) == pytest.approx(book.sizes[0].z * book.vegas[0])


def test_book_trader_cross_validation():
    book = one_option_book(option=OptionSpec(strike=10.0, maturity=0.001))
    with pytest.raises(ValueError, match="outlive"):
        validate_book_trader(book, small_trader(horizon=0.0012))
    big_jump = one_option_book(vega_value=1.0, z=100.0)
    with pytest.raises(ValueError, match="risk limit"):
        validate_book_trader(big_jump, small_trader(vega_limit=49.0))


def test_grid_construction():
    grid = SolverGrid.regular(n_time=10, nu_min=0.01, nu_max=0.03, n_nu=5,
                              vega_limit=100.0, n_vega=4)
    assert grid.nu_nodes[0] == 0.01 and grid.nu_nodes[-1] == 0.03
    assert grid.vega_nodes[0] == -100.0 and grid.vega_nodes[-1] == 100.0
    assert grid.d_nu == pytest.approx(0.005)
    with pytest.raises(ValueError):
        SolverGrid(n_time=0, nu_nodes=grid.nu_nodes,
                   vega_nodes=grid.vega_nodes)
    with pytest.raises(ValueError):
        SolverGrid(n_time=1, nu_nodes=np.array([0.01, 0.02, 0.04]),
                   vega_nodes=grid.vega_nodes)
    with pytest.raises(ValueError):
        SolverGrid(n_time=1, nu_nodes=np.array([-0.01, 0.01]),
                   vega_nodes=grid.vega_nodes)
    with pytest.raises(ValueError):
        SolverGrid(n_time=1, nu_nodes=grid.nu_nodes,
                   vega_nodes=np.array([-2.0, 0.0, 1.0]))


def test_cfl_number_and_violation():
    params = make_params()
    trader = small_trader()
    grid = SolverGrid.regular(n_time=2, nu_min=0.0144, nu_max=0.0324, n_nu=30,
                              vega_limit=trader.vega_limit, n_vega=5)
    nu = grid.nu_nodes
    expected = (trader.horizon / 2) * np.max(
        np.abs(params.drift_p.rate(nu)) / grid.d_nu
        + nu * params.xi**2 / grid.d_nu**2)
    assert cfl_number(params, trader, grid) == pytest.approx(expected,
                                                             rel=1e-14)
    book = one_option_book()
    assert cfl_number(params, trader, grid) > 1.0
    with pytest.raises(CFLViolation):
        solve(params, book, trader, grid)


def test_auto_refine_matches_manual_fine_solve():
    params = make_params()
    trader = small_trader()
    coarse = SolverGrid.regular(n_time=2, nu_min=0.0144, nu_max=0.0324,
                                n_nu=30, vega_limit=trader.vega_limit,
                                n_vega=5)
    book = one_option_book(vega_value=1.25, z=1e6)
    number = cfl_number(params, trader, coarse)
    assert number > 1.0
    auto = solve(params, book, trader, coarse, auto_refine=True)
    n_needed = int(math.ceil(coarse.n_time * number * 1.05))
    assert auto.grid.n_time == n_needed
    manual = solve(params, book, trader, SolverGrid(
        n_time=n_needed, nu_nodes=coarse.nu_nodes,
        vega_nodes=coarse.vega_nodes))
    assert np.array_equal(auto.values, manual.values)


def test_solver_rejects_mismatched_vega_span():
    params = make_params()
    trader = small_trader(vega_limit=1e7)
    grid = SolverGrid.regular(n_time=50, nu_min=0.0144, nu_max=0.0324, n_nu=5,
                              vega_limit=5e6, n_vega=5)
    with pytest.raises(ValueError, match="span"):
        solve(params, one_option_book(), trader, grid)


# ---------------------------------------------------------------------------
# Single explicit step: exact update formula
# ---------------------------------------------------------------------------

def test_single_step_update_formula():
    params = make_params()
    book = one_option_book(vega_value=1.25, z=1e6)  # jump 1.25e6
    trader = small_trader(gamma=1e-3, delta_floor=-0.5, vega_limit=5e6,
                          horizon=1e-5)
    grid = SolverGrid.regular(n_time=1, nu_min=0.02, nu_max=0.025, n_nu=4,
                              vega_limit=5e6, n_vega=9)
    vf = solve(params, book, trader, grid)
    dt = trader.horizon
    nu = grid.nu_nodes[:, None]
    vg = grid.vega_nodes[None, :]
    source = (vg * (params.drift_p.rate(nu) - params.drift_q.rate(nu))
              / (2.0 * np.sqrt(nu))
              - trader.gamma * params.xi**2 / 8.0 * vg**2)
    h0, _ = book.curves[0][0].hamiltonian_pair(0.0, trader.delta_floor)
    jump = book.vega_jump(0)
    z = book.sizes[0].z
    expected = dt * source.copy()
    for side in ("bid", "ask"):
        target = grid.vega_nodes - side_sign(side) * jump
        adm = np.abs(target) <= trader.vega_limit * (1 + 1e-9)
        expected[:, adm] += dt * z * h0
    assert np.allclose(vf.values[0], expected, rtol=1e-12, atol=1e-15)
    assert np.array_equal(vf.values[1], np.zeros_like(vf.values[1]))


def test_terminal_condition_override():
    params = flat_drift_params()
    book = one_option_book(vega_value=1.25, z=1e6)
    trader = small_trader(gamma=0.0, delta_floor=-0.5, vega_limit=5e6,
                          horizon=1e-5)
    grid = SolverGrid.regular(n_time=1, nu_min=0.02, nu_max=0.025, n_nu=4,
                              vega_limit=5e6, n_vega=9)
    terminal = np.linspace(0.0, 1.0, 9) * np.ones((4, 1))
    vf = solve(params, book, trader, grid, terminal=terminal)
    assert np.array_equal(vf.values[-1], terminal)
    with pytest.raises(ValueError, match="shape"):
        solve(params, book, trader, grid, terminal=np.zeros((3, 3)))


def test_scheme_preserves_terminal_ordering():
    """A pointwise-larger terminal slice yields a pointwise-larger solution.

    Monotonicity of the explicit step under the CFL bound is what rules out
    spurious oscillations; it must hold for any nonnegative perturbation.
    """
    params = make_params()
    book = one_option_book(vega_value=1.25, z=1e6)
    trader = small_trader(gamma=1e-3, delta_floor=-0.5, vega_limit=5e6,
                          horizon=0.0012)
    grid = SolverGrid.regular(n_time=400, nu_min=0.0144, nu_max=0.0324,
                              n_nu=10, vega_limit=5e6, n_vega=9)
    assert cfl_number(params, trader, grid) <= 1.0
    rng = np.random.default_rng(5)
    bump = rng.uniform(0.0, 50.0, size=(10, 9))
    base = solve(params, book, trader, grid)
    upper = solve(params, book, trader, grid, terminal=bump)
    gap = upper.values - base.values
    assert np.min(gap) >= -1e-9 * np.max(np.abs(base.values))


# ---------------------------------------------------------------------------
# ODE oracle for the reduced single-option system
# ---------------------------------------------------------------------------

def _ode_oracle(book, trader, n_lots, t_eval):
    """Integrate the per-node system with adaptive high-order stepping."""
    z = book.sizes[0].z
    jump = book.vega_jump(0)
    bid, ask = book.curves[0]
    nodes = np.arange(-n_lots, n_lots + 1) * jump
    n_nodes = len(nodes)
    xi = 0.2
    pen = trader.gamma * xi**2 / 8.0

    def rhs(_, v):
        dv = -pen * nodes**2
        out = dv.copy()
        for m in range(n_nodes):
            if m + 1 < n_nodes:  # bid fill moves vega up one lot
                p = (v[m] - v[m + 1]) / z
                h, _ = bid.hamiltonian_pair(float(p), trader.delta_floor)
                out[m] += z * h
            if m - 1 >= 0:       # ask fill moves vega down one lot
                p = (v[m] - v[m - 1]) / z
                h, _ = ask.hamiltonian_pair(float(p), trader.delta_floor)
                out[m] += z * h
        return out

    sol = solve_ivp(rhs, (0.0, trader.horizon), np.zeros(n_nodes),
                    t_eval=t_eval, rtol=1e-10, atol=1e-12, method="RK45")
    assert sol.success
    return nodes, sol.y


def test_reduced_solution_matches_ode_oracle():
    params = flat_drift_params(xi=0.2, kappa=2.0, theta=0.04)
    vega_value = 1.25
    z = 4e5
    book = one_option_book(vega_value=vega_value, z=z, lambda_max=7560.0,
                           alpha=0.7, slope=150.0 / vega_value)
    jump = z * vega_value
    n_lots = 3
    trader = small_trader(gamma=1e-3, delta_floor=-50.0 * vega_value / 150.0,
                          vega_limit=n_lots * jump, horizon=0.0012)
    grid = vega_multiple_grid(n_time=2500, nu_min=0.0144, nu_max=0.0324,
                              n_nu=5, vega_jump=jump, n_lots=n_lots)
    assert cfl_number(params, trader, grid) <= 1.0
    vf = solve(params, book, trader, grid)

    nodes, y = _ode_oracle(book, trader, n_lots,
                           t_eval=[trader.horizon])
    oracle_t0 = y[:, -1]  # backward time T corresponds to t = 0
    solved_t0 = vf.values[0]
    # variance independence with equal drifts
    assert np.max(np.abs(solved_t0 - solved_t0[0])) <= 1e-10 * np.max(
        np.abs(solved_t0))
    scale = np.max(np.abs(oracle_t0))
    rel = np.abs(solved_t0[0] - oracle_t0) / scale
    assert np.max(rel) < 1e-3
    assert np.max(np.abs(oracle_t0)) > 0


def test_variance_independence_with_equal_drifts():
    params = flat_drift_params()
    book = one_option_book(vega_value=1.25, z=4e5)
    jump = book.vega_jump(0)
    trader = small_trader(gamma=1e-3, delta_floor=-0.5, vega_limit=3 * jump,
                          horizon=0.0012)
    grid = vega_multiple_grid(n_time=800, nu_min=0.0144, nu_max=0.0324,
                              n_nu=12, vega_jump=jump, n_lots=3)
    vf = solve(params, book, trader, grid)
    spread = vf.values.max(axis=1) - vf.values.min(axis=1)
    assert np.max(spread) <= 1e-10 * np.max(np.abs(vf.values))


# ---------------------------------------------------------------------------
# Value-function lookups
# ---------------------------------------------------------------------------

def _toy_vf():
    grid = SolverGrid(n_time=2, nu_nodes=np.array([0.01, 0.02, 0.03]),
                      vega_nodes=np.array([-10.0, 0.0, 10.0]))
    values = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
    values = np.concatenate([values, values[-1:]], axis=0)  # 3 time slices
    return ValueFunction(grid=grid, horizon=0.002, values=values)


def test_value_lookup_nodes_and_interpolation():
    vf = _toy_vf()
    # exact node recovery at t = 0
    for m, nu in enumerate(vf.grid.nu_nodes):
        for l, vg in enumerate(vf.grid.vega_nodes):
            assert vf.value_at(0.0, float(nu), float(vg)) == vf.values[0, m, l]
    # bilinear midpoint
    mid = vf.value_at(0.0, 0.015, 5.0)
    corners = vf.values[0, 0:2, 1:3]
    assert mid == pytest.approx(corners.mean(), rel=1e-14)
    # time interpolation halfway between slices 0 and 1
    halfway = vf.value_at(0.0005, 0.01, -10.0)
    assert halfway == pytest.approx(
        0.5 * (vf.values[0, 0, 0] + vf.values[1, 0, 0]), rel=1e-14)
    assert value_at(vf, 0.0, 0.01, -10.0) == vf.values[0, 0, 0]


def test_value_lookup_clamps(caplog):
    vf = _toy_vf()
    # vega clamps silently
    assert vf.value_at(0.0, 0.02, 99.0) == vf.value_at(0.0, 0.02, 10.0)
    # nu clamps with a warning
    with caplog.at_level(logging.WARNING, logger="optmm.hjb"):
        out = vf.value_at(0.0, 0.5, 0.0)
    assert out == vf.value_at(0.0, 0.03, 0.0)
    assert any("clamp" in rec.message for rec in caplog.records)
    # times beyond the horizon clamp to the terminal slice
    assert vf.value_at(99.0, 0.01, 0.0) == vf.values[-1, 0, 1]


def test_value_function_shape_validation():
    grid = SolverGrid(n_time=2, nu_nodes=np.array([0.01, 0.02]),
                      vega_nodes=np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        ValueFunction(grid=grid, horizon=0.001, values=np.zeros((2, 2, 2)))


# ---------------------------------------------------------------------------
# Quote policy
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def solved_small():
    params = make_params()
    vega_value = 1.25
    z = 4e5
    book = one_option_book(vega_value=vega_value, z=z)
    jump = z * vega_value
    trader = small_trader(gamma=1e-3, delta_floor=-50.0 * vega_value / 150.0,
                          vega_limit=3 * jump, horizon=0.0012)
    grid = vega_multiple_grid(n_time=1200, nu_min=0.0144, nu_max=0.0324,
                              n_nu=10, vega_jump=jump, n_lots=3)
    vf = solve(params, book, trader, grid)
    return params, book, trader, vf


def test_quote_policy_no_quote_marker(solved_small):
    params, book, trader, vf = solved_small
    policy = quote_policy(vf, book, trader)
    top = trader.vega_limit
    # at the positive cap another bid would breach the limit: no bid quote
    assert math.isnan(policy.quote(0, "bid", 0.0, 0.02, top))
    assert not math.isnan(policy.quote(0, "ask", 0.0, 0.02, top))
    # mirrored at the bottom
    assert math.isnan(policy.quote(0, "ask", 0.0, 0.02, -top))
    assert not math.isnan(policy.quote(0, "bid", 0.0, 0.02, -top))
    # interior nodes quote both sides
    assert not math.isnan(policy.quote(0, "bid", 0.0, 0.02, 0.0))
    table = policy.quote_table(0.0, 0.02)
    assert table.shape == (1, 2, len(vf.grid.vega_nodes))
    assert math.isnan(table[0, 0, -1]) and math.isnan(table[0, 1, 0])
    assert np.isfinite(table[0, 0, :-1]).all()
    assert np.isfinite(table[0, 1, 1:]).all()


def test_quote_policy_reservation_spread_signs(solved_small):
    params, book, trader, vf = solved_small
    policy = quote_policy(vf, book, trader)
    # long vega: another bid concentrates risk, so the bid spread must sit
    # above the flat-book bid spread; the ask side tightens to shed risk
    jump = book.vega_jump(0)
    bid_flat = policy.quote(0, "bid", 0.0, 0.02, 0.0)
    bid_long = policy.quote(0, "bid", 0.0, 0.02, 2 * jump)
    ask_flat = policy.quote(0, "ask", 0.0, 0.02, 0.0)
    ask_long = policy.quote(0, "ask", 0.0, 0.02, 2 * jump)
    assert bid_long > bid_flat
    assert ask_long < ask_flat
    # scalar path equals batch path
    batch = policy.quote_batch(0, "bid", 0.0, np.array([0.02, 0.02]),
                               np.array([0.0, 2 * jump]))
    assert batch[0] == pytest.approx(bid_flat, rel=1e-14)
    assert batch[1] == pytest.approx(bid_long, rel=1e-14)


def test_quote_policy_bid_monotone_in_vega(solved_small):
    params, book, trader, vf = solved_small
    policy = quote_policy(vf, book, trader)
    for nu in (0.0144, 0.02, 0.0324):
        quotes = policy.quote_batch(
            0, "bid", 0.0, np.full_like(vf.grid.vega_nodes, nu),
            vf.grid.vega_nodes)
        finite = quotes[~np.isnan(quotes)]
        assert np.all(np.diff(finite) >= -1e-9 * max(1.0, np.max(
            np.abs(finite))))


def test_bid_ask_symmetry_under_symmetric_curves():
    # equal drifts kill the odd-in-vega source, identical bid/ask curves make
    # the dynamics invariant under (V, bid) <-> (-V, ask); the value is then
    # even in vega and delta_bid(V) = delta_ask(-V) node for node
    params = flat_drift_params()
    book = one_option_book(vega_value=1.25, z=4e5)
    jump = book.vega_jump(0)
    trader = small_trader(gamma=1e-3, delta_floor=-50.0 * 1.25 / 150.0,
                          vega_limit=3 * jump, horizon=0.0012)
    grid = vega_multiple_grid(n_time=1200, nu_min=0.0144, nu_max=0.0324,
                              n_nu=10, vega_jump=jump, n_lots=3)
    vf = solve(params, book, trader, grid)
    v0 = vf.values[0]
    assert np.max(np.abs(v0 - v0[:, ::-1])) <= 1e-9 * np.max(np.abs(v0))
    policy = quote_policy(vf, book, trader)
    vg = vf.grid.vega_nodes
    bid = policy.quote_batch(0, "bid", 0.0, np.full_like(vg, 0.02), vg)
    ask = policy.quote_batch(0, "ask", 0.0, np.full_like(vg, 0.02), vg)
    # the two no-quote markers land on the same flipped position (+limit cap)
    flipped = ask[::-1]
    both = ~(np.isnan(bid) | np.isnan(flipped))
    assert both.sum() == len(vg) - 1
    assert np.allclose(bid[both], flipped[both], rtol=1e-8, atol=1e-12)


def test_quote_policy_validates_book(solved_small):
    params, book, trader, vf = solved_small
    bad_trader = small_trader(vega_limit=book.vega_jump(0) / 4.0,
                              horizon=trader.horizon)
    with pytest.raises(ValueError):
        quote_policy(vf, book, bad_trader)


# ---------------------------------------------------------------------------
# Artifact serialisation
# ---------------------------------------------------------------------------

def test_artifact_round_trip(tmp_path, solved_small):
    _, _, _, vf = solved_small
    raw = value_function_bytes(vf)
    again = value_function_from_bytes(raw)
    assert np.array_equal(again.values, vf.values)
    assert np.array_equal(again.grid.nu_nodes, vf.grid.nu_nodes)
    assert np.array_equal(again.grid.vega_nodes, vf.grid.vega_nodes)
    assert again.horizon == vf.horizon
    assert again.grid.n_time == vf.grid.n_time

    path = tmp_path / "vf.bin"
    save_value_function(vf, path)
    loaded = load_value_function(path)
    assert np.array_equal(loaded.values, vf.values)
    assert value_function_bytes(loaded) == raw

    ident = artifact_id(raw)
    assert ident == hashlib.sha256(raw).hexdigest()[:16]
    assert artifact_id(value_function_bytes(loaded)) == ident


def test_artifact_rejects_corruption(solved_small):
    _, _, _, vf = solved_small
    raw = value_function_bytes(vf)
    with pytest.raises(ValueError, match="magic"):
        value_function_from_bytes(b"X" + raw[1:])
    with pytest.raises(ValueError, match="version"):
        value_function_from_bytes(raw[:16] + bytes([raw[16] + 1]) + raw[17:])


def test_value_function_csv(solved_small):
    _, _, _, vf = solved_small
    text = value_function_csv(vf, t_index=0)
    lines = text.strip().split("\n")
    assert lines[0] == "t_index,nu_index,vega_index,value"
    n_nu = len(vf.grid.nu_nodes)
    n_vega = len(vf.grid.vega_nodes)
    assert len(lines) == 1 + n_nu * n_vega
    first = lines[1].split(",")
    assert first[:3] == ["0", "0", "0"]
    assert float(first[3]) == pytest.approx(vf.values[0, 0, 0], rel=1e-11)
    full = value_function_csv(vf)
    assert len(full.strip().split("\n")) == 1 + (
        vf.grid.n_time + 1) * n_nu * n_vega
