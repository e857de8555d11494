import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decprony.bounds import (
    SweepConfig,
    accuracy_increases,
    alpha,
    bound_confluent,
    bound_polynomial,
    constant_C1,
    constant_C2,
    corollary_witness,
    crb_comparators,
    crb_node_asymptotic,
    donoho_comparators,
    dominance_sweep,
    improvement_rho,
    improvement_rho_two_nodes,
    random_signal,
    separation,
    superres_check,
)
from decprony.jacobian import inverse_jacobian_rows
from decprony.model import BASIC, CONFLUENT, POLYNOMIAL, PronySignal, SamplingGrid


@pytest.mark.parametrize("d0,p", [(0.01, 1), (0.01, 37), (1.3, 4), (2.5, 3)])
def test_separation_chord_identity(d0, p):
    delta, delta_p = separation([1, np.exp(1j * d0)], p)
    assert delta_p == pytest.approx(2 * abs(math.sin(p * d0 / 2)), rel=1e-12)
    assert separation([1, np.exp(1j * d0)], 1) == (delta, delta)


def test_separation_edge_cases():
    assert separation([1, -1], 2)[1] < 1e-15
    assert separation([0.3j]) == (math.inf, math.inf)


def test_constants_base_values():
    assert constant_C1(0, 1) == 2
    assert constant_C2(0, 1) == 2
    with pytest.raises(ValueError):
        constant_C1(1, 1)


@pytest.mark.parametrize("ell_j", range(1, 7))
def test_constants_at_least_leading_factor(ell_j):
    for ell in range(ell_j):
        c1, c2 = constant_C1(ell, ell_j), constant_C2(ell, ell_j)
        assert math.isfinite(c1) and c1 >= 2 / math.factorial(ell)
        assert c2 >= c1


def test_constant_hand_value():
    # l=1, l_j=3: (2/1!) * 2^3 * max(1, C(2,2)) * max(1, [3 1]=2) = 32; C2 adds 2^4 and {3 1}=1
    assert constant_C1(1, 3) == 32
    assert constant_C2(1, 3) == 64


def test_single_node_convention():
    s = PronySignal([1], [1], [[2.0]])
    rep = bound_polynomial(s, 0, 1, 0.5)
    # node bound 2 * eps / |a| with the separation factor set to 1
    assert rep.bound[1] == pytest.approx(2 * 0.5 / 2)
    assert math.isinf(rep.delta) and math.isinf(rep.delta_p)
    assert all(math.isnan(r) for r in rep.rho)


def _unit_pair(rng, mults=(1, 2)):
    nodes = np.exp(1j * np.array([0.2, 2.9]))
    coeffs = [rng.normal(size=m) + 1j * rng.normal(size=m) + 1.0 for m in mults]
    return PronySignal(nodes, list(mults), coeffs, POLYNOMIAL if max(mults) > 1 else BASIC)


def test_eps_linearity(rng):
    s = _unit_pair(rng)
    a = bound_polynomial(s, 3, 2, 1e-3)
    b = bound_polynomial(s, 3, 2, 2e-3)
    np.testing.assert_allclose(b.bound, 2 * a.bound, rtol=1e-15)
    np.testing.assert_allclose(b.exact, 2 * a.exact, rtol=1e-12)


def test_doubling_p_node_bound(rng):
    s = _unit_pair(rng)
    R = s.R
    for p in (1, 2, 3, 5):
        a = bound_polynomial(s, 0, p, 1.0)
        b = bound_polynomial(s, 0, 2 * p, 1.0)
        dp1, dp2 = separation(s.nodes, p)[1], separation(s.nodes, 2 * p)[1]
        idx = np.cumsum([m + 1 for m in s.mults]) - 1
        for j, i in enumerate(idx):
            want = (dp1 / dp2) ** R * 2.0 ** (-s.mults[j])
            assert b.bound[i] / a.bound[i] == pytest.approx(want, rel=1e-12)


def test_coefficient_bound_hand_value():
    s = PronySignal([1, -1], [1, 1], [[1], [2]])
    rep = bound_polynomial(s, 0, 1, 1.0)
    # R = C + K = 4, delta_1 = 2: C1 (2/2)^4 (1/2 + 4/2)^1 = 2 * 2.5
    assert rep.bound[0] == pytest.approx(5.0)
    assert rep.bound[2] == pytest.approx(5.0)
    # node bounds 2 (2/2)^4 / |a|
    assert rep.bound[1] == pytest.approx(2.0)
    assert rep.bound[3] == pytest.approx(1.0)


def test_zero_separation_gives_infinite_bound():
    s = PronySignal([1, -1], [1, 1], [[1], [1]])
    rep = bound_polynomial(s, 0, 2, 1.0)
    assert np.all(np.isinf(rep.bound))
    assert not rep.regular and rep.failures
    assert np.all(np.isnan(rep.exact))


def test_basic_coincidence(rng):
    for _ in range(20):
        s = random_signal(rng, BASIC)
        t, p = int(rng.integers(0, 10)), int(rng.integers(1, 10))
        a = bound_polynomial(s, t, p, 1e-2)
        b = bound_confluent(s, t, p, 1e-2)
        np.testing.assert_allclose(a.bound, b.bound, rtol=1e-12)
        if a.regular:
            np.testing.assert_allclose(a.exact, b.exact, rtol=1e-8)


def test_confluent_inflation_inside_disk():
    coeffs = [[1], [1]]
    inner = PronySignal([0.8, -0.8], [1, 1], coeffs, CONFLUENT)
    base = bound_confluent(inner, 0, 1, 1.0)
    for t in (0, 5, 20):
        rep = bound_confluent(inner, t, 1, 1.0)
        # coefficient rows also carry max(1, t^(l_j - l)) = max(1, t)
        factor = np.array([max(1, t), 1, max(1, t), 1]) * 0.8 ** (-t)
        np.testing.assert_allclose(rep.bound, base.bound * factor, rtol=1e-12)


def test_confluent_rejections():
    with pytest.raises(ValueError):
        bound_confluent(PronySignal([1.2], [1], [[1]]), 0, 1, 1.0)
    with pytest.raises(ValueError):
        bound_confluent(PronySignal([1], [2], [[1, 1]], POLYNOMIAL), 0, 1, 1.0)
    with pytest.raises(ValueError):
        bound_polynomial(PronySignal([0.5], [2], [[1, 1]], CONFLUENT), 0, 1, 1.0)


def test_report_serialization(rng):
    s = _unit_pair(rng)
    rep = bound_polynomial(s, 1, 3, 1e-3)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["t"] == 1 and d["p"] == 3
    rows = rep.rows(seed=9)
    assert len(rows) == s.R
    assert list(rows[0]) == ["param_id", "kind", "bound", "exact", "ratio", "delta", "delta_p", "t", "p", "eps", "seed"]
    assert rows[0]["seed"] == 9
    np.testing.assert_allclose([r["exact"] for r in rows], inverse_jacobian_rows(s, SamplingGrid(1, 3, s.R)).acc_loc(1e-3))


def test_rho_at_p_one(rng):
    s = _unit_pair(rng)
    assert improvement_rho(s, 0, 1) == 1.0
    assert improvement_rho(s, 1, 1) == 1.0
    with pytest.raises(ValueError):
        improvement_rho(PronySignal([1], [1], [[1]]), 0, 2)


def test_rho_two_node_closed_form():
    xi, p, R = 0.01, 100, 4
    want = (math.sin(0.5) / math.sin(0.005)) ** 4 * 100
    assert improvement_rho_two_nodes(xi, p, R, 1) == pytest.approx(want, rel=1e-12)
    s = PronySignal([1, np.exp(-1j * xi)], [1, 1], [[1], [1]])
    assert s.R == 4
    assert improvement_rho(s, 0, p) == pytest.approx(want, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(1, 60), st.integers(1, 3), st.integers(0, 1))
def test_rho_equivalent_to_accuracy_condition(xi, p, m, j):
    s = PronySignal([1, np.exp(1j * xi)], [m, 1], [[1] * m, [1]], POLYNOMIAL if m > 1 else BASIC)
    if separation(s.nodes, p)[1] < 1e-8:
        return
    rho = improvement_rho(s, j, p)
    if abs(rho - 1) < 1e-9:
        return
    assert (rho > 1) == accuracy_increases(s, j, p)


def test_alpha_values():
    assert abs(alpha(1e-6) - 1) <= 1e-9
    assert alpha(math.pi) == pytest.approx(2 / math.pi, rel=1e-15)
    assert alpha(0.5) == pytest.approx(math.sqrt(2 * (1 - math.cos(0.5))) / 0.5, rel=1e-14)
    with pytest.raises(ValueError):
        alpha(0)


def test_alpha_monotone_on_grid():
    r = np.linspace(0, 2 * np.pi, 10_002)[1:-1]
    vals = np.array([alpha(x) for x in r])
    assert np.all(np.diff(vals) < 0)


@pytest.mark.parametrize("p", range(1, 50))
def test_superres_lemma_grid(p):
    res = superres_check(1e-2, p, 0.5)
    assert res["lemma"] and res["corollary"]
    assert alpha(p * 1e-2) > alpha(0.5)
    assert res["delta_p"] == pytest.approx(2 * math.sin(p * 1e-2 / 2), rel=1e-10)


def test_superres_precondition():
    with pytest.raises(ValueError):
        superres_check(1e-2, 60, 0.5)


@pytest.mark.parametrize("xi,n,R", [(0.01, 10, 4), (0.3, 50, 2), (1.0, 3, 6), (0.05, 1000, 3)])
def test_corollary_witness(xi, n, R):
    w = corollary_witness(xi, n, R)
    assert w["found"] and n < w["p0"] <= n + math.ceil(2 * math.pi / xi)
    assert abs(math.sin(w["p0"] * xi / 2)) > 0.5
    assert w["holds"]


def test_crb_small_sample_node():
    s = PronySignal([1, -1j], [1, 2], [[1], [0.5, 1j]], POLYNOMIAL)
    rep = crb_comparators(s, 1.0, 10)
    assert rep.values["small_sample"]["z[0]"] == pytest.approx(1.0)
    assert rep.values["small_sample"]["z[1]"] == pytest.approx(1.0)
    for regime in rep.values.values():
        assert all(math.isfinite(v) and v > 0 for v in regime.values())
    with pytest.raises(ValueError):
        crb_comparators(s, 0.0, 10)


@pytest.mark.parametrize("ell_j", [1, 2, 3])
def test_crb_doubling(ell_j):
    a = crb_node_asymptotic(1.0, 1.0, 100, ell_j)
    b = crb_node_asymptotic(1.0, 1.0, 200, ell_j)
    assert a / b == pytest.approx(2 ** (2 * ell_j + 1), rel=1e-12)


def test_crb_slope():
    N = np.logspace(2, 5, 30)
    y = [crb_node_asymptotic(0.1, 2.0, n, 1) for n in N]
    slope = np.polyfit(np.log(N), np.log(y), 1)[0]
    assert abs(slope + 3) <= 0.01


def test_donoho_step_and_constant():
    rep = donoho_comparators(2, 100.0, 1e-3, 1e-6)
    assert rep.values["p"] == 33
    assert rep.values["C2"] == pytest.approx(math.sqrt(2 * (1 - math.cos(0.5))) / 0.5, rel=1e-14)
    assert all(math.isfinite(v) and v > 0 for v in rep.values.values())


def test_donoho_ratio_hand_value():
    R, Omega, Delta = 2, 100.0, 1e-3
    rep = donoho_comparators(R, Omega, Delta, 1.0)
    C2 = 2 * math.sin(0.25) / 0.5
    # (4/C2)^3 3^5 (Delta Omega)^-5 over 4^3 Delta^-5
    want = C2**-3 * 3**5 * Omega**-5
    assert rep.values["decimated"] / rep.values["undecimated"] == pytest.approx(want, rel=1e-12)


def test_donoho_ratio_scaling_in_omega():
    R, Delta = 3, 1e-4
    r1 = donoho_comparators(R, 100.0, Delta, 1.0).values
    r2 = donoho_comparators(R, 200.0, Delta, 1.0).values
    q1 = r1["decimated"] / r1["undecimated"]
    q2 = r2["decimated"] / r2["undecimated"]
    assert q1 / q2 == pytest.approx(2.0 ** (2 * R + 1), rel=1e-12)


def test_donoho_precondition():
    with pytest.raises(ValueError):
        donoho_comparators(2, 100.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        donoho_comparators(2, 5.0, 1e-3, 1.0)


def test_sweep_deterministic():
    cfg = SweepConfig(points=40, seed=3)
    a, b = dominance_sweep(cfg), dominance_sweep(cfg)
    assert a.evaluated == b.evaluated and a.excluded == b.excluded
    assert a.rows == b.rows
    assert a.evaluated == 40


def test_sweep_counts_exclusions():
    cfg = SweepConfig(points=60, seed=1, max_p=20)
    rep = dominance_sweep(cfg)
    assert rep.excluded > 0
    assert rep.evaluated == 60
    assert len({r["point"] for r in rep.rows}) == 60


def test_basic_sweep_dominates():
    rep = dominance_sweep(SweepConfig(points=150, seed=2, kind=BASIC))
    assert rep.evaluated == 150
    assert rep.passed


def test_dominance_holds_for_separated_pair_with_simple_and_double_node():
    s = PronySignal(np.exp(1j * np.array([0.0, 1.5])), [1, 2], [[1], [0.5, 1]], POLYNOMIAL)
    rep = bound_polynomial(s, 2, 1, 1.0)
    assert rep.dominance.all()


def test_single_node_convention_undercuts_exact_node_row():
    # one node of multiplicity 2: the node bound is half the exact value
    s = PronySignal([1], [2], [[0, 1]], POLYNOMIAL)
    rep = bound_polynomial(s, 0, 1, 1.0)
    assert rep.ratio[2] == pytest.approx(0.5, rel=1e-12)


def test_near_antipodal_counterexample_for_node_bound():
    # nodes 1 and e^{2.4i} with multiplicities (1, 3): the node bound falls below the exact value
    s = PronySignal([1, np.exp(2.4j)], [1, 3], [[1], [0, 0, 1]], POLYNOMIAL)
    rep = bound_polynomial(s, 0, 1, 1.0)
    assert rep.bound[-1] == pytest.approx(0.508, abs=1e-3)
    assert rep.exact[-1] == pytest.approx(0.611, abs=1e-3)
    assert not rep.dominance[-1]
