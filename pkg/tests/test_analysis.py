import numpy as np
import pytest

from conftest import GOLDEN_EDGE_PRECISION, charpoly_radius, quartet_model, rand_spd
from corpus import SHOWCASE_DIVERGENT, frustrated_model
from gabp.analysis import (assemble_q, beliefs_from_v2f_means, certify,
                           compute_bounds, decide_mean_convergence,
                           fit_contraction_rate, information_fixed_point,
                           two_phase_mean_recursion)
from gabp.bp import BpOptions, Message, run_bp
from gabp.errors import DomainError, IterationBudgetError
from gabp.graph import build_factor_graph
from gabp.model import centralized_solve, random_model
from gabp.numerics import part_metric, psd_compare


def test_upper_bound_is_sensor_information(quartet):
    g = build_factor_graph(quartet)
    bounds = compute_bounds(quartet, g)
    for (n, i) in g.f2v_edges:
        f = quartet.factor(n)
        a = f.coeff[i]
        expected = a.T @ np.linalg.solve(f.noise_cov, a)
        np.testing.assert_allclose(bounds.upper[(n, i)], expected, atol=1e-14)


def test_lower_bound_equals_first_zero_init_iterate(quartet):
    # dual route: compute_bounds builds L in closed form; the recursion
    # reaches the same matrices after exactly one step from zero
    g = build_factor_graph(quartet)
    bounds = compute_bounds(quartet, g)
    fp = information_fixed_point(quartet, g, init="zero", record=True)
    first = fp.history[1]
    for e in g.f2v_edges:
        np.testing.assert_allclose(bounds.lower[e], first[e], atol=1e-12)


def test_golden_ratio_fixed_point(two_agent_unit_chain):
    fp = information_fixed_point(two_agent_unit_chain)
    for j in fp.f2v.values():
        assert j[0, 0] == pytest.approx(GOLDEN_EDGE_PRECISION, abs=1e-12)
    # v2f companions: prior precision 1 plus the other factor's message
    for j in fp.v2f.values():
        assert j[0, 0] == pytest.approx(1.0 + GOLDEN_EDGE_PRECISION, abs=1e-12)


def test_fixed_point_is_init_invariant(quartet):
    g = build_factor_graph(quartet)
    ref = information_fixed_point(quartet, g, init="zero")
    rng = np.random.default_rng(3)
    custom = {e: rand_spd(rng, 1, scale=2.0) for e in g.f2v_edges}
    for fp in (
        information_fixed_point(quartet, g, init="upper"),
        information_fixed_point(quartet, g, init="lower"),
        information_fixed_point(quartet, g, init="custom", custom=custom),
    ):
        for e in g.f2v_edges:
            np.testing.assert_allclose(fp.f2v[e], ref.f2v[e], atol=1e-10)


def test_zero_init_iterates_are_monotone_and_sandwiched(quartet):
    g = build_factor_graph(quartet)
    bounds = compute_bounds(quartet, g)
    fp = information_fixed_point(quartet, g, init="zero", record=True)
    hist = fp.history
    for ell in range(1, len(hist)):
        for e in g.f2v_edges:
            assert psd_compare(hist[ell][e], bounds.lower[e])
            assert psd_compare(bounds.upper[e], hist[ell][e])
            if ell >= 2:
                assert psd_compare(hist[ell][e], hist[ell - 1][e])


def test_upper_init_iterates_are_nonincreasing(quartet):
    g = build_factor_graph(quartet)
    fp = information_fixed_point(quartet, g, init="upper", record=True)
    hist = fp.history
    for ell in range(1, len(hist)):
        for e in g.f2v_edges:
            assert psd_compare(hist[ell - 1][e], hist[ell][e])


def test_lower_init_saves_exactly_one_iteration(quartet):
    g = build_factor_graph(quartet)
    from_zero = information_fixed_point(quartet, g, init="zero")
    from_lower = information_fixed_point(quartet, g, init="lower")
    assert from_lower.iterations <= from_zero.iterations
    assert from_zero.iterations - from_lower.iterations <= 1


def test_fixed_point_budget_error(quartet):
    with pytest.raises(IterationBudgetError):
        information_fixed_point(quartet, max_iters=2)


def test_q_block_sparsity_pattern(quartet):
    g = build_factor_graph(quartet)
    fp = information_fixed_point(quartet, g)
    qs = assemble_q(quartet, g, fp)
    assert qs.q.shape == (g.total_v2f_dim, g.total_v2f_dim)
    neighbors_of_var = {j: set(g.neighbors_of_var[j]) for j in g.var_ids}
    scope = {n: set(g.neighbors_of_factor[n]) for n in g.factor_ids}
    for (j, n) in g.v2f_edges:
        rs, rd = qs.offsets[(j, n)]
        for (z, k) in g.v2f_edges:
            cs, cd = qs.offsets[(z, k)]
            block = qs.q[rs:rs + rd, cs:cs + cd]
            on_pattern = (k in neighbors_of_var[j] and k != n
                          and z in scope[k] and z != j)
            if not on_pattern:
                assert np.all(block == 0.0)
    # the quartet loop makes Q genuinely non-nilpotent
    assert qs.rho > 0.1


def test_engine_one_step_equals_affine_map(quartet):
    # dual route: one synchronous engine iteration started at the fixed
    # point with arbitrary means must realize v' = -Q v + b exactly
    g = build_factor_graph(quartet)
    fp = information_fixed_point(quartet, g, tol=1e-14)
    qs = assemble_q(quartet, g, fp)

    rng = np.random.default_rng(7)
    x = rng.standard_normal(g.total_v2f_dim)

    # f2v means consistent with v2f means x at the frozen fixed point
    f2v_means = {}
    for (n, i) in g.f2v_edges:
        f = quartet.factor(n)
        core = f.noise_cov.copy()
        resid = f.obs.copy()
        for z in f.scope:
            if z == i:
                continue
            az = f.coeff[z]
            core = core + az @ np.linalg.solve(fp.v2f[(z, n)], az.T)
            start, dim = qs.offsets[(z, n)]
            resid = resid - az @ x[start:start + dim]
        ai = f.coeff[i]
        jmat = ai.T @ np.linalg.solve(core, ai)
        f2v_means[(n, i)] = np.linalg.solve(jmat, ai.T @ np.linalg.solve(core, resid))

    init = {e: Message(J=fp.f2v[e].copy(), v=f2v_means[e]) for e in g.f2v_edges}
    res = run_bp(quartet, g, init=init, options=BpOptions(max_iters=1))
    got = np.zeros(g.total_v2f_dim)
    for e, (start, dim) in qs.offsets.items():
        got[start:start + dim] = res.messages["v2f"][e].v

    expected = -qs.q @ x + qs.b
    np.testing.assert_allclose(got, expected, atol=1e-9)


def test_forest_q_is_nilpotent():
    m = random_model(seed=4, n_agents=8, topology="forest")
    g = build_factor_graph(m)
    fp = information_fixed_point(m, g)
    qs = assemble_q(m, g, fp)
    assert qs.rho < 1e-10
    power = np.linalg.matrix_power(qs.q, len(g.v2f_edges))
    assert np.max(np.abs(power)) < 1e-12


def test_spectral_radius_route_agreement(quartet):
    g = build_factor_graph(quartet)
    fp = information_fixed_point(quartet, g)
    qs = assemble_q(quartet, g, fp)
    # charpoly root-finding carries its own conditioning error, so the
    # agreement tolerance is looser than machine precision
    assert qs.rho == pytest.approx(charpoly_radius(qs.q), rel=1e-6)


def test_two_phase_converges_to_linear_solve(quartet):
    g = build_factor_graph(quartet)
    fp = information_fixed_point(quartet, g)
    qs = assemble_q(quartet, g, fp)
    mr = two_phase_mean_recursion(qs)
    assert mr.status == "converged"
    direct = np.linalg.solve(np.eye(qs.q.shape[0]) + qs.q, qs.b)
    np.testing.assert_allclose(mr.v, direct, atol=1e-8)

    beliefs = beliefs_from_v2f_means(quartet, g, fp, qs, mr.v)
    sol = centralized_solve(quartet)
    for v in sol.means:
        np.testing.assert_allclose(beliefs[v], sol.means[v], atol=1e-8)


def test_two_phase_diverges_above_radius_one():
    n, n_extra, gain, seed = SHOWCASE_DIVERGENT
    m = frustrated_model(seed, n=n, gain=gain, n_extra=n_extra)
    g = build_factor_graph(m)
    fp = information_fixed_point(m, g)
    qs = assemble_q(m, g, fp)
    assert qs.rho > 1.02
    mr = two_phase_mean_recursion(qs)
    assert mr.status == "diverged"


def test_decide_mean_convergence_branches():
    assert decide_mean_convergence(5.0, "forest") == "guaranteed_by_topology"
    assert decide_mean_convergence(5.0, "single_loop_plus_forest") == "guaranteed_by_topology"
    assert decide_mean_convergence(0.5, "multi_loop") == "converges_rho_lt_1"
    assert decide_mean_convergence(1.5, "multi_loop") == "diverges_rho_ge_1"
    assert decide_mean_convergence(0.9995, "multi_loop") == "borderline"
    assert decide_mean_convergence(1.0005, "multi_loop") == "borderline"
    # just outside the band the verdict is decided again
    assert decide_mean_convergence(1.0015, "multi_loop") == "diverges_rho_ge_1"
    assert decide_mean_convergence(0.9985, "multi_loop") == "converges_rho_lt_1"


def test_fit_contraction_rate_recovers_geometric_decay():
    d0, c = 0.8, 0.55
    seq = [d0 * c ** ell for ell in range(1, 12)]
    fit = fit_contraction_rate(seq)
    assert fit.c == pytest.approx(c, rel=1e-6)
    assert fit.n_points == len(seq)


def test_fit_contraction_rate_stops_at_floor_and_infs():
    seq = [0.5, 0.25, 0.125, 1e-15, 0.5]
    fit = fit_contraction_rate(seq)
    assert fit.n_points == 3
    with pytest.raises(DomainError):
        fit_contraction_rate([0.5, 0.25])
    with pytest.raises(DomainError):
        fit_contraction_rate([np.inf, 0.5, 0.25, 0.125])


def test_fit_contraction_rate_uses_decaying_suffix():
    # a flat transient before clean decay must not poison the fit
    seq = [0.5, 0.5, 0.5, 0.4, 0.2, 0.1, 0.05, 0.025]
    fit = fit_contraction_rate(seq)
    assert fit.c == pytest.approx(0.5, rel=0.1)
    assert fit.window[0] >= 3


def test_certify_full_report(quartet):
    rep = certify(quartet)
    assert rep.topology == "single_loop_plus_forest"
    assert rep.diameter == 4
    assert rep.bounds_hold
    assert rep.verdict == "guaranteed_by_topology"
    assert 0.0 < rep.rho_q < 1.0
    assert rep.mean_recursion_status == "converged"
    assert rep.bp_status == "converged"
    assert rep.max_mean_error < 1e-8
    assert rep.fitted_rate is not None and 0.0 < rep.fitted_rate < 1.0
    d = rep.to_dict()
    assert set(d) >= {"topology", "rho_q", "verdict", "bounds_hold",
                      "mean_recursion_status", "bp_status", "max_mean_error"}


def test_certify_without_cross_check(quartet):
    rep = certify(quartet, cross_check=False)
    assert rep.bp_status is None
    assert rep.verdict == "guaranteed_by_topology"


def test_certify_on_divergent_model():
    n, n_extra, gain, seed = SHOWCASE_DIVERGENT
    m = frustrated_model(seed, n=n, gain=gain, n_extra=n_extra)
    rep = certify(m)
    assert rep.verdict == "diverges_rho_ge_1"
    assert rep.mean_recursion_status == "diverged"
    assert rep.bp_status == "diverged"
