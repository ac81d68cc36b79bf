import numpy as np
import pytest

from conftest import QUARTET_ABS_SPECTRUM, QUARTET_J
from corpus import random_walk_summable
from gabp.errors import DomainError
from gabp.graph import build_factor_graph
from gabp.model import centralized_solve, stack_global, validate_model
from gabp.mrf import (check_walk_summability, comparison_matrix, default_omega,
                      factor_width_two, is_h_matrix, mrf_marginals,
                      mrf_to_linear_gaussian, normalize_mrf)


def test_normalize_mrf():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((4, 4))
    j = g @ g.T + 4 * np.eye(4)
    h = rng.standard_normal(4)
    j_norm, h_norm, d = normalize_mrf(j, h)
    np.testing.assert_allclose(np.diag(j_norm), np.ones(4), atol=1e-14)
    np.testing.assert_allclose(j_norm, np.outer(d, d) * j, atol=1e-14)
    np.testing.assert_allclose(h_norm, d * h, atol=1e-14)
    # means transform by the scale vector
    np.testing.assert_allclose(d * np.linalg.solve(j_norm, h_norm),
                               np.linalg.solve(j, h), atol=1e-10)


def test_normalize_rejects_nonpositive_diagonal():
    with pytest.raises(DomainError):
        normalize_mrf(np.diag([1.0, -2.0]))


def test_quartet_field_fails_walk_summability():
    ws = check_walk_summability(QUARTET_J)
    assert not ws.walk_summable
    np.testing.assert_allclose(ws.eigenvalues, QUARTET_ABS_SPECTRUM, atol=5e-4)
    assert ws.min_eig == pytest.approx(QUARTET_ABS_SPECTRUM[0], abs=5e-4)


def test_walk_summable_case():
    j, _ = random_walk_summable(1)
    ws = check_walk_summability(j)
    assert ws.walk_summable
    assert ws.min_eig == pytest.approx(0.3, abs=1e-10)


def test_check_requires_unit_diagonal():
    with pytest.raises(DomainError):
        check_walk_summability(np.diag([2.0, 2.0]))


def test_comparison_matrix_and_h_matrix():
    x = np.array([[2.0, -1.0], [-1.0, 2.0]])
    np.testing.assert_array_equal(comparison_matrix(x),
                                  np.array([[2.0, -1.0], [-1.0, 2.0]]))
    assert is_h_matrix(x)
    # diagonally weak matrix is not an H-matrix
    y = np.array([[1.0, 2.0], [2.0, 1.0]])
    assert not is_h_matrix(y)


def test_default_omega_is_half_the_margin():
    assert default_omega(0.4) == pytest.approx(0.2)
    assert default_omega(3.0) == pytest.approx(0.5)


def test_factor_width_two_reconstructs():
    for seed in range(5):
        j, _ = random_walk_summable(seed)
        fw = factor_width_two(j)
        rec = fw.omega * np.eye(j.shape[0]) + fw.v @ fw.v.T
        assert np.max(np.abs(rec - j)) < 1e-12
        for c in range(fw.v.shape[1]):
            assert np.count_nonzero(fw.v[:, c]) <= 2
        assert np.all(fw.scaling > 0)
        assert is_h_matrix(j - fw.omega * np.eye(j.shape[0]))


def test_factor_width_two_rejects_non_walk_summable():
    with pytest.raises(DomainError):
        factor_width_two(QUARTET_J)


def test_factor_width_two_validates_omega():
    j, _ = random_walk_summable(2)
    margin = check_walk_summability(j).min_eig
    factor_width_two(j, omega=margin * 0.9)
    with pytest.raises(DomainError):
        factor_width_two(j, omega=margin * 1.1)
    with pytest.raises(DomainError):
        factor_width_two(j, omega=0.0)


def test_factor_width_two_lone_variable():
    j = np.array([[1.0]])
    fw = factor_width_two(j, omega=0.25)
    rec = fw.omega * np.eye(1) + fw.v @ fw.v.T
    assert rec[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert fw.pair_columns == 0
    assert fw.single_columns == 1


def test_conversion_joint_precision_is_exact():
    for seed in range(4):
        j, h = random_walk_summable(seed)
        model, info = mrf_to_linear_gaussian(j, h)
        assert validate_model(model) == []
        a, r, w, _ = stack_global(model)
        prec = np.linalg.inv(w) + a.T @ np.linalg.solve(r, a)
        assert np.max(np.abs(prec - j)) < 1e-12
        assert model.meta["omega"] == pytest.approx(info.omega)
        assert model.meta["columns"] == info.columns
        assert info.pair_columns + info.folded_columns == info.columns


def test_conversion_scope_structure():
    j, h = random_walk_summable(3)
    model, info = mrf_to_linear_gaussian(j, h)
    pair = [f for f in model.factors if len(f.scope) == 2]
    carrier = [f for f in model.factors if len(f.scope) == 1]
    assert len(pair) == info.pair_columns
    assert len(carrier) == j.shape[0]
    for f in carrier:
        assert f.noise_cov[0, 0] == pytest.approx(2.0 / info.omega)
        assert f.coeff[f.scope[0]][0, 0] == 1.0
    for f in pair:
        assert f.noise_cov[0, 0] == 1.0
        assert f.obs[0] == 0.0


def test_conversion_means_match_direct_solve():
    j, h = random_walk_summable(4)
    model, _ = mrf_to_linear_gaussian(j, h)
    sol = centralized_solve(model)
    means, variances = mrf_marginals(j, h)
    for i in range(j.shape[0]):
        assert sol.means[i + 1][0] == pytest.approx(means[i], abs=1e-10)
        # exact marginal variances too: the conversion is lossless
        assert sol.covs[i + 1][0, 0] == pytest.approx(variances[i], abs=1e-10)


def test_conversion_rejects_bad_potential_length():
    j, _ = random_walk_summable(5)
    with pytest.raises(DomainError):
        mrf_to_linear_gaussian(j, np.zeros(3))


def test_mrf_marginals_against_inverse():
    j, h = random_walk_summable(6)
    means, variances = mrf_marginals(j, h)
    inv = np.linalg.inv(j)
    np.testing.assert_allclose(means, inv @ h, atol=1e-10)
    np.testing.assert_allclose(variances, np.diag(inv), atol=1e-12)
    with pytest.raises(DomainError):
        mrf_marginals(np.diag([1.0, -1.0]), np.zeros(2))


def test_converted_model_graph_is_loopy_but_convergent():
    import gabp
    j, h = random_walk_summable(7)
    model, _ = mrf_to_linear_gaussian(j, h)
    g = build_factor_graph(model)
    fp = gabp.information_fixed_point(model, g)
    qs = gabp.assemble_q(model, g, fp)
    assert qs.rho < 1.0
    res = gabp.run_bp(model, g)
    assert res.status == "converged"
    means, _ = mrf_marginals(j, h)
    for i in range(j.shape[0]):
        assert res.beliefs[i + 1].mean[0] == pytest.approx(means[i], abs=1e-8)
