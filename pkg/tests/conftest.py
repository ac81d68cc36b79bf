"""Shared fixtures and independent oracles.

The oracles deliberately avoid the code paths they are used to check:
the part metric is re-derived by bisection on definiteness tests, the
spectral radius from characteristic polynomial roots, and constrained
posteriors from a null-space parameterization.
"""

import numpy as np
import pytest

from gabp.model import FactorSpec, LinearGaussianModel, VariableSpec


def rand_spd(rng, n, scale=1.0):
    g = rng.standard_normal((n, n))
    return scale * (g @ g.T / (n + 2) + 0.5 * np.eye(n))


def part_metric_bisection(x, y, tol=1e-12):
    """Part metric via bisection: the smallest t with t*X - Y psd is
    lambda_max(X^-1 Y), found here with eigenvalue sign tests only."""

    def psd(a):
        return np.linalg.eigvalsh(a)[0] >= -1e-13 * max(1.0, abs(np.linalg.eigvalsh(a)[-1]))

    def lam_max(a, b):
        lo, hi = 0.0, 1.0
        while not psd(hi * a - b):
            hi *= 2.0
            if hi > 1e18:
                raise ValueError("bisection exploded")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if psd(mid * a - b):
                hi = mid
            else:
                lo = mid
            if hi - lo < tol * max(1.0, hi):
                break
        return hi

    return max(np.log(max(lam_max(x, y), 1e-300)),
               np.log(max(lam_max(y, x), 1e-300)), 0.0)


def charpoly_radius(a):
    """Spectral radius from the roots of the characteristic polynomial,
    with coefficients from the Faddeev-LeVerrier recurrence."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    coeffs = [1.0]
    m = np.zeros_like(a)
    for k in range(1, n + 1):
        m = a @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(a @ m) / k)
    return float(np.max(np.abs(np.roots(coeffs)))) if n else 0.0


def constrained_posterior(model, constraint_coeff, constraint_obs):
    """Posterior mean of a model subject to an exact linear constraint,
    via null-space parameterization. constraint_coeff maps variable id
    to its coefficient block; rows are the constraint equations.

    Returns a dict of posterior means per variable id.
    """
    from scipy.linalg import null_space

    from gabp.model import stack_global, variable_offsets

    a, r, w, y = stack_global(model)
    offsets = variable_offsets(model)
    total = sum(v.dim for v in model.variables)
    rows = constraint_obs.shape[0]
    c = np.zeros((rows, total))
    for vid, block in constraint_coeff.items():
        start, dim = offsets[vid]
        c[:, start:start + dim] = block
    x_p = np.linalg.lstsq(c, constraint_obs, rcond=None)[0]
    nsp = null_space(c)
    # prior + likelihood restricted to the affine subspace x = x_p + N z
    prec = np.linalg.inv(w) + a.T @ np.linalg.solve(r, a)
    info = a.T @ np.linalg.solve(r, y)
    prec_z = nsp.T @ prec @ nsp
    info_z = nsp.T @ (info - prec @ x_p)
    z = np.linalg.solve(prec_z, info_z)
    x = x_p + nsp @ z
    return {v.id: x[offsets[v.id][0]:offsets[v.id][0] + v.dim] for v in model.variables}


@pytest.fixture
def two_agent_unit_chain():
    """Two scalar agents, identity priors, two symmetric pair factors.

    The information recursion has the closed-form fixed point
    j* = (sqrt(5) - 1) / 2 on every factor-to-variable edge.
    """
    return LinearGaussianModel(
        variables=[VariableSpec(1, 1, np.eye(1)), VariableSpec(2, 1, np.eye(1))],
        factors=[
            FactorSpec(1, (1, 2), {1: np.eye(1), 2: np.eye(1)}, np.eye(1), np.array([1.0])),
            FactorSpec(2, (1, 2), {1: np.eye(1), 2: np.eye(1)}, np.eye(1), np.array([-1.0])),
        ],
    )


GOLDEN_EDGE_PRECISION = 0.6180339887498949


QUARTET_A = np.array([
    [2 / np.sqrt(6), 0.0, 1 / np.sqrt(2), 1 / np.sqrt(3)],
    [1 / np.sqrt(6), 1 / np.sqrt(3), 0.0, 0.0],
    [0.0, 1 / np.sqrt(3), 0.0, 1 / np.sqrt(3)],
])
QUARTET_PRIOR = np.array([6.0, 3.0, 2.0, 3.0])
QUARTET_J = np.array([
    [1.0, 1 / (3 * np.sqrt(2)), 1 / np.sqrt(3), np.sqrt(2) / 3],
    [1 / (3 * np.sqrt(2)), 1.0, 0.0, 1 / 3],
    [1 / np.sqrt(3), 0.0, 1.0, 1 / np.sqrt(6)],
    [np.sqrt(2) / 3, 1 / 3, 1 / np.sqrt(6), 1.0],
])
# Spectrum of I - |R| for the quartet, to four decimals; the negative
# eigenvalue is the point of the example: the field fails the
# walk-summability test yet the decomposed model still converges.
QUARTET_ABS_SPECTRUM = np.array([-0.0754, 0.9712, 1.4780, 1.6262])


def quartet_model(obs=(1.0, 1.0, 1.0)):
    """Four scalar agents, three single-row factors, one loop.

    Joint precision is QUARTET_J by construction: the prior precisions
    1/6, 1/3, 1/2, 1/3 plus A^T A restore the unit diagonal.
    """
    y = np.asarray(obs, dtype=float)
    variables = [
        VariableSpec(i + 1, 1, np.array([[QUARTET_PRIOR[i]]])) for i in range(4)
    ]
    factors = []
    for r in range(3):
        scope = tuple(c + 1 for c in range(4) if QUARTET_A[r, c] != 0.0)
        coeff = {c: np.array([[QUARTET_A[r, c - 1]]]) for c in scope}
        factors.append(FactorSpec(r + 1, scope, coeff, np.eye(1), np.array([y[r]])))
    return LinearGaussianModel(variables=variables, factors=factors)


@pytest.fixture
def quartet():
    return quartet_model()
