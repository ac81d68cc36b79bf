"""Bridge from scalar Gaussian Markov random fields to observation models.

A pairwise MRF is given in information form N(mu, Sigma) with J = Sigma^-1
and potential h = J mu. After normalizing J to unit diagonal, the field
is walk-summable iff I - |R| is positive definite, where R = I - J holds
the partial correlations. For walk-summable fields, J - omega*I (with
0 < omega < min(1, lambda_min(I - |R|))) is an H-matrix and therefore
splits as V V^T with at most two nonzeros per column of V; each pair
column becomes a scalar observation factor y = 0 with unit noise, and the
prior N(h_n / omega, 1 / omega) is encoded exactly by splitting its
precision between the model prior and a scalar mean-carrying row.
"""

import logging
from dataclasses import dataclass

import numpy as np

from gabp.errors import DomainError
from gabp.model import FactorSpec, LinearGaussianModel, VariableSpec
from gabp.numerics import is_pd, min_eig, symmetrize

log = logging.getLogger("gabp")

# Off-diagonal entries at or below this magnitude count as structural zeros.
COUPLING_TOL = 1e-15
# Diagonal surplus below this is dropped instead of emitting a column.
SURPLUS_TOL = 1e-14

POWER_TOL = 1e-12
POWER_MAX_STEPS = 10_000


def normalize_mrf(j, h=None):
    """Rescale to unit diagonal: J' = D J D, h' = D h, D = diag(J)^(-1/2).

    Returns (J', h', d) where d is the vector of diagonal scale factors.
    J'^-1 h' = D^-1 J^-1 h, so original means are d * normalized means.
    """
    j = symmetrize(j)
    diag = np.diag(j)
    if np.any(diag <= 0):
        raise DomainError("normalization needs a strictly positive diagonal")
    d = 1.0 / np.sqrt(diag)
    j_norm = j * np.outer(d, d)
    np.fill_diagonal(j_norm, 1.0)
    h_norm = None if h is None else d * np.asarray(h, dtype=float)
    return j_norm, h_norm, d


def _require_normalized(j):
    j = symmetrize(j)
    if np.max(np.abs(np.diag(j) - 1.0)) > 1e-9:
        raise DomainError("expected a normalized (unit diagonal) matrix")
    return j


@dataclass
class WalkSummability:
    walk_summable: bool
    min_eig: float
    eigenvalues: np.ndarray


def check_walk_summability(j_norm):
    """Spectral test on I - |R| for a normalized information matrix."""
    j_norm = _require_normalized(j_norm)
    r = np.eye(j_norm.shape[0]) - j_norm
    test = np.eye(j_norm.shape[0]) - np.abs(r)
    w = np.linalg.eigvalsh(test)
    return WalkSummability(walk_summable=is_pd(test), min_eig=float(w[0]), eigenvalues=w)


def comparison_matrix(x):
    """Absolute diagonal, negated absolute off-diagonal."""
    x = symmetrize(x)
    c = -np.abs(x)
    np.fill_diagonal(c, np.abs(np.diag(x)))
    return c


def is_h_matrix(x):
    """True when the comparison matrix of x is positive definite.

    For symmetric x this matches the eigenvalues-in-the-right-half-plane
    definition, since the comparison matrix is symmetric too.
    """
    return is_pd(comparison_matrix(x))


def _components(adjacency):
    n = adjacency.shape[0]
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack = [s]
        seen[s] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in np.nonzero(adjacency[u])[0]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        comps.append(sorted(comp))
    return comps


def _perron_vector(n_abs):
    """Positive Perron vector of a nonnegative symmetric matrix.

    Power iteration on n_abs + shift*I per connected component; the shift
    makes the dominant eigenvalue simple-signed so the iteration cannot
    oscillate between +/- the Perron root.
    """
    n = n_abs.shape[0]
    u = np.ones(n)
    structure = n_abs > 0
    for comp in _components(structure):
        idx = np.array(comp)
        sub = n_abs[np.ix_(idx, idx)]
        if len(comp) == 1 or np.max(sub) == 0:
            continue
        shift = 1.0 + float(np.max(sub.sum(axis=1)))
        x = np.full(len(comp), 1.0 / np.sqrt(len(comp)))
        for _ in range(POWER_MAX_STEPS):
            y = sub @ x + shift * x
            y /= np.linalg.norm(y)
            if np.max(np.abs(y - x)) < POWER_TOL:
                x = y
                break
            x = y
        u[idx] = np.abs(x)
    return u


@dataclass
class FactorWidth2:
    """Width-two factorization J - omega*I = V V^T (up to dropped surplus).

    Columns of v come in two flavors: pair columns with exactly two
    nonzeros, one per off-diagonal coupling, and surplus columns with a
    single nonzero absorbing what strict diagonal dominance left over.
    """

    v: np.ndarray
    omega: float
    scaling: np.ndarray
    pair_columns: int
    single_columns: int

    @property
    def columns(self):
        return self.v.shape[1]


def default_omega(lam_min):
    return 0.5 * min(1.0, lam_min)


def factor_width_two(j_norm, omega=None):
    """Split a walk-summable normalized J as omega*I + V V^T.

    Raises DomainError when the field is not walk-summable or omega sits
    outside (0, min(1, lambda_min(I - |R|))). The construction scales the
    comparison matrix into strict diagonal dominance with a Perron
    vector, splits every coupling into a psd 2x2 block, and unscales.
    """
    j_norm = _require_normalized(j_norm)
    ws = check_walk_summability(j_norm)
    if not ws.walk_summable:
        raise DomainError(
            f"not walk-summable: min eigenvalue of I - |R| is {ws.min_eig:.6g}"
        )
    limit = min(1.0, ws.min_eig)
    if omega is None:
        omega = default_omega(ws.min_eig)
    if not (0.0 < omega < limit):
        raise DomainError(f"omega must lie in (0, {limit:.6g}), got {omega:g}")

    n = j_norm.shape[0]
    m = j_norm - omega * np.eye(n)
    n_abs = np.abs(m)
    np.fill_diagonal(n_abs, 0.0)
    n_abs[n_abs <= COUPLING_TOL] = 0.0

    u = _perron_vector(n_abs)
    m_scaled = m * np.outer(u, u)

    columns = []
    pair_count = 0
    for i in range(n):
        for k in range(i + 1, n):
            if n_abs[i, k] == 0.0:
                continue
            val = m_scaled[i, k]
            mag = np.sqrt(abs(val))
            col = np.zeros(n)
            col[i] = mag
            col[k] = np.sign(val) * mag
            columns.append(col)
            pair_count += 1
    single_count = 0
    for i in range(n):
        surplus = m_scaled[i, i] - np.sum(np.abs(m_scaled[i])) + abs(m_scaled[i, i])
        if surplus < 0:
            raise AssertionError(
                f"scaled comparison matrix lost diagonal dominance in row {i}: {surplus:.3e}"
            )
        if surplus > SURPLUS_TOL:
            col = np.zeros(n)
            col[i] = np.sqrt(surplus)
            columns.append(col)
            single_count += 1

    v_scaled = np.column_stack(columns) if columns else np.zeros((n, 0))
    v = v_scaled / u[:, None]
    log.debug("factor width 2: %d pair + %d surplus columns, omega=%g",
              pair_count, single_count, omega)
    return FactorWidth2(v=v, omega=float(omega), scaling=u,
                        pair_columns=pair_count, single_columns=single_count)


@dataclass
class ConversionInfo:
    omega: float
    columns: int
    pair_columns: int
    folded_columns: int
    factorization: FactorWidth2


def mrf_to_linear_gaussian(j_norm, h=None, omega=None):
    """Convert a normalized walk-summable MRF into an observation model.

    Every pair column of the factorization becomes a scalar factor with
    observation 0 and unit noise. Single-nonzero columns fold into the
    prior precision. The converted prior N(h_n/omega, 1/omega) is encoded
    exactly: half its precision goes to the model prior (covariance
    2/omega, zero mean) and half to a scalar mean-carrying factor with
    noise 2/omega and observation 2 h_n / omega, which together
    contribute precision omega and information h_n. The joint density of
    the returned model therefore has precision exactly J and potential
    exactly h.
    """
    j_norm = _require_normalized(j_norm)
    n = j_norm.shape[0]
    h = np.zeros(n) if h is None else np.asarray(h, dtype=float)
    if h.shape != (n,):
        raise DomainError(f"potential vector has shape {h.shape}, expected ({n},)")
    fw = factor_width_two(j_norm, omega=omega)
    omega = fw.omega

    prior_prec = np.full(n, omega / 2.0)
    pair_cols = []
    for c in range(fw.v.shape[1]):
        col = fw.v[:, c]
        support = np.nonzero(col)[0]
        if len(support) == 1:
            prior_prec[support[0]] += col[support[0]] ** 2
        elif len(support) == 2:
            pair_cols.append((int(support[0]), int(support[1]), col[support[0]], col[support[1]]))
        else:
            raise AssertionError(f"column {c} has {len(support)} nonzeros")

    variables = [
        VariableSpec(id=i + 1, dim=1, prior_cov=np.array([[1.0 / prior_prec[i]]]))
        for i in range(n)
    ]
    factors = []
    fid = 0
    for (i, k, a, b) in pair_cols:
        fid += 1
        factors.append(
            FactorSpec(
                id=fid,
                scope=(i + 1, k + 1),
                coeff={i + 1: np.array([[a]]), k + 1: np.array([[b]])},
                noise_cov=np.array([[1.0]]),
                obs=np.array([0.0]),
            )
        )
    for i in range(n):
        fid += 1
        factors.append(
            FactorSpec(
                id=fid,
                scope=(i + 1,),
                coeff={i + 1: np.array([[1.0]])},
                noise_cov=np.array([[2.0 / omega]]),
                obs=np.array([2.0 * h[i] / omega]),
            )
        )

    info = ConversionInfo(
        omega=omega,
        columns=fw.columns,
        pair_columns=fw.pair_columns,
        folded_columns=fw.single_columns,
        factorization=fw,
    )
    meta = {"source": "mrf", "omega": omega, "columns": fw.columns}
    model = LinearGaussianModel(variables=variables, factors=factors, meta=meta)
    return model, info


def mrf_marginals(j, h):
    """Exact marginal means and variances by one dense solve."""
    j = symmetrize(j)
    if not is_pd(j):
        raise DomainError("information matrix must be positive definite")
    h = np.asarray(h, dtype=float)
    means = np.linalg.solve(j, h)
    variances = np.diag(np.linalg.inv(j)).copy()
    return means, variances
