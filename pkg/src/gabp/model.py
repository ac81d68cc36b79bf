"""Distributed linear Gaussian observation models.

A model is a collection of variables x_i ~ N(0, W_i) and observation
factors

    y_n = sum_{i in scope(n)} A_{n,i} x_i + z_n,      z_n ~ N(0, R_n),

with every coefficient block full column rank and every noise covariance
positive definite. Factor ids and variable ids live in separate
namespaces; a factor's scope is any nonempty set of variable ids, so the
same schema covers the symmetric one-factor-per-agent layout, tree
structured models, and the pairwise models produced by the MRF bridge.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from gabp.errors import DomainError
from gabp.numerics import has_full_column_rank, is_pd, symmetrize

log = logging.getLogger("gabp")

# Entries this small (relative to the block) are treated as structural zeros
# when elimination rewrites coefficient blocks.
ZERO_BLOCK_TOL = 1e-14


@dataclass
class VariableSpec:
    """One latent vector variable with a zero-mean Gaussian prior."""

    id: int
    dim: int
    prior_cov: np.ndarray

    def __post_init__(self):
        self.prior_cov = np.atleast_2d(np.asarray(self.prior_cov, dtype=float))


@dataclass
class FactorSpec:
    """One vector observation tying together the variables in its scope.

    coeff maps each variable id in the scope to its (obs_dim x var_dim)
    coefficient block. The scope is kept sorted ascending; stacked
    quantities built from a factor always follow that order.
    """

    id: int
    scope: tuple
    coeff: dict
    noise_cov: np.ndarray
    obs: np.ndarray

    def __post_init__(self):
        self.scope = tuple(sorted(set(int(i) for i in self.scope)))
        self.coeff = {int(i): np.atleast_2d(np.asarray(a, dtype=float)) for i, a in self.coeff.items()}
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        self.obs = np.atleast_1d(np.asarray(self.obs, dtype=float))

    @property
    def obs_dim(self):
        return self.obs.shape[0]


@dataclass
class LinearGaussianModel:
    """Variables plus factors, each list kept sorted ascending by id."""

    variables: list
    factors: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.variables = sorted(self.variables, key=lambda v: v.id)
        self.factors = sorted(self.factors, key=lambda f: f.id)
        self._var_by_id = {v.id: v for v in self.variables}
        self._factor_by_id = {f.id: f for f in self.factors}

    def variable(self, vid):
        return self._var_by_id[vid]

    def factor(self, fid):
        return self._factor_by_id[fid]

    @property
    def total_dim(self):
        return sum(v.dim for v in self.variables)

    @property
    def total_obs_dim(self):
        return sum(f.obs_dim for f in self.factors)


def validate_model(model):
    """Check every model assumption and return the list of violations.

    An empty list means the model is admissible: unique ids, consistent
    shapes, symmetric positive definite priors and noise covariances, and
    full column rank for every coefficient block. The report strings are
    meant to be readable as-is in CLI output.
    """
    problems = []
    seen = set()
    for v in model.variables:
        if v.id in seen:
            problems.append(f"duplicate variable id {v.id}")
            continue
        seen.add(v.id)
        if v.dim < 1:
            problems.append(f"variable {v.id}: dim must be >= 1, got {v.dim}")
            continue
        if v.prior_cov.shape != (v.dim, v.dim):
            problems.append(
                f"variable {v.id}: prior_cov shape {v.prior_cov.shape} != ({v.dim}, {v.dim})"
            )
            continue
        try:
            w = symmetrize(v.prior_cov)
        except ValueError:
            problems.append(f"variable {v.id}: prior_cov is not symmetric")
            continue
        if not is_pd(w):
            problems.append(f"variable {v.id}: prior_cov is not positive definite")

    seen_f = set()
    for f in model.factors:
        if f.id in seen_f:
            problems.append(f"duplicate factor id {f.id}")
            continue
        seen_f.add(f.id)
        if not f.scope:
            problems.append(f"factor {f.id}: empty scope")
            continue
        missing = [i for i in f.scope if i not in model._var_by_id]
        if missing:
            problems.append(f"factor {f.id}: scope references unknown variables {missing}")
            continue
        if set(f.coeff) != set(f.scope):
            problems.append(
                f"factor {f.id}: coefficient keys {sorted(f.coeff)} do not match scope {list(f.scope)}"
            )
            continue
        m = f.obs_dim
        ok_shapes = True
        for i in f.scope:
            ni = model.variable(i).dim
            if f.coeff[i].shape != (m, ni):
                problems.append(
                    f"factor {f.id}: coeff[{i}] shape {f.coeff[i].shape} != ({m}, {ni})"
                )
                ok_shapes = False
        if not ok_shapes:
            continue
        if f.noise_cov.shape != (m, m):
            problems.append(
                f"factor {f.id}: noise_cov shape {f.noise_cov.shape} != ({m}, {m})"
            )
            continue
        try:
            r = symmetrize(f.noise_cov)
        except ValueError:
            problems.append(f"factor {f.id}: noise_cov is not symmetric")
            continue
        if not is_pd(r):
            problems.append(f"factor {f.id}: noise_cov is not positive definite")
        for i in f.scope:
            if not has_full_column_rank(f.coeff[i]):
                problems.append(f"factor {f.id}: coeff[{i}] does not have full column rank")
    return problems


def require_valid(model):
    """Raise DomainError with the full report when the model is inadmissible."""
    problems = validate_model(model)
    if problems:
        raise DomainError("model validation failed:\n  " + "\n  ".join(problems))


def variable_offsets(model):
    """Map variable id -> (start, dim) in the globally stacked state vector."""
    offsets = {}
    pos = 0
    for v in model.variables:
        offsets[v.id] = (pos, v.dim)
        pos += v.dim
    return offsets


def factor_offsets(model):
    """Map factor id -> (start, obs_dim) in the globally stacked observation."""
    offsets = {}
    pos = 0
    for f in model.factors:
        offsets[f.id] = (pos, f.obs_dim)
        pos += f.obs_dim
    return offsets


def stack_global(model):
    """Stack the model into global (A, R, W, y) in ascending-id order.

    Rows follow ascending factor id, columns ascending variable id. R and
    W come back block diagonal; absent coefficient blocks are zero.
    """
    voff = variable_offsets(model)
    foff = factor_offsets(model)
    n = model.total_dim
    m = model.total_obs_dim
    a = np.zeros((m, n))
    r = np.zeros((m, m))
    w = np.zeros((n, n))
    y = np.zeros(m)
    for v in model.variables:
        s, d = voff[v.id]
        w[s:s + d, s:s + d] = v.prior_cov
    for f in model.factors:
        rs, rm = foff[f.id]
        r[rs:rs + rm, rs:rs + rm] = f.noise_cov
        y[rs:rs + rm] = f.obs
        for i in f.scope:
            cs, cd = voff[i]
            a[rs:rs + rm, cs:cs + cd] = f.coeff[i]
    return a, r, w, y


@dataclass
class CentralizedSolution:
    """Joint MMSE estimate with its covariance, plus per-variable views."""

    mean: np.ndarray
    cov: np.ndarray
    means: dict
    covs: dict


def centralized_solve(model):
    """Joint MMSE estimate x_hat = (W^-1 + A^T R^-1 A)^-1 A^T R^-1 y.

    This is the exact answer message passing is expected to reproduce; it
    is computed by one dense solve on the stacked model.
    """
    a, r, w, y = stack_global(model)
    n = model.total_dim
    w_inv = np.zeros_like(w)
    voff = variable_offsets(model)
    for v in model.variables:
        s, d = voff[v.id]
        w_inv[s:s + d, s:s + d] = np.linalg.inv(v.prior_cov)
    rinv_a = np.linalg.solve(r, a) if a.shape[0] else a
    precision = w_inv + a.T @ rinv_a
    cov = np.linalg.inv(precision)
    mean = cov @ (rinv_a.T @ y) if a.shape[0] else np.zeros(n)
    means = {}
    covs = {}
    for v in model.variables:
        s, d = voff[v.id]
        means[v.id] = mean[s:s + d]
        covs[v.id] = cov[s:s + d, s:s + d]
    return CentralizedSolution(mean=mean, cov=cov, means=means, covs=covs)


def _is_zero_block(a, scale):
    return np.max(np.abs(a)) <= ZERO_BLOCK_TOL * max(1.0, scale) if a.size else True


def eliminate_noiseless_factor(model, factor_id, variable_id=None):
    """Remove a noiseless factor by substituting the variable it pins down.

    The factor must declare an exactly zero noise covariance and carry a
    square invertible coefficient block for ``variable_id`` (defaults to
    the factor's own id). The deterministic relation

        x_j = A_jj^-1 (y_n - sum_{i != j} A_{n,i} x_i)

    is substituted into every other factor containing x_j, and the prior
    of x_j turns into a new observation factor over the remaining scope
    with noise covariance W_j. Returns a new model without x_j.
    """
    f0 = model.factor(factor_id)
    j = factor_id if variable_id is None else variable_id
    if j not in f0.scope:
        raise DomainError(f"factor {factor_id} scope {f0.scope} does not contain variable {j}")
    if np.max(np.abs(f0.noise_cov)) > ZERO_BLOCK_TOL:
        raise DomainError(f"factor {factor_id} is not noiseless (max |R| = {np.max(np.abs(f0.noise_cov)):.3e})")
    var_j = model.variable(j)
    a_jj = f0.coeff[j]
    if a_jj.shape[0] != a_jj.shape[1]:
        raise DomainError(
            f"coefficient block ({factor_id}, {j}) must be square to eliminate, got {a_jj.shape}"
        )
    if not has_full_column_rank(a_jj):
        raise DomainError(f"coefficient block ({factor_id}, {j}) is singular")

    a_jj_inv = np.linalg.inv(a_jj)
    others = [i for i in f0.scope if i != j]

    new_factors = []
    for f in model.factors:
        if f.id == factor_id:
            continue
        if j not in f.scope:
            new_factors.append(f)
            continue
        t = f.coeff[j] @ a_jj_inv
        coeff = {i: f.coeff[i].copy() for i in f.scope if i != j}
        for i in others:
            block = coeff.get(i, np.zeros((f.obs_dim, model.variable(i).dim)))
            coeff[i] = block - t @ f0.coeff[i]
        scale = max((np.max(np.abs(b)) for b in coeff.values()), default=1.0)
        coeff = {i: b for i, b in coeff.items() if not _is_zero_block(b, scale)}
        if not coeff:
            log.debug("eliminate: factor %s reduced to a constant, dropped", f.id)
            continue
        new_factors.append(
            FactorSpec(
                id=f.id,
                scope=tuple(coeff),
                coeff=coeff,
                noise_cov=f.noise_cov,
                obs=f.obs - t @ f0.obs,
            )
        )

    # The prior of x_j survives as a likelihood over the variables that
    # used to share the noiseless factor with it.
    if others:
        prior_coeff = {i: a_jj_inv @ f0.coeff[i] for i in others}
        new_factors.append(
            FactorSpec(
                id=factor_id,
                scope=tuple(others),
                coeff=prior_coeff,
                noise_cov=var_j.prior_cov,
                obs=a_jj_inv @ f0.obs,
            )
        )

    new_vars = [v for v in model.variables if v.id != j]
    return LinearGaussianModel(variables=new_vars, factors=new_factors, meta=dict(model.meta))


def _random_spd(rng, n, scale=1.0):
    g = rng.standard_normal((n, n + 2))
    return scale * (g @ g.T / (n + 2) + 0.5 * np.eye(n))


def random_model(seed, n_agents, dims=(1, 3), topology="multi_loop",
                 coeff_scale=1.0, noise_scale=1.0):
    """Deterministic random model whose factor graph has the requested shape.

    topology is one of "forest", "single_loop_plus_forest", "multi_loop".
    dims is a fixed int or an inclusive (lo, hi) range for per-variable
    dimensions. The generated model always passes validate_model and its
    factor graph always classifies as requested (the generator raises if
    the request is infeasible, e.g. a loop with a single agent).
    """
    rng = np.random.default_rng(seed)
    if isinstance(dims, int):
        lo, hi = dims, dims
    else:
        lo, hi = dims
    if topology == "single_loop":
        topology = "single_loop_plus_forest"
    if n_agents < 1:
        raise DomainError("need at least one agent")
    if topology in ("single_loop_plus_forest", "multi_loop") and n_agents < 2:
        raise DomainError(f"topology {topology} needs at least two agents")
    if topology not in ("forest", "single_loop_plus_forest", "multi_loop"):
        raise DomainError(f"unknown topology {topology!r}")

    var_ids = list(range(1, n_agents + 1))
    var_dims = {i: int(rng.integers(lo, hi + 1)) for i in var_ids}

    # Grow a spanning forest of factor scopes with a union-find, so the
    # bipartite factor graph stays acyclic; loops are closed afterwards by
    # extra factors inside the single component.
    parent = {i: i for i in var_ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    scopes = []
    roots = set(var_ids)
    while len(roots) > 1:
        arity = int(min(rng.integers(2, 4), len(roots)))
        picked_roots = rng.choice(sorted(roots), size=arity, replace=False)
        members = []
        for root in picked_roots:
            pool = [i for i in var_ids if find(i) == root]
            members.append(int(rng.choice(pool)))
        scopes.append(tuple(sorted(members)))
        base = find(members[0])
        for i in members[1:]:
            parent[find(i)] = base
        roots = {find(i) for i in var_ids}

    for i in var_ids:
        if rng.random() < 0.3 or not scopes:
            scopes.append((i,))

    if topology == "single_loop_plus_forest":
        extra = 1
    elif topology == "multi_loop":
        extra = int(rng.integers(2, 5))
    else:
        extra = 0
    for _ in range(extra):
        # An arity-3 factor closes two cycles at once, so a single-loop
        # request must stick to pairs.
        if topology == "single_loop_plus_forest" or n_agents < 3:
            arity = 2
        else:
            arity = int(rng.integers(2, 4))
        members = rng.choice(var_ids, size=arity, replace=False)
        scopes.append(tuple(sorted(int(i) for i in members)))

    variables = [
        VariableSpec(id=i, dim=var_dims[i], prior_cov=_random_spd(rng, var_dims[i]))
        for i in var_ids
    ]
    factors = []
    for k, scope in enumerate(scopes, start=1):
        m = max(var_dims[i] for i in scope) + int(rng.integers(0, 2))
        coeff = {i: coeff_scale * rng.standard_normal((m, var_dims[i])) for i in scope}
        factors.append(
            FactorSpec(
                id=k,
                scope=scope,
                coeff=coeff,
                noise_cov=_random_spd(rng, m, scale=noise_scale),
                obs=rng.standard_normal(m),
            )
        )

    model = LinearGaussianModel(variables=variables, factors=factors)
    require_valid(model)

    from gabp.graph import build_factor_graph, classify_topology

    got = classify_topology(build_factor_graph(model)).overall
    if got != topology:
        raise DomainError(
            f"generator produced topology {got!r} instead of {topology!r} (seed {seed})"
        )
    return model
