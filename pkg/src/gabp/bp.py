"""The message-passing engine.

Messages are Gaussians in information form: a message carries an
information matrix J and a mean vector v. One outer iteration updates
every variable-to-factor edge and every factor-to-variable edge exactly
once; how the updates interleave depends on the schedule:

* "sync": double buffered, all variable-to-factor updates from the
  previous iteration's state, then all factor-to-variable updates from
  the fresh variable-to-factor messages. Deterministic bit for bit.
* "seq": factor-centric Gauss-Seidel sweep in ascending factor id; each
  factor refreshes its incoming variable-to-factor messages and then its
  outgoing messages in place, so later factors see earlier updates.
* "random": the same sweep in a freshly permuted factor order each
  iteration, driven by the run's seed.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from gabp.errors import DomainError, ExistenceViolation
from gabp.graph import build_factor_graph
from gabp.numerics import is_pd, is_psd, part_metric

log = logging.getLogger("gabp")

DIVERGENCE_GUARD = 1e12


@dataclass
class Message:
    J: np.ndarray
    v: np.ndarray

    def copy(self):
        return Message(J=self.J.copy(), v=self.v.copy())


@dataclass
class BpOptions:
    tol_j: float = 1e-10
    tol_v: float = 1e-10
    max_iters: int = 10_000
    schedule: str = "sync"
    seed: int = 0
    strict: bool = False
    divergence_guard: float = DIVERGENCE_GUARD
    record_messages: bool = False


@dataclass
class BpTrajectory:
    """Per-edge and per-iteration convergence measurements.

    rows holds one record per edge per iteration:
    (iteration, kind, source id, target id, Frobenius change of J,
    max-abs change of v, part metric to the reference or nan).
    per_iteration aggregates the maxima; part_metric there is the largest
    factor-to-variable part metric to the reference fixed point, or None
    when no reference was supplied.
    """

    rows: list = field(default_factory=list)
    per_iteration: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    initial_part_metric: float = None


@dataclass
class Belief:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class BpResult:
    status: str
    iterations: int
    messages: dict
    trajectory: BpTrajectory
    beliefs: dict


def _prior_precisions(model):
    return {v.id: np.linalg.inv(v.prior_cov) for v in model.variables}


def make_init(model, graph, strategy="zero", custom=None):
    """Initial factor-to-variable messages for every edge.

    strategy is "zero", "lower", "upper" or "custom". The bound inits
    place the edge-wise lower/upper envelopes of the information
    recursion on every edge with zero mean vectors; "custom" takes a dict
    mapping (factor, variable) to Message (or a (J, v) pair) whose
    information matrices must be psd.
    """
    out = {}
    if strategy == "zero":
        for (n, i) in graph.f2v_edges:
            d = graph.var_dims[i]
            out[(n, i)] = Message(J=np.zeros((d, d)), v=np.zeros(d))
        return out
    if strategy in ("lower", "upper"):
        from gabp.analysis import compute_bounds

        bounds = compute_bounds(model, graph)
        source = bounds.lower if strategy == "lower" else bounds.upper
        for (n, i) in graph.f2v_edges:
            out[(n, i)] = Message(J=source[(n, i)].copy(), v=np.zeros(graph.var_dims[i]))
        return out
    if strategy == "custom":
        if custom is None:
            raise DomainError("custom init requested but no messages supplied")
        for (n, i) in graph.f2v_edges:
            if (n, i) not in custom:
                raise DomainError(f"custom init is missing edge ({n}, {i})")
            entry = custom[(n, i)]
            msg = entry if isinstance(entry, Message) else Message(J=np.asarray(entry[0], dtype=float),
                                                                   v=np.asarray(entry[1], dtype=float))
            d = graph.var_dims[i]
            if msg.J.shape != (d, d) or msg.v.shape != (d,):
                raise DomainError(f"custom init edge ({n}, {i}) has wrong shape")
            if not is_psd(msg.J):
                raise DomainError(f"custom init edge ({n}, {i}) has a non-psd information matrix")
            out[(n, i)] = msg.copy()
        return out
    raise DomainError(f"unknown init strategy {strategy!r}")


def _v2f_update(model, graph, prior_prec, j, n, f2v):
    """Message from variable j to factor n given incoming f2v messages."""
    jmat = prior_prec[j].copy()
    rhs = np.zeros(graph.var_dims[j])
    for k in graph.neighbors_of_var[j]:
        if k == n:
            continue
        msg = f2v[(k, j)]
        jmat = jmat + msg.J
        rhs = rhs + msg.J @ msg.v
    return Message(J=jmat, v=np.linalg.solve(jmat, rhs))


def _f2v_update(model, graph, n, i, v2f):
    """Message from factor n to variable i given incoming v2f messages."""
    f = model.factor(n)
    core = f.noise_cov.copy()
    resid = f.obs.copy()
    for j in graph.neighbors_of_factor[n]:
        if j == i:
            continue
        a = f.coeff[j]
        msg = v2f[(j, n)]
        core = core + a @ np.linalg.solve(msg.J, a.T)
        resid = resid - a @ msg.v
    a_i = f.coeff[i]
    half = np.linalg.solve(core, np.column_stack([a_i, resid.reshape(-1, 1)]))
    jmat = a_i.T @ half[:, :-1]
    jmat = (jmat + jmat.T) / 2.0
    v = np.linalg.solve(jmat, a_i.T @ half[:, -1])
    return Message(J=jmat, v=v)


def existence_check(model, graph, v2f, n, i):
    """True when the factor-to-variable update for edge (n, i) is well defined.

    The update integrates out the other scope variables; the integral
    exists exactly when the stacked quadratic form

        A^T R^-1 A + blockdiag(J of incoming messages)

    over those variables is positive definite. With psd initialization
    this always holds, but manually crafted message states can break it.
    """
    f = model.factor(n)
    others = [j for j in graph.neighbors_of_factor[n] if j != i]
    if not others:
        return True
    a_blk = np.hstack([f.coeff[j] for j in others])
    core = a_blk.T @ np.linalg.solve(f.noise_cov, a_blk)
    pos = 0
    for j in others:
        d = graph.var_dims[j]
        core[pos:pos + d, pos:pos + d] += v2f[(j, n)].J
        pos += d
    return is_pd(core)


def _message_norm(messages):
    worst = 0.0
    for msg in messages.values():
        m = np.max(np.abs(msg.v)) if msg.v.size else 0.0
        if not np.isfinite(m):
            return np.inf
        worst = max(worst, m)
    return worst


def _delta(old, new):
    dj = float(np.linalg.norm(new.J - old.J, ord="fro"))
    dv = float(np.max(np.abs(new.v - old.v))) if new.v.size else 0.0
    return dj, dv


def compute_beliefs(model, graph, messages):
    """Marginal beliefs from the current factor-to-variable messages."""
    f2v = messages["f2v"]
    beliefs = {}
    for v in model.variables:
        prec = np.linalg.inv(v.prior_cov)
        rhs = np.zeros(v.dim)
        for n in graph.neighbors_of_var[v.id]:
            msg = f2v[(n, v.id)]
            prec = prec + msg.J
            rhs = rhs + msg.J @ msg.v
        cov = np.linalg.inv((prec + prec.T) / 2.0)
        beliefs[v.id] = Belief(mean=cov @ rhs, cov=cov)
    return beliefs


def _reference_metric(reference, f2v):
    worst = 0.0
    for edge, jstar in reference.items():
        try:
            worst = max(worst, part_metric(f2v[edge].J, jstar))
        except ValueError:
            return math.inf
    return worst


def run_bp(model, graph=None, init="zero", options=None, custom_init=None, reference=None):
    """Run message passing until tolerance, budget, or the divergence guard.

    Parameters
    ----------
    model : LinearGaussianModel
    graph : FactorGraph, optional
        Built from the model when omitted.
    init : str or dict
        Init strategy name, or a ready dict of (factor, variable) -> Message.
    options : BpOptions
    custom_init : dict, optional
        Messages for init="custom".
    reference : dict, optional
        (factor, variable) -> fixed-point information matrix; when given,
        the trajectory records per-edge part metrics to it.

    Returns
    -------
    BpResult with status "converged", "max_iters" or "diverged". Beliefs
    are computed for the final state unless the run diverged.

    Notes
    -----
    Convergence is declared when both the largest Frobenius change of any
    information matrix and the largest max-abs change of any mean vector
    fall below their tolerances over one full iteration. The divergence
    guard trips when any mean-vector entry exceeds the guard in absolute
    value (or stops being finite).
    """
    if graph is None:
        graph = build_factor_graph(model)
    opts = options or BpOptions()
    if isinstance(init, dict):
        f2v = {e: m.copy() for e, m in init.items()}
    else:
        f2v = make_init(model, graph, init, custom=custom_init)
    prior_prec = _prior_precisions(model)
    v2f = {}
    traj = BpTrajectory()
    if reference is not None:
        traj.initial_part_metric = _reference_metric(reference, f2v)

    rng = np.random.default_rng(opts.seed)
    status = "max_iters"
    iterations = 0

    for it in range(1, opts.max_iters + 1):
        iterations = it
        old_f2v = f2v
        old_v2f = v2f

        if opts.schedule == "sync":
            new_v2f = {
                (j, n): _v2f_update(model, graph, prior_prec, j, n, old_f2v)
                for (j, n) in graph.v2f_edges
            }
            new_f2v = {}
            for (n, i) in graph.f2v_edges:
                if opts.strict and not existence_check(model, graph, new_v2f, n, i):
                    raise ExistenceViolation(
                        f"update for edge ({n} -> {i}) undefined at iteration {it}"
                    )
                new_f2v[(n, i)] = _f2v_update(model, graph, n, i, new_v2f)
            f2v, v2f = new_f2v, new_v2f
        elif opts.schedule in ("seq", "random"):
            order = list(graph.factor_ids)
            if opts.schedule == "random":
                rng.shuffle(order)
            f2v = {e: m for e, m in old_f2v.items()}
            v2f = {e: m for e, m in old_v2f.items()}
            for n in order:
                for j in graph.neighbors_of_factor[n]:
                    v2f[(j, n)] = _v2f_update(model, graph, prior_prec, j, n, f2v)
                for i in graph.neighbors_of_factor[n]:
                    if opts.strict and not existence_check(model, graph, v2f, n, i):
                        raise ExistenceViolation(
                            f"update for edge ({n} -> {i}) undefined at iteration {it}"
                        )
                    f2v[(n, i)] = _f2v_update(model, graph, n, i, v2f)
        else:
            raise DomainError(f"unknown schedule {opts.schedule!r}")

        if opts.strict:
            for (j, n), msg in v2f.items():
                if not is_pd(msg.J):
                    raise ExistenceViolation(
                        f"variable-to-factor message ({j} -> {n}) not pd at iteration {it}"
                    )
            for (n, i), msg in f2v.items():
                if not is_pd(msg.J):
                    raise ExistenceViolation(
                        f"factor-to-variable message ({n} -> {i}) not pd at iteration {it}"
                    )

        max_dj = 0.0
        max_dv = 0.0
        pm_worst = None
        for (j, n) in graph.v2f_edges:
            if (j, n) in old_v2f:
                dj, dv = _delta(old_v2f[(j, n)], v2f[(j, n)])
            else:
                dj, dv = math.nan, math.nan
                max_dj, max_dv = math.inf, math.inf
            traj.rows.append((it, "v2f", j, n, dj, dv, None))
            if not math.isnan(dj):
                max_dj = max(max_dj, dj)
                max_dv = max(max_dv, dv)
        for (n, i) in graph.f2v_edges:
            dj, dv = _delta(old_f2v[(n, i)], f2v[(n, i)])
            pm = None
            if reference is not None and (n, i) in reference:
                try:
                    pm = part_metric(f2v[(n, i)].J, reference[(n, i)])
                except ValueError:
                    pm = math.inf
                pm_worst = pm if pm_worst is None else max(pm_worst, pm)
            traj.rows.append((it, "f2v", n, i, dj, dv, pm))
            max_dj = max(max_dj, dj)
            max_dv = max(max_dv, dv)

        traj.per_iteration.append(
            {"iter": it, "max_dj": max_dj, "max_dv": max_dv, "part_metric": pm_worst}
        )
        if opts.record_messages:
            traj.snapshots.append(
                {
                    "f2v": {e: m.copy() for e, m in f2v.items()},
                    "v2f": {e: m.copy() for e, m in v2f.items()},
                }
            )
        log.debug("bp iter %d: max_dj=%.3e max_dv=%.3e", it, max_dj, max_dv)

        guard = max(_message_norm(f2v), _message_norm(v2f))
        if guard > opts.divergence_guard:
            status = "diverged"
            break
        if max_dj < opts.tol_j and max_dv < opts.tol_v:
            status = "converged"
            break

    messages = {"f2v": f2v, "v2f": v2f}
    beliefs = None if status == "diverged" else compute_beliefs(model, graph, messages)
    return BpResult(status=status, iterations=iterations, messages=messages,
                    trajectory=traj, beliefs=beliefs)
