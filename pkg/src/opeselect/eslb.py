"""Efron-Stein lower bound on the value of the self-normalized estimator.

The bound needs three quantities that are conditional expectations over
re-drawn actions: a variance proxy V (per-index squared increments of the
self-normalized estimator under coordinate replacement), a companion proxy U
(expected squared normalized weights of a fresh sample), and the expected
reciprocal of the smallest leave-one-out weight sum, which yields a
multiplicative bias factor B.  :func:`mc_estimate_proxies` estimates all three
by Monte-Carlo simulation with either a fixed budget or adaptive stopping
backed by empirical-Bernstein certificates; :func:`exact_proxies_enumeration`
computes them exactly on small instances and serves as the test oracle.

The per-index V term for index k is

    (W_k / Z[k] + W'_k / Z^(k))^2,

where Z[k] is the partially simulated sum (observed weights up to k plus
freshly sampled weights after k) and Z^(k) = Z[k] - W_k + W'_k replaces the
observed weight with the fresh draw W'_k; the same draw appears in the
numerator, so a zero denominator implies a zero numerator and the term is
taken as 0.  U is computed from a second, independent tuple and the
reciprocal leave-one-out term from a third.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PolicyTable, hoeffding_context_term

ENUMERATION_LIMIT = 1_000_000  # guard on K^n for the exact oracles


# ---------------------------------------------------------------------------
# Schedules and state


@dataclass(frozen=True)
class FixedSchedule:
    """Run exactly ``iterations`` Monte-Carlo iterations of ``batch_size`` draws."""

    iterations: int
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")


@dataclass(frozen=True)
class AdaptiveSchedule:
    """Stop once every proxy passes its empirical-Bernstein check at accuracy ``eps``.

    Convergence of all three quantities is tested at iterations
    check_base, check_base^2, ... and the certified simulation error budget
    is spent through a union bound; ``max_iterations`` caps runaway cases
    (e.g. near-deterministic targets whose reciprocal-sum range constant is
    huge), in which case the engine returns ``converged=False``.
    """

    eps: float
    x: float
    batch_size: int = 64
    check_base: int = 2
    max_iterations: int = 1_000_000

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.x <= 0:
            raise ValueError("x must be positive")
        if self.batch_size < 1 or self.max_iterations < 2:
            raise ValueError("batch_size and max_iterations must be positive")
        if self.check_base < 2:
            raise ValueError("check_base must be at least 2")


class _Welford:
    """Numerically stable online mean/variance of a scalar sequence."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self) -> None:
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    @property
    def sample_variance(self) -> float:
        if self.count < 2:
            return math.inf
        return self.m2 / (self.count - 1)

    @property
    def standard_error(self) -> float:
        if self.count < 2:
            return math.inf
        return math.sqrt(max(self.sample_variance, 0.0) / self.count)


@dataclass
class MCState:
    """Running state of the proxy simulation (one engine instance per call)."""

    obs_prefix: np.ndarray
    v_vec: np.ndarray
    u_vec: np.ndarray
    z_inv: float = 0.0
    t: int = 0
    v_stats: _Welford = field(default_factory=_Welford)
    u_stats: _Welford = field(default_factory=_Welford)
    z_stats: _Welford = field(default_factory=_Welford)

    def update(self, bv: np.ndarray, bu: np.ndarray, bz: float) -> None:
        self.t += 1
        self.v_vec += (bv - self.v_vec) / self.t
        self.u_vec += (bu - self.u_vec) / self.t
        self.z_inv += (bz - self.z_inv) / self.t
        self.v_stats.push(float(bv.sum()))
        self.u_stats.push(float(bu.sum()))
        self.z_stats.push(bz)


@dataclass(frozen=True)
class VarianceProxies:
    """Estimates of the V/U proxies and the multiplicative bias factor B.

    ``mc_error_budget`` carries the certified per-quantity simulation
    accuracy when adaptive stopping produced the estimates; it stays None for
    fixed schedules and exact enumeration.  ``z_inv`` is the raw expected
    reciprocal of the minimal leave-one-out weight sum from which
    B = min(1, 1/(n z_inv)) derives; the bound assembly needs it to re-inflate
    B by the budget.
    """

    v: float
    u: float
    b: float
    z_inv: float
    iterations: int
    converged: bool
    mc_error_budget: float | None = None
    v_se: float = 0.0
    u_se: float = 0.0
    z_inv_se: float = 0.0

    def __post_init__(self) -> None:
        if self.v < 0 or self.u < 0:
            raise ValueError("proxies must be non-negative")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("bias factor must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class BoundReport:
    """A lower bound on the policy value with its full decomposition.

    ``bias`` is multiplicative for the self-normalized methods (ESLB,
    Chebyshev-WIS) and additive for the lambda-corrected ones; the
    ``diagnostics`` entry ``bias_kind`` records which.  A vacuous bound is
    reported as ``lower_bound = -inf``.
    """

    method: str
    point_estimate: float
    concentration: float
    bias: float
    context_term: float
    lower_bound: float
    delta: float
    x: float
    iterations: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "point_estimate": self.point_estimate,
            "concentration": self.concentration,
            "bias": self.bias,
            "context_term": self.context_term,
            "lower_bound": self.lower_bound,
            "delta": self.delta,
            "x": self.x,
            "iterations": self.iterations,
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# Stopping rule


def convergence_check(sample_variance: float, t: int, x: float, range_c: float, eps: float) -> bool:
    """Empirical-Bernstein certificate that the running mean is within ``eps``.

    True iff sqrt(2 * sample_variance / t) + (7/3) * range_c * x / (t - 1)
    <= eps, which guarantees the simulation error of a [0, range_c]-valued
    sequence's mean is at most eps with probability >= 1 - e^(-x).
    """
    if t < 2:
        raise ValueError("the check needs at least two iterations")
    if eps <= 0 or range_c <= 0:
        raise ValueError("eps and range_c must be positive")
    bound = math.sqrt(2.0 * sample_variance / t) + (7.0 / 3.0) * range_c * x / (t - 1)
    return bound <= eps


# ---------------------------------------------------------------------------
# Monte-Carlo engine


def _validate_pair(target: PolicyTable, behavior: PolicyTable) -> None:
    if target.probs.shape != behavior.probs.shape:
        raise ValueError("policy tables must share their shape")
    if np.any(behavior.probs <= 0):
        raise ValueError("behavior rows must be strictly positive")


def _div0(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Elementwise num/den with the 0/0 convention -> 0 (den is non-negative)."""
    out = np.zeros(np.broadcast_shapes(num.shape, den.shape))
    np.divide(num, den, out=out, where=den > 0)
    return out


def _sample_weights(
    rng: np.random.Generator, cdf: np.ndarray, wtable: np.ndarray, batch: int
) -> np.ndarray:
    """One fresh action tuple per batch column, mapped to importance weights."""
    n, k = cdf.shape
    u = rng.random((n, batch))
    idx = np.minimum((cdf[:, None, :] <= u[:, :, None]).sum(axis=2), k - 1)
    return np.take_along_axis(wtable, idx, axis=1)


def mc_estimate_proxies(
    target: PolicyTable,
    behavior: PolicyTable,
    weights: np.ndarray,
    seed: int,
    schedule: FixedSchedule | AdaptiveSchedule,
) -> VarianceProxies:
    """Monte-Carlo estimates of the V/U proxies and the bias factor.

    Every iteration draws three independent action tuples from the behavior
    rows through iteration-indexed RNG streams, so the result is bit-exact
    given (seed, schedule) no matter how the work is scheduled.  Running
    means update in iteration order; per-quantity sample variances are kept
    online for the stopping rule and the reported standard errors.
    """
    _validate_pair(target, behavior)
    weights = np.asarray(weights, dtype=float)
    n = target.n
    if weights.shape != (n,):
        raise ValueError("weights length does not match the tables")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")

    wtable = target.probs / behavior.probs
    cdf = np.cumsum(behavior.probs, axis=1)
    batch = schedule.batch_size
    adaptive = isinstance(schedule, AdaptiveSchedule)
    if adaptive:
        min_ratio_sum = float(wtable.min(axis=1).sum())
        z_range = math.inf if min_ratio_sum <= 0 else 1.0 / min_ratio_sum
        max_iterations = schedule.max_iterations
    else:
        z_range = math.inf
        max_iterations = schedule.iterations

    state = MCState(
        obs_prefix=np.cumsum(weights),
        v_vec=np.zeros(n),
        u_vec=np.zeros(n),
    )
    w_col = weights[:, None]
    converged = not adaptive
    next_check = schedule.check_base if adaptive else 0

    for t in range(1, max_iterations + 1):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(t,)))
        w1 = _sample_weights(rng, cdf, wtable, batch)
        w2 = _sample_weights(rng, cdf, wtable, batch)
        w3 = _sample_weights(rng, cdf, wtable, batch)

        # Partially simulated sums: observed prefix through k, fresh tail after k.
        suffix = w1[::-1].cumsum(axis=0)[::-1]
        z = np.repeat(state.obs_prefix[:, None], batch, axis=1)
        z[:-1] += suffix[1:]
        z_rep = z - w_col + w1
        vmat = (_div0(w_col, z) + _div0(w1, z_rep)) ** 2
        bv = vmat.mean(axis=1)

        s2 = w2.sum(axis=0)
        normed = _div0(w2, s2[None, :])
        bu = (normed * normed).mean(axis=1)

        s3 = w3.sum(axis=0)
        loo_min = (s3[None, :] - w3).min(axis=0)
        with np.errstate(divide="ignore"):
            bz = float(np.mean(np.where(loo_min > 0, 1.0 / np.maximum(loo_min, 1e-300), math.inf)))

        state.update(bv, bu, bz)

        if adaptive and state.t == next_check:
            x = schedule.x
            ok_v = convergence_check(state.v_stats.sample_variance, state.t, x, 2.0, schedule.eps)
            ok_u = convergence_check(state.u_stats.sample_variance, state.t, x, 2.0, schedule.eps)
            ok_z = (
                math.isfinite(z_range)
                and math.isfinite(state.z_stats.sample_variance)
                and convergence_check(state.z_stats.sample_variance, state.t, x, z_range, schedule.eps)
            )
            if ok_v and ok_u and ok_z:
                converged = True
                break
            next_check *= schedule.check_base

    if np.any(state.v_vec > 4.0 + 1e-9):
        raise AssertionError("internal error: a V contribution exceeded its range")

    z_inv = state.z_inv
    b = 0.0 if not math.isfinite(z_inv) else min(1.0, 1.0 / (n * z_inv)) if z_inv > 0 else 1.0
    return VarianceProxies(
        v=float(state.v_vec.sum()),
        u=float(state.u_vec.sum()),
        b=b,
        z_inv=z_inv,
        iterations=state.t,
        converged=converged,
        mc_error_budget=schedule.eps if adaptive else None,
        v_se=state.v_stats.standard_error,
        u_se=state.u_stats.standard_error,
        z_inv_se=state.z_stats.standard_error,
    )


# ---------------------------------------------------------------------------
# Bound assembly


def eslb_bound(
    proxies: VarianceProxies,
    v_hat_sn: float,
    n: int,
    x: float,
    delta: float | None = None,
) -> BoundReport:
    """Assemble the Efron-Stein lower bound from estimated proxies.

    lower = max(0, B * max(0, v_hat - eps) - sqrt(x / 2n)) with
    eps = sqrt(2 (V + U) (x + 0.5 ln(1 + V/U))).  When the proxies carry an
    adaptive simulation budget, V and U are inflated by it and B is recomputed
    from the inflated reciprocal sum before assembly.  The theorem behind the
    bound needs x >= 2; smaller exponents are computed anyway and flagged via
    ``diagnostics["theorem_valid"]``.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    if n < 1:
        raise ValueError("n must be positive")
    if proxies.mc_error_budget is not None:
        eps_sim = proxies.mc_error_budget
        v = proxies.v + eps_sim
        u = proxies.u + eps_sim
        if math.isfinite(proxies.z_inv):
            b = min(1.0, 1.0 / (n * (proxies.z_inv + eps_sim)))
        else:
            b = 0.0
    else:
        v, u, b = proxies.v, proxies.u, proxies.b
    if u <= 0:
        raise ValueError("invalid proxies: U must be positive")
    if v < 0:
        raise ValueError("invalid proxies: V must be non-negative")

    concentration = math.sqrt(2.0 * (v + u) * (x + 0.5 * math.log1p(v / u)))
    context = hoeffding_context_term(n, x)
    lower = max(0.0, b * max(0.0, v_hat_sn - concentration) - context)
    if delta is None:
        delta = min(1.0, 2.0 * math.exp(-x))

    if proxies.mc_error_budget is not None:
        failures = (2.0 + 3.0 * math.log2(max(proxies.iterations, 2))) * math.exp(-x)
    else:
        failures = 2.0 * math.exp(-x)
    diagnostics = {
        "bias_kind": "multiplicative",
        "theorem_valid": x >= 2.0,
        "converged": proxies.converged,
        "mc_error_budget": proxies.mc_error_budget,
        "coverage_failure_bound": min(1.0, failures),
        "v": v,
        "u": u,
        "z_inv": proxies.z_inv,
        "vacuous": lower <= 0.0,
    }
    return BoundReport(
        method="eslb",
        point_estimate=float(v_hat_sn),
        concentration=concentration,
        bias=b,
        context_term=context,
        lower_bound=lower,
        delta=delta,
        x=x,
        iterations=proxies.iterations,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Exact oracles (test-only; exponential in the sample size)


def _mixed_radix(k: int, m: int) -> np.ndarray:
    """All K^m action tuples as an (K^m, m) array of 0-based digits."""
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    codes = np.arange(k ** m, dtype=np.int64)
    powers = k ** np.arange(m - 1, -1, -1, dtype=np.int64)
    return (codes[:, None] // powers[None, :]) % k


def _guard_instance(k: int, m: int) -> None:
    if k ** m > ENUMERATION_LIMIT:
        raise ValueError(f"instance too large for enumeration: K^n = {k}^{m} > {ENUMERATION_LIMIT}")


def exact_proxies_enumeration(
    target: PolicyTable, behavior: PolicyTable, weights: np.ndarray
) -> VarianceProxies:
    """Exact V/U/B by summing over all action assignments (test oracle).

    Shares the Monte-Carlo engine's term structure: the V term for index k
    conditions on the observed weights through k and integrates the fresh
    tail and the replacement draw exactly.
    """
    _validate_pair(target, behavior)
    weights = np.asarray(weights, dtype=float)
    n, k = target.probs.shape
    if weights.shape != (n,):
        raise ValueError("weights length does not match the tables")
    _guard_instance(k, n)

    wtable = target.probs / behavior.probs
    bprobs = behavior.probs
    obs_prefix = np.cumsum(weights)

    v_vec = np.zeros(n)
    for idx in range(n):
        m = n - idx - 1
        tails = _mixed_radix(k, m)
        if m > 0:
            slots = np.arange(m)
            tail_w = wtable[idx + 1 :][slots[None, :], tails].sum(axis=1)
            tail_p = bprobs[idx + 1 :][slots[None, :], tails].prod(axis=1)
        else:
            tail_w = np.zeros(1)
            tail_p = np.ones(1)
        z = obs_prefix[idx] + tail_w
        z_rep = z[:, None] - weights[idx] + wtable[idx][None, :]
        term = (_div0(np.full_like(z, weights[idx]), z)[:, None] + _div0(wtable[idx][None, :], z_rep)) ** 2
        v_vec[idx] = float((tail_p[:, None] * bprobs[idx][None, :] * term).sum())

    tuples = _mixed_radix(k, n)
    slots = np.arange(n)
    w_full = wtable[slots[None, :], tuples]
    p_full = bprobs[slots[None, :], tuples].prod(axis=1)

    sums = w_full.sum(axis=1)
    normed = _div0(w_full, sums[:, None])
    u_vec = (p_full[:, None] * normed * normed).sum(axis=0)

    loo_min = (sums[:, None] - w_full).min(axis=1)
    with np.errstate(divide="ignore"):
        recip = np.where(loo_min > 0, 1.0 / np.maximum(loo_min, 1e-300), math.inf)
    z_inv = float(np.dot(p_full, recip)) if np.all(np.isfinite(recip[p_full > 0])) else math.inf
    b = 0.0 if not math.isfinite(z_inv) else min(1.0, 1.0 / (n * z_inv))

    return VarianceProxies(
        v=float(v_vec.sum()),
        u=float(u_vec.sum()),
        b=b,
        z_inv=z_inv,
        iterations=0,
        converged=True,
    )


def exact_wis_conditional_expectation(
    target: PolicyTable, behavior: PolicyTable, oracle_labels: np.ndarray
) -> float:
    """Both sides of the one-hot conditional-expectation identity, by enumeration.

    The left side is the exact conditional expectation of the self-normalized
    estimate under one-hot rewards at the oracle labels; the right side is
    sum_i v(pi|X_i) E[1 / (w*_i + sum_{j != i} W_j)].  They must agree to
    1e-12; the left side is returned.
    """
    _validate_pair(target, behavior)
    labels = np.asarray(oracle_labels, dtype=np.int64)
    n, k = target.probs.shape
    if labels.shape != (n,):
        raise ValueError("labels length does not match the tables")
    if np.any(labels < 1) or np.any(labels > k):
        raise ValueError(f"labels must lie in 1..{k}")
    _guard_instance(k, n)

    wtable = target.probs / behavior.probs
    bprobs = behavior.probs
    slots = np.arange(n)

    tuples = _mixed_radix(k, n)
    w_full = wtable[slots[None, :], tuples]
    p_full = bprobs[slots[None, :], tuples].prod(axis=1)
    hits = tuples == (labels - 1)[None, :]
    numer = (w_full * hits).sum(axis=1)
    denom = w_full.sum(axis=1)
    lhs = float(np.dot(p_full, _div0(numer, denom)))

    rhs = 0.0
    for i in range(n):
        v_i = float(target.probs[i, labels[i] - 1])
        if v_i == 0.0:
            continue
        w_star = v_i / float(bprobs[i, labels[i] - 1])
        others = np.delete(slots, i)
        sub = _mixed_radix(k, n - 1)
        cols = np.arange(n - 1)
        w_rest = wtable[others][cols[None, :], sub].sum(axis=1)
        p_rest = bprobs[others][cols[None, :], sub].prod(axis=1)
        rhs += v_i * float(np.dot(p_rest, 1.0 / (w_star + w_rest)))

    if abs(lhs - rhs) > 1e-12:
        raise AssertionError(f"one-hot identity violated: LHS={lhs!r}, RHS={rhs!r}")
    return lhs
