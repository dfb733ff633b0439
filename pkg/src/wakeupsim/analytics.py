"""Closed-form probability oracles and bound checkers.

Everything here is exact arithmetic over a vector of per-packet sending
probabilities or over a recorded contention trace: the slot-success and
slot-collision probabilities, the upper/lower bounds used by the cost
analysis, Chernoff tails, elementary symmetric sums, the equal-allocation
maximizer search, the case split between a reachable good window and a cheap-C
regime, and least-squares power-law fitting for scaling experiments.

run_lemma_suite() sweeps each bound against the exact oracles and returns a
JSON-ready report with one entry per check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError

IDENTITY_TOL = 1e-12
JENSEN_REL_TOL = 1e-9

#: Contention band in which a short sample succeeds with constant probability.
ADEQUATE_CONTENTION = (1.0 / 16.0, 1.0)

#: Default explicit constant standing in for the O(1/C) collision ceiling at
#: low/good contention. 27**2 = 729 from the contention cap, plus slack.
LOW_CONTENTION_CEILING_CONSTANT = 800.0


# ---------------------------------------------------------------------------
# Named parameter ranges
# ---------------------------------------------------------------------------

def good_window(n: int, collision_cost: int) -> tuple[float, float]:
    """Window-size band [n*sqrt(C), 3n*sqrt(C)] where success is likely and collisions cheap."""
    root = math.sqrt(collision_cost)
    return (n * root, 3.0 * n * root)


def good_contention(collision_cost: int) -> tuple[float, float]:
    """Contention band [3/sqrt(C), 27/sqrt(C)], the dynamic analog of a good window."""
    root = math.sqrt(collision_cost)
    return (3.0 / root, 27.0 / root)


def initial_window(collision_cost: int, epsilon: float) -> float:
    """2**(C**epsilon); may be float('inf') for large C."""
    exponent = collision_cost**epsilon
    return 2.0**exponent if exponent < 1023 else math.inf


def large_sample_slots(sample_scale: int, collision_cost: int) -> float:
    """d*sqrt(C)*ln(C), the private-clock halving sample length before rounding."""
    return sample_scale * math.sqrt(collision_cost) * math.log(collision_cost)


# ---------------------------------------------------------------------------
# Exact slot probabilities
# ---------------------------------------------------------------------------

def _validate_probs(probs: Sequence[float]) -> None:
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"probability {p!r} outside [0, 1]")


def exact_success_prob(probs: Sequence[float]) -> float:
    """P(exactly one of the independent senders transmits).

    Computed by the stable two-term recurrence over prefixes (probability of
    zero senders and of exactly one), which avoids dividing by (1-p).
    """
    _validate_probs(probs)
    none = 1.0
    one = 0.0
    for p in probs:
        one = one * (1.0 - p) + none * p
        none *= 1.0 - p
    return one


def exact_collision_prob(probs: Sequence[float]) -> float:
    """P(two or more of the independent senders transmit)."""
    _validate_probs(probs)
    if len(probs) < 2:
        return 0.0
    none = 1.0
    one = 0.0
    for p in probs:
        one = one * (1.0 - p) + none * p
        none *= 1.0 - p
    return max(0.0, 1.0 - none - one)


def collision_upper_bound(m: int, p: float) -> float:
    """2 m^2 p^2 / (1 - mp) for m equal senders; requires p < 1/m."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    if p < 0.0:
        raise ConfigError("p must be nonnegative")
    if m * p >= 1.0:
        raise ConfigError("bound requires p < 1/m")
    return 2.0 * m * m * p * p / (1.0 - m * p)


def collision_lower_bound(con: float) -> float:
    """Con^2 / (2 e^(2 Con)); valid for contention at most 2."""
    if con < 0.0:
        raise ConfigError("contention must be nonnegative")
    if con > 2.0:
        raise ConfigError("bound applies only for contention <= 2")
    return con * con / (2.0 * math.exp(2.0 * con))


def success_lower_bound(con: float) -> float:
    """Con / e^(2 Con); valid when every individual probability is <= 1/2."""
    if con < 0.0:
        raise ConfigError("contention must be nonnegative")
    return con / math.exp(2.0 * con)


def high_contention_collision_floor() -> float:
    """Collision probability is at least 1/10 whenever contention exceeds 2."""
    return 0.1


def chernoff_tail(expectation: float, delta: float, side: str = "upper") -> float:
    """exp(-delta^2 E / (2 + delta)), the deviation tail for a Bernoulli sum.

    side selects the precondition: any delta > 0 for the upper tail,
    0 < delta < 1 for the lower tail. The expression is the same for both.
    """
    if expectation < 0.0:
        raise ConfigError("expectation must be nonnegative")
    if side not in ("upper", "lower"):
        raise ConfigError("side must be 'upper' or 'lower'")
    if delta <= 0.0:
        raise ConfigError("delta must be positive")
    if side == "lower" and delta >= 1.0:
        raise ConfigError("lower tail requires delta < 1")
    return math.exp(-delta * delta * expectation / (2.0 + delta))


# ---------------------------------------------------------------------------
# Contention traces
# ---------------------------------------------------------------------------

def total_contention(trace: Sequence[float]) -> float:
    """Sum of per-slot contention over a whole execution."""
    return float(math.fsum(trace))


def jensen_collision_floor(trace: Sequence[float], collision_cost: int, k: float) -> float:
    """C * (k * sum Con)^2 / L, the convexity floor on expected collision cost.

    Also asserts the deterministic inequality L * sum(Con^2) >= (sum Con)^2
    that the floor rests on.
    """
    length = len(trace)
    if length < 1:
        raise ConfigError("trace must contain at least one slot")
    total = math.fsum(trace)
    total_sq = math.fsum(c * c for c in trace)
    lhs = length * total_sq
    rhs = total * total
    if lhs < rhs * (1.0 - JENSEN_REL_TOL):
        raise AssertionError(f"mean-square inequality violated: {lhs} < {rhs}")
    return collision_cost * (k * total) ** 2 / length


# ---------------------------------------------------------------------------
# Symmetric sums and the equal-allocation maximizer
# ---------------------------------------------------------------------------

def symmetric_sum(probs: Sequence[float], alpha: int) -> float:
    """Elementary symmetric polynomial of degree alpha in the entries.

    Uses the standard prefix recurrence e_a += p * e_(a-1), updating degrees
    high-to-low so each entry is counted once.
    """
    n = len(probs)
    if not 1 <= alpha <= n:
        raise ConfigError("alpha must satisfy 1 <= alpha <= len(probs)")
    _validate_probs(probs)
    e = [1.0] + [0.0] * alpha
    seen = 0
    for p in probs:
        seen += 1
        for a in range(min(alpha, seen), 0, -1):
            e[a] += p * e[a - 1]
    return e[alpha]


def _grid_multisets(n: int, total_steps: int, max_steps: int):
    """Nonincreasing n-tuples of nonnegative ints <= max_steps summing to total_steps."""

    def rec(prefix, remaining, slots, cap):
        if slots == 0:
            if remaining == 0:
                yield tuple(prefix)
            return
        lo = -(-remaining // slots)  # ceil: keep the tuple nonincreasing
        for v in range(min(cap, remaining), max(lo, 0) - 1, -1):
            prefix.append(v)
            yield from rec(prefix, remaining - v, slots - 1, v)
            prefix.pop()

    yield from rec([], total_steps, n, max_steps)


def verify_equal_maximizes(
    n: int, alpha: int, sigma: float, grid_step: float
) -> tuple[bool, Optional[tuple[float, ...]]]:
    """Check that the equal split maximizes the degree-alpha symmetric sum.

    Enumerates every grid vector with entries in [0, 1] (step grid_step) whose
    sum is sigma up to +-grid_step/2, and compares its symmetric sum against
    the equal vector sigma/n. Returns (ok, worst_violating_vector_or_None).
    """
    if not 2 <= n <= 5:
        raise ConfigError("n must be in 2..5")
    if not 1 <= alpha <= n:
        raise ConfigError("alpha must satisfy 1 <= alpha <= n")
    if grid_step <= 0.0:
        raise ConfigError("grid_step must be positive")
    if sigma < 0.0 or sigma > float(n):
        raise ConfigError("sigma must lie in [0, n]")
    if sigma == 0.0:
        return True, None

    equal_value = symmetric_sum([sigma / n] * n, alpha)
    max_steps = int(round(1.0 / grid_step))
    lo_total = math.ceil((sigma - grid_step / 2.0) / grid_step - 1e-9)
    hi_total = math.floor((sigma + grid_step / 2.0) / grid_step + 1e-9)
    worst_value = -math.inf
    worst: Optional[tuple[float, ...]] = None
    for total in range(max(lo_total, 0), min(hi_total, n * max_steps) + 1):
        for steps in _grid_multisets(n, total, max_steps):
            vec = tuple(s * grid_step for s in steps)
            value = symmetric_sum(vec, alpha)
            if value > worst_value:
                worst_value = value
                worst = vec
    if worst_value <= equal_value + IDENTITY_TOL:
        return True, None
    return False, worst


# ---------------------------------------------------------------------------
# Regime split and scaling fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeSplit:
    """Which side of the good-window reachability split a configuration is on."""

    case: str  # "case1": n*sqrt(C) <= w0; "case2": otherwise
    cost_bound: Optional[float]  # (2 log2 n)**(1/epsilon), case2 only


def regime_inequality(n: int, collision_cost: int, epsilon: float) -> RegimeSplit:
    """Classify (n, C, epsilon) and, in case2, check C < (2 log2 n)**(1/epsilon)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if collision_cost < 4:
        raise ConfigError("C must be >= 4")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must be in (0, 1)")
    # n*sqrt(C) <= 2**(C**epsilon), compared in the log2 domain.
    lhs = math.log2(n) + math.log2(collision_cost) / 2.0
    if lhs <= collision_cost**epsilon:
        return RegimeSplit(case="case1", cost_bound=None)
    bound = (2.0 * math.log2(n)) ** (1.0 / epsilon)
    if not collision_cost < bound:
        raise AssertionError(
            f"cheap-collision bound failed: C={collision_cost} >= {bound:.6g}"
        )
    return RegimeSplit(case="case2", cost_bound=bound)


def fit_power_law(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of log y against log x."""
    if len(points) < 2:
        raise ConfigError("power-law fit needs at least 2 points")
    xs = [x for x, _ in points]
    if len(set(xs)) != len(xs):
        raise ConfigError("power-law fit needs distinct x values")
    for x, y in points:
        if x <= 0.0 or y <= 0.0:
            raise ConfigError("power-law fit needs positive coordinates")
    u = [math.log(x) for x, _ in points]
    v = [math.log(y) for _, y in points]
    mu = math.fsum(u) / len(u)
    mv = math.fsum(v) / len(v)
    num = math.fsum((a - mu) * (b - mv) for a, b in zip(u, v))
    den = math.fsum((a - mu) ** 2 for a in u)
    return num / den


def dynamic_collision_ceiling(
    collision_cost: int, constant: float = LOW_CONTENTION_CEILING_CONSTANT
) -> float:
    """Checker threshold constant/C for collision probability at low or good contention."""
    if collision_cost < 4:
        raise ConfigError("C must be >= 4")
    return constant / collision_cost


# ---------------------------------------------------------------------------
# Verification suite
# ---------------------------------------------------------------------------

@dataclass
class LemmaCheck:
    """One swept bound: how many grid/sample points violated it and by how much.

    worst_margin is the smallest observed slack (bound minus value, oriented so
    negative means violated).
    """

    lemma: str
    parameters_swept: str
    violations: int
    worst_margin: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "parameters_swept": self.parameters_swept,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "samples": self.samples,
        }


def _sweep(name: str, swept: str, margins: Iterable[float], tol: float = 0.0) -> LemmaCheck:
    worst = math.inf
    bad = 0
    count = 0
    for m in margins:
        count += 1
        if m < worst:
            worst = m
        if m < -tol:
            bad += 1
    return LemmaCheck(name, swept, bad, worst, count)


def check_collision_upper_bound(grid_points: int = 200) -> LemmaCheck:
    def margins():
        for m in range(2, 65):
            for j in range(1, grid_points + 1):
                p = j / (grid_points + 1) / m
                yield collision_upper_bound(m, p) + IDENTITY_TOL - exact_collision_prob([p] * m)

    return _sweep(
        "equal_prob_collision_upper_bound",
        f"m in 2..64, {grid_points}-point p grid below 1/m",
        margins(),
    )


def check_collision_lower_bound(grid_points: int = 200) -> LemmaCheck:
    # The unscaled floor Con^2/(2 e^(2 Con)) overshoots the exact probability
    # for small p, where a two-way collision has probability C(n,2) p^2, not
    # (n^2/2) p^2. The (1 - 1/n) factor makes the dominance exact.
    def margins():
        for n in range(2, 65):
            scale = 1.0 - 1.0 / n
            for j in range(1, grid_points + 1):
                p = 2.0 * j / grid_points / n
                bound = scale * collision_lower_bound(n * p)
                yield exact_collision_prob([p] * n) - bound + IDENTITY_TOL

    return _sweep(
        "collision_prob_quadratic_floor",
        f"n in 2..64, {grid_points}-point equal-p grid with n*p <= 2, pairwise-scaled",
        margins(),
    )


def check_success_lower_bound(samples: int = 10_000, seed: int = 20260811) -> LemmaCheck:
    rng = np.random.default_rng(seed)

    def margins():
        for _ in range(samples):
            n = int(rng.integers(1, 11))
            probs = (rng.random(n) * 0.5).tolist()
            con = math.fsum(probs)
            yield exact_success_prob(probs) - success_lower_bound(con) + IDENTITY_TOL

    return _sweep(
        "success_prob_contention_floor",
        f"{samples} random vectors, n <= 10, entries <= 1/2",
        margins(),
    )


def check_high_contention_floor(grid_points: int = 200) -> LemmaCheck:
    floor = high_contention_collision_floor()

    def margins():
        for n in range(3, 129):
            lo = 2.0 / n
            for j in range(1, grid_points + 1):
                p = lo + j / grid_points * (1.0 - lo)
                yield exact_collision_prob([p] * n) - floor

    return _sweep(
        "high_contention_collision_floor",
        f"n in 3..128, {grid_points}-point equal-p grid with n*p > 2",
        margins(),
    )


def check_low_contention_ceiling(seed: int = 20260811) -> LemmaCheck:
    rng = np.random.default_rng(seed)
    costs = (16, 64, 256, 1024, 4096, 65536)

    def margins():
        for cost in costs:
            cap = 27.0 / math.sqrt(cost)
            ceiling = dynamic_collision_ceiling(cost)
            # Equal-probability grids along the whole admissible contention range.
            for n in (2, 4, 16, 64):
                for j in range(1, 41):
                    con = j / 40.0 * min(cap, float(n))
                    yield ceiling - exact_collision_prob([con / n] * n)
            # Random unequal vectors, redrawn if scaling pushed an entry past 1.
            for _ in range(200):
                n = int(rng.integers(2, 65))
                target = float(rng.random()) * min(cap, 2.0)
                raw = rng.random(n) + 1e-9
                vec = raw * (target / raw.sum())
                if float(vec.max()) > 1.0:
                    continue
                yield ceiling - exact_collision_prob(vec.tolist())

    return _sweep(
        "low_contention_collision_ceiling",
        "C in {16..65536}, vectors with contention <= 27/sqrt(C)",
        margins(),
    )


def check_jensen_traces(samples: int = 100_000, seed: int = 20260811) -> LemmaCheck:
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, 21, size=samples)
    values = rng.random(int(lengths.sum())) * 3.0
    ends = np.cumsum(lengths)
    starts = ends - lengths
    sums = np.add.reduceat(values, starts)
    sq_sums = np.add.reduceat(values * values, starts)
    lhs = lengths * sq_sums
    rhs = sums * sums
    margins = (lhs - rhs) / np.maximum(rhs, 1e-300)
    return _sweep(
        "jensen_trace_inequality",
        f"{samples} random traces, lengths 1..20",
        margins.tolist(),
        tol=JENSEN_REL_TOL,
    )


def check_pointwise_exp_bounds(grid_points: int = 400) -> LemmaCheck:
    def margins():
        for j in range(grid_points + 1):
            x = -5.0 + 10.0 * j / grid_points
            yield math.exp(-x) - (1.0 - x) + IDENTITY_TOL
        for j in range(grid_points + 1):
            x = 0.5 * j / grid_points
            yield (1.0 - x) - math.exp(-2.0 * x) + IDENTITY_TOL

    return _sweep(
        "exp_pointwise_bounds",
        f"x grids of {grid_points + 1} points on [-5,5] and [0,1/2]",
        margins(),
    )


def _brute_force_probs(probs: Sequence[float]) -> tuple[float, float, float]:
    """(empty, success, collision) by full 2^n enumeration; test oracle."""
    n = len(probs)
    empty = success = collision = 0.0
    for mask in range(1 << n):
        weight = 1.0
        senders = 0
        for i, p in enumerate(probs):
            if mask >> i & 1:
                weight *= p
                senders += 1
            else:
                weight *= 1.0 - p
        if senders == 0:
            empty += weight
        elif senders == 1:
            success += weight
        else:
            collision += weight
    return empty, success, collision


def check_closure_and_enumeration(samples: int = 200, seed: int = 20260811) -> LemmaCheck:
    rng = np.random.default_rng(seed)

    def margins():
        for _ in range(samples):
            n = int(rng.integers(0, 11))
            probs = rng.random(n).tolist()
            none = math.prod(1.0 - p for p in probs)
            succ = exact_success_prob(probs)
            coll = exact_collision_prob(probs)
            yield IDENTITY_TOL - abs(none + succ + coll - 1.0)
            _, bs, bc = _brute_force_probs(probs)
            yield IDENTITY_TOL - abs(succ - bs)
            yield IDENTITY_TOL - abs(coll - bc)

    return _sweep(
        "outcome_prob_closure",
        f"{samples} random vectors, n <= 10, vs full enumeration",
        margins(),
    )


def check_symmetric_sum_enumeration(samples: int = 100, seed: int = 20260811) -> LemmaCheck:
    from itertools import combinations

    rng = np.random.default_rng(seed)

    def margins():
        for _ in range(samples):
            n = int(rng.integers(1, 9))
            probs = rng.random(n).tolist()
            alpha = int(rng.integers(1, n + 1))
            naive = math.fsum(
                math.prod(probs[i] for i in idx) for idx in combinations(range(n), alpha)
            )
            yield IDENTITY_TOL - abs(symmetric_sum(probs, alpha) - naive)

    return _sweep(
        "symmetric_sum_enumeration",
        f"{samples} random vectors, n <= 8, all alpha",
        margins(),
    )


def check_equal_allocation_maximizer() -> LemmaCheck:
    def margins():
        for n in (2, 3):
            for alpha in range(2, n + 1):
                for sigma in (0.5, 1.0):
                    ok, _ = verify_equal_maximizes(n, alpha, sigma, grid_step=0.05)
                    yield 1.0 if ok else -1.0

    return _sweep(
        "equal_allocation_maximizer",
        "n in {2,3}, alpha in 2..n, sigma in {0.5, 1.0}, step 0.05",
        margins(),
    )


def check_case_split_bound() -> LemmaCheck:
    def margins():
        for epsilon in (0.3, 0.5):
            for lg_n in (8, 10, 12, 16):
                n = 2**lg_n
                for cost in (4, 16, 64, 256):
                    split = regime_inequality(n, cost, epsilon)
                    if split.case == "case2":
                        yield split.cost_bound - cost

    return _sweep(
        "case_split_cost_bound",
        "epsilon in {0.3, 0.5}, n in {2^8..2^16}, C in {4..256}, case2 points",
        margins(),
    )


def run_lemma_suite(seed: int = 20260811) -> list[LemmaCheck]:
    """Every closed-form bound swept against the exact oracles."""
    return [
        check_collision_upper_bound(),
        check_collision_lower_bound(),
        check_success_lower_bound(seed=seed),
        check_high_contention_floor(),
        check_low_contention_ceiling(seed=seed),
        check_jensen_traces(seed=seed),
        check_pointwise_exp_bounds(),
        check_closure_and_enumeration(seed=seed),
        check_symmetric_sum_enumeration(seed=seed),
        check_equal_allocation_maximizer(),
        check_case_split_bound(),
    ]
