"""Instance generators: random CI/far families and adversarial ensembles.

Every generator is a pure function of its spec and seed and returns a
normalized `JointDistribution` plus a metadata dict.  Ensembles that are
naturally pseudo-distributions (total mass in [1, 1+eps]) are divided by
their realized total mass; the factor is recorded under
``raw_total_mass`` so experiments can report both raw and normalized
distance scales (normalization changes distances by at most that factor).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dist_core import JointDistribution, ci_distance_proxy
from .seeding import generator

FAMILIES = (
    "yes_binary_r1",
    "no_binary_r1",
    "yes_binary_r2",
    "no_binary_r2",
    "paninski_yes",
    "paninski_no",
    "nnn_d0",
    "nnn_d1",
    "random_ci",
    "random_far",
)

# 2x2 conditional tables for the binary ensembles, in hundredths.  The two
# independent tables and the three dependent ones interleave an arithmetic
# progression A + k*B (k = 0..4 with B supported on the diagonal), so the
# mixtures with weights (1/2, 1/2) and (1/8, 3/4, 1/8) agree on every
# monomial of the four cell probabilities up to total degree 3.
_INDEP_CELLS = ((16, 24, 24, 36), (36, 24, 24, 16))
_DEP_CELLS = ((6, 24, 24, 46), (46, 24, 24, 6), (26, 24, 24, 26))
_DEP_WEIGHTS = (0.125, 0.125, 0.75)

_UNIFORM_2X2 = np.full((2, 2), 0.25)
_INDEP_SLICES = np.array(_INDEP_CELLS, dtype=float).reshape(2, 2, 2) / 100.0
_DEP_SLICES = np.array(_DEP_CELLS, dtype=float).reshape(3, 2, 2) / 100.0

#: heavy-bin parameter must stay below this fraction of n for the binary ensembles
REGIME_MAX_M_FRACTION = 0.9


class RegimeError(ValueError):
    """Spec parameters fall outside the family's validity regime."""


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters selecting one instance from a family."""

    family: str
    n: int
    eps: float = 0.5
    m: int | None = None
    seed: int = 0
    ell1: int = 2
    ell2: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise RegimeError(f"unknown family {self.family!r}")
        if self.n < 1:
            raise RegimeError("n must be >= 1")


def make_instance(spec: EnsembleSpec) -> tuple[JointDistribution, dict]:
    """Dispatch a spec to its generator."""
    fam = spec.family
    if fam in ("yes_binary_r1", "no_binary_r1", "yes_binary_r2", "no_binary_r2"):
        return gen_binary_ensemble(spec)
    if fam in ("paninski_yes", "paninski_no"):
        which = "uniform" if fam == "paninski_yes" else "perturbed"
        return paninski_reduction(4 * spec.n, spec.eps, which, spec.seed)
    if fam in ("nnn_d0", "nnn_d1"):
        return gen_nnn(spec.n, fam == "nnn_d1", spec.seed)
    if fam == "random_ci":
        return gen_random_ci(spec.ell1, spec.ell2, spec.n, spec.seed)
    if fam == "random_far":
        return gen_random_far(spec.ell1, spec.ell2, spec.n, spec.eps, spec.seed)
    raise RegimeError(f"unknown family {fam!r}")


# ---------------------------------------------------------------------------
# Binary yes/no ensembles
# ---------------------------------------------------------------------------


def gen_binary_ensemble(spec: EnsembleSpec) -> tuple[JointDistribution, dict]:
    """Heavy-bins-plus-light-bins 2x2xn ensembles.

    Heavy bins carry raw mass 1/m with the uniform conditional table;
    light bins carry raw mass eps/n with a table drawn from the
    independent pair (yes families) or the moment-matched dependent triple
    (no families).  Regime 1 picks heavy bins with probability m/n; the
    regime-2 variant picks them with probability 1/2 over the first n-1
    bins and anchors raw mass 1 on the last bin with a uniform table.

    Returns the mass-normalized distribution; metadata records the raw
    total mass, the heavy mask, and each light bin's table kind.
    """
    fam = spec.family
    yes = fam.startswith("yes")
    regime2 = fam.endswith("r2")
    n, eps, m = spec.n, spec.eps, spec.m
    if not 0 < eps <= 1:
        raise RegimeError("eps must lie in (0, 1]")
    if m is None or m < 1:
        raise RegimeError("the binary ensembles need a positive heavy-bin parameter m")
    if m >= REGIME_MAX_M_FRACTION * n:
        raise RegimeError(
            f"regime requires m < {REGIME_MAX_M_FRACTION} * n (got m={m}, n={n})"
        )
    if regime2 and n < 2:
        raise RegimeError("the anchored variant needs n >= 2")
    if not yes:
        assert_moment_matched()

    rng = generator(spec.seed, "binary_ensemble", fam, n, m)
    num_random = n - 1 if regime2 else n
    heavy_prob = 0.5 if regime2 else m / n
    heavy = rng.random(num_random) < heavy_prob
    light_slices = _INDEP_SLICES if yes else _DEP_SLICES
    light_probs = (0.5, 0.5) if yes else _DEP_WEIGHTS
    kind = rng.choice(len(light_slices), size=num_random, p=light_probs)
    kind = np.where(heavy, -1, kind).astype(np.int8)

    weights = np.where(heavy, 1.0 / m, eps / n)
    tables = np.where(
        heavy[:, None, None], _UNIFORM_2X2, light_slices[np.clip(kind, 0, None)]
    )
    if regime2:
        weights = np.concatenate([weights, [1.0]])
        tables = np.concatenate([tables, _UNIFORM_2X2[None]], axis=0)
        heavy = np.concatenate([heavy, [True]])
        kind = np.concatenate([kind, [-1]]).astype(np.int8)

    raw = JointDistribution.from_slices(weights, tables, normalized=False)
    total = raw.total_mass
    dist = JointDistribution(raw.mass / total)
    meta = {
        "family": fam,
        "n": n,
        "m": m,
        "eps": eps,
        "seed": spec.seed,
        "raw_total_mass": total,
        "heavy_mask": heavy,
        "light_kind": kind,
        "anchor_bin": n - 1 if regime2 else None,
    }
    return dist, meta


@dataclass(frozen=True)
class MomentMatchReport:
    """Exact comparison of the two light-slice mixtures, monomial by monomial."""

    degree: int
    matched: bool
    checked: int
    mismatches: tuple
    degree4_counterexample: tuple | None


def moment_match_check(degree: int = 3) -> MomentMatchReport:
    """Verify, in exact rational arithmetic, that the dependent and
    independent light-slice mixtures agree on every cell-probability
    monomial of total degree <= `degree`, and exhibit a degree-4 monomial
    where they differ.
    """
    if degree > 3:
        raise ValueError("the mixtures only match up to degree 3")
    indep = [tuple(Fraction(v, 100) for v in cells) for cells in _INDEP_CELLS]
    dep = [tuple(Fraction(v, 100) for v in cells) for cells in _DEP_CELLS]
    dep_w = (Fraction(1, 8), Fraction(1, 8), Fraction(3, 4))
    indep_w = (Fraction(1, 2), Fraction(1, 2))

    def mixture_moment(slices, weights, exps):
        total = Fraction(0)
        for w, cells in zip(weights, slices):
            term = w
            for v, e in zip(cells, exps):
                term *= v**e
            total += term
        return total

    checked = 0
    mismatches = []
    for total_deg in range(degree + 1):
        for exps in itertools.product(range(total_deg + 1), repeat=4):
            if sum(exps) != total_deg:
                continue
            lhs = mixture_moment(dep, dep_w, exps)
            rhs = mixture_moment(indep, indep_w, exps)
            checked += 1
            if lhs != rhs:
                mismatches.append((exps, lhs, rhs))
    counterexample = None
    for exps in itertools.product(range(5), repeat=4):
        if sum(exps) != 4:
            continue
        lhs = mixture_moment(dep, dep_w, exps)
        rhs = mixture_moment(indep, indep_w, exps)
        if lhs != rhs:
            counterexample = (exps, lhs, rhs)
            break
    return MomentMatchReport(
        degree=degree,
        matched=not mismatches,
        checked=checked,
        mismatches=tuple(mismatches),
        degree4_counterexample=counterexample,
    )


_MOMENT_GATE_OK: bool | None = None


def assert_moment_matched() -> None:
    """Gate for the no-ensemble generator: the moment-matching identity is
    re-verified exactly once per process before any dependent mixture is used."""
    global _MOMENT_GATE_OK
    if _MOMENT_GATE_OK is None:
        report = moment_match_check(3)
        _MOMENT_GATE_OK = report.matched and report.degree4_counterexample is not None
    if not _MOMENT_GATE_OK:
        raise RegimeError("dependent slice mixture failed the moment-matching gate")


# ---------------------------------------------------------------------------
# Paired-uniformity reduction instances
# ---------------------------------------------------------------------------


def paninski_reduction(N: int, eps: float, which: str, seed: int) -> tuple[JointDistribution, dict]:
    """Hard uniformity instances on [N] mapped onto {0,1}^2 x [n], n = N/4.

    Block k of four consecutive domain elements maps to the cells
    (0,0), (0,1), (1,0), (1,1) of bin k in order.  The uniform variant is
    the uniform distribution on the cube (exactly CI); the perturbed
    variant gives each consecutive pair masses (1 +/- 2 eps)/N with an
    independent random sign per pair, so each slice is one of four 2x2
    patterns with row or column sums (1/2, 1/2).
    """
    if N % 4 != 0 or N <= 0:
        raise ValueError("domain size must be a positive multiple of 4")
    if which not in ("uniform", "perturbed"):
        raise ValueError("which must be 'uniform' or 'perturbed'")
    n = N // 4
    if which == "uniform":
        dist = JointDistribution.uniform(2, 2, n)
        meta = {"family": "paninski_yes", "n": n, "eps": eps, "seed": seed}
        return dist, meta
    if not 0 < eps <= 0.5:
        raise ValueError("perturbed variant needs eps in (0, 1/2]")
    rng = generator(seed, "paninski", n)
    signs = rng.choice((-1.0, 1.0), size=(n, 2))  # one sign per consecutive pair
    tables = np.empty((n, 2, 2))
    tables[:, 0, 0] = (1 + 2 * eps * signs[:, 0]) / 4
    tables[:, 0, 1] = (1 - 2 * eps * signs[:, 0]) / 4
    tables[:, 1, 0] = (1 + 2 * eps * signs[:, 1]) / 4
    tables[:, 1, 1] = (1 - 2 * eps * signs[:, 1]) / 4
    dist = JointDistribution.from_slices(np.full(n, 1.0 / n), tables)
    # aligned signs give a rank-1 slice; opposed signs give TV-to-product eps
    slice_tv = np.where(signs[:, 0] == signs[:, 1], 0.0, eps)
    meta = {
        "family": "paninski_no",
        "n": n,
        "eps": eps,
        "seed": seed,
        "signs": signs,
        "slice_tv": slice_tv,
    }
    return dist, meta


# ---------------------------------------------------------------------------
# Cube-scale instances with a planted dependent bit
# ---------------------------------------------------------------------------


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # counter-based 64-bit mix; deterministic bit source for f(x, y, z)
    z = (x + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _hash_bit_table(fseed: int, n: int) -> np.ndarray:
    """Uniform random function f: [n]^3 -> {0,1} realized as a seeded hash."""
    ix = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _splitmix64(np.uint64(fseed % (2**64)) + ix)[:, None, None]
        hy = _splitmix64(np.uint64(0xA5A5A5A5) + ix)[None, :, None]
        hz = _splitmix64(np.uint64(0x5A5A5A5A) + ix)[None, None, :]
        mixed = _splitmix64(base ^ (hy * np.uint64(3)) ^ (hz * np.uint64(7)))
    return (mixed & np.uint64(1)).astype(np.uint8)  # (x, y, z)


def gen_nnn(n: int, far: bool, seed: int) -> tuple[JointDistribution, dict]:
    """Instances over ({0,1} x [n]) x [n] x [n] with heavy/light marginals.

    Z is uniform.  Per bin z, random subsets A_z, B_z of size floor(n^{3/4})
    mark heavy symbols: heavy conditional mass n^{-3/4}/2 per symbol, light
    mass 1/(2(n - n^{3/4})).  X and Y are conditionally independent given z.
    The extra bit W (folded into the first coordinate as index x*2 + w) is
    an independent fair coin in the CI variant; in the far variant it is a
    fair coin on heavy rows/columns and the deterministic hash bit
    f(x, y, z) on light-light cells.

    Memory is Theta(n^3); intended for desk-scale n.
    """
    if n < 16:
        raise ValueError("need n >= 16")
    k = int(np.floor(n**0.75 + 1e-9))
    rng = generator(seed, "nnn", n, int(far))
    order = np.argsort(rng.random((n, n)), axis=1)
    sets_a = np.sort(order[:, :k], axis=1)
    order_b = np.argsort(rng.random((n, n)), axis=1)
    sets_b = np.sort(order_b[:, :k], axis=1)

    heavy_mass = 1.0 / (2 * k)  # equals n^{-3/4}/2 whenever n^{3/4} is an integer
    light_mass = 1.0 / (2 * (n - k))
    px = np.full((n, n), light_mass)  # (z, x)
    np.put_along_axis(px, sets_a, heavy_mass, axis=1)
    py = np.full((n, n), light_mass)  # (z, y)
    np.put_along_axis(py, sets_b, heavy_mass, axis=1)

    base = px[:, :, None] * py[:, None, :] / n  # (z, x, y): joint mass without W
    if not far:
        w0 = 0.5 * base
        w1 = 0.5 * base
    else:
        heavy_x = np.zeros((n, n), dtype=bool)
        np.put_along_axis(heavy_x, sets_a, True, axis=1)
        heavy_y = np.zeros((n, n), dtype=bool)
        np.put_along_axis(heavy_y, sets_b, True, axis=1)
        coin = heavy_x[:, :, None] | heavy_y[:, None, :]  # (z, x, y)
        fbits = _hash_bit_table(seed, n).transpose(2, 0, 1)  # (z, x, y)
        w1_share = np.where(coin, 0.5, fbits.astype(float))
        w1 = base * w1_share
        w0 = base - w1
    # first coordinate is the pair (x, w) with index x*2 + w
    mass = np.empty((2 * n, n, n))
    mass[0::2] = w0.transpose(1, 2, 0)
    mass[1::2] = w1.transpose(1, 2, 0)
    total = float(mass.sum())
    dist = JointDistribution(mass / total)
    meta = {
        "family": "nnn_d1" if far else "nnn_d0",
        "n": n,
        "seed": seed,
        "heavy_set_size": k,
        "exact_three_quarter_power": k == round(n**0.75) and k**4 == n**3,
        "sets_a": sets_a,
        "sets_b": sets_b,
        "raw_total_mass": total,
    }
    if 2 * n**3 <= 4_000_000:
        meta["ci_proxy"] = ci_distance_proxy(dist)
    else:
        # estimate on a bin subsample: Z is uniform, so the proxy is the
        # average over bins of each slice's TV distance to its product
        from .dist_core import product_table, tv_distance

        sampled = rng.choice(n, size=min(n, 48), replace=False)
        dists = [
            tv_distance(dist.slice_table(int(z)), product_table(dist.slice_table(int(z))))
            for z in sampled
        ]
        meta["ci_proxy_estimate"] = float(np.mean(dists))
        meta["ci_proxy_bins_sampled"] = int(sampled.size)
    return dist, meta


# ---------------------------------------------------------------------------
# Smoke-test families
# ---------------------------------------------------------------------------


def gen_random_ci(l1: int, l2: int, n: int, seed: int) -> tuple[JointDistribution, dict]:
    """Random bin weights with independent random product slices: exactly CI."""
    rng = generator(seed, "random_ci", l1, l2, n)
    pz = rng.dirichlet(np.ones(n))
    px = rng.dirichlet(np.ones(l1), size=n)  # (n, l1)
    py = rng.dirichlet(np.ones(l2), size=n)
    tables = px[:, :, None] * py[:, None, :]
    raw = JointDistribution.from_slices(pz, tables, normalized=False)
    dist = JointDistribution(raw.mass / raw.total_mass)
    return dist, {"family": "random_ci", "n": n, "seed": seed}


def _matching_table(l1: int, l2: int, rng: np.random.Generator) -> np.ndarray:
    """A strongly dependent table: uniform mass on a random partial matching."""
    r = min(l1, l2)
    rows = rng.permutation(l1)[:r]
    cols = rng.permutation(l2)[:r]
    t = np.zeros((l1, l2))
    t[rows, cols] = 1.0 / r
    return t


def gen_random_far(
    l1: int, l2: int, n: int, eps: float, seed: int, max_attempts: int = 100
) -> tuple[JointDistribution, dict]:
    """Random instance with ci_distance_proxy >= eps, by mixing each random
    product slice with a random matching table and escalating the mixing
    weight until the proxy target is met (resampling on failure)."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    rng = generator(seed, "random_far", l1, l2, n)
    for attempt in range(max_attempts):
        pz = rng.dirichlet(np.ones(n))
        px = rng.dirichlet(np.ones(l1), size=n)
        py = rng.dirichlet(np.ones(l2), size=n)
        product = px[:, :, None] * py[:, None, :]
        matchings = np.stack([_matching_table(l1, l2, rng) for _ in range(n)])
        w = min(1.0, 1.1 * eps)
        while True:
            tables = (1 - w) * product + w * matchings
            raw = JointDistribution.from_slices(pz, tables, normalized=False)
            dist = JointDistribution(raw.mass / raw.total_mass)
            proxy = ci_distance_proxy(dist)
            if proxy >= eps:
                meta = {
                    "family": "random_far",
                    "n": n,
                    "eps": eps,
                    "seed": seed,
                    "proxy": proxy,
                    "mix_weight": w,
                    "attempts": attempt + 1,
                }
                return dist, meta
            if w >= 1.0:
                break
            w = min(1.0, 1.35 * w)
    raise RegimeError(
        f"could not reach proxy distance {eps} after {max_attempts} resamples"
    )
