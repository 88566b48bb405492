"""Conditional-independence testers and their sample-size formulas.

Both testers draw Poisson(m) samples, group them by the conditioning
coordinate z, and for every bin with at least four samples compute an
unbiased estimate of the (possibly rescaled) squared l2 distance between
the conditional table and the product of its marginals.  The weighted sum
A of the bin statistics is compared against a threshold tau that scales
like sqrt(min(n, m)); the tester accepts exactly when A <= tau (ties
accept).

The binary tester weights each bin estimate by its sample count and is
meant for small fixed alphabets (l1, l2 <= 8).  The general tester first
spends part of each bin's samples flattening the two marginals, weights
by count times the flattening amount, and feeds the flattening grid into
the weighted estimator.

The multiplicative constants (beta for the binary sample size, zeta for
the general sample size and for both thresholds) are exposed
configuration: the guarantees only assert that sufficiently large
constants exist, and desk-scale power needs empirically fitted values or
a calibrated threshold (`calibrate_threshold`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .dist_core import (
    JointDistribution,
    counts_from_samples,
    poissonized_count_tensor,
    sample_poissonized,
)
from .flattening import implicit_flattening
from .poly_estimator import falling, l2_estimator
from .seeding import as_generator, child_seed

_MODES = ("binary", "general", "cmi")


class TesterInputError(ValueError):
    """Bad tester configuration or sample input."""


@dataclass(frozen=True)
class TesterConfig:
    """Tuning knobs shared by the testers.

    `beta` multiplies the binary sample-size formula; `zeta` multiplies the
    general sample-size formula and sets the acceptance threshold
    (zeta * sqrt(min(n, m)) for the binary tester, zeta^{1/4} * sqrt(min(n, m))
    for the general one).  `m_override` / `tau_override` pin the sample
    budget / threshold directly, e.g. to a calibrated value.
    """

    epsilon: float
    mode: str = "binary"
    beta: float = 2.0
    zeta: float = 2.0
    m_override: int | None = None
    tau_override: float | None = None
    seed: int = 0
    cmi_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise TesterInputError(f"mode must be one of {_MODES}")
        if self.mode == "cmi":
            if not 0 < self.epsilon < 0.5:
                raise TesterInputError("cmi mode needs epsilon in (0, 1/2)")
        elif not 0 < self.epsilon <= 1.0:
            raise TesterInputError(f"epsilon must lie in (0, 1] for mode {self.mode}")
        if self.beta <= 0 or self.zeta <= 0:
            raise TesterInputError("beta and zeta must be > 0")


@dataclass(frozen=True)
class Verdict:
    """Tester outcome: accept iff statistic_A <= threshold_tau.

    `per_bin` lists (z, sigma_z, omega_z, A_z) for every bin that
    contributed (sigma_z >= 4); sigma_z is the bin's estimator sample
    count and omega_z the extra weight factor (1 for the binary tester).
    """

    accept: bool
    statistic_A: float
    threshold_tau: float
    m_used: int
    M_drawn: int
    per_bin: tuple

    def __post_init__(self):
        if self.accept != (self.statistic_A <= self.threshold_tau):
            raise TesterInputError("verdict flag inconsistent with A <= tau")

    def to_json(self) -> str:
        payload = {
            "accept": self.accept,
            "statistic_A": self.statistic_A,
            "threshold_tau": self.threshold_tau,
            "m_used": self.m_used,
            "M_drawn": self.M_drawn,
            "per_bin": [list(row) for row in self.per_bin],
        }
        return json.dumps(payload, sort_keys=True)


# ---------------------------------------------------------------------------
# Sample-size formulas
# ---------------------------------------------------------------------------


def sample_complexity_binary_raw(
    n: int, eps: float, beta: float = 1.0, *, ell1: int = 2, ell2: int = 2,
    eps_prime: float | None = None,
) -> float:
    """The un-ceiled binary sample-size formula
    beta * max(sqrt(n)/e'^2, min(n^{7/8}/e', n^{6/7}/e'^{8/7})) with
    e' = eps / sqrt(ell1 * ell2) (or `eps_prime` directly when given)."""
    if n < 1:
        raise TesterInputError("n must be >= 1")
    ep = eps / math.sqrt(ell1 * ell2) if eps_prime is None else eps_prime
    if ep <= 0:
        raise TesterInputError("effective epsilon must be > 0")
    return beta * max(
        math.sqrt(n) / ep**2,
        min(n ** (7 / 8) / ep, n ** (6 / 7) / ep ** (8 / 7)),
    )


def sample_complexity_binary(
    n: int, eps: float, beta: float = 1.0, *, ell1: int = 2, ell2: int = 2,
    eps_prime: float | None = None,
) -> int:
    """Ceiling of `sample_complexity_binary_raw`; three regimes in eps."""
    return math.ceil(sample_complexity_binary_raw(
        n, eps, beta, ell1=ell1, ell2=ell2, eps_prime=eps_prime
    ))


def sample_complexity_general_forms(
    n: int, ell1: int, ell2: int, eps: float
) -> tuple[float, float]:
    """(full, simplified) un-scaled general sample-size formulas.

    The full form is a max of four mins covering the bin-weight regimes;
    the simplified form drops the regime-capping terms.  The two agree up
    to a bounded constant factor.  Swaps the alphabet sizes so l1 >= l2.
    """
    if n < 1 or ell1 < 1 or ell2 < 1:
        raise TesterInputError("dimensions must be >= 1")
    if not 0 < eps <= 1:
        raise TesterInputError("eps must lie in (0, 1]")
    l1, l2 = max(ell1, ell2), min(ell1, ell2)
    e = eps
    full = max(
        min(
            n ** (7 / 8) * (l1 * l2) ** (1 / 4) / e,
            n ** (6 / 7) * (l1 * l2) ** (2 / 7) / e ** (8 / 7),
            n * (l1 * l2) ** 0.5 / e,
        ),
        min(
            n ** (3 / 4) * (l1 * l2) ** 0.5 / e,
            l1**2 * l2**2 / e**4,
            n * l1**0.5 * l2**1.5 / e,
        ),
        min(
            n ** (2 / 3) * l1 ** (2 / 3) * l2 ** (1 / 3) / e ** (4 / 3),
            l1 * l2 / e**4,
            n**0.5 * l1 * l2**0.5 / e**2,
            n * l1**1.5 * l2**0.5 / e,
        ),
        min((n * l1 * l2) ** 0.5 / e**2, l1 * l2 / e**4),
    )
    simplified = max(
        min(
            n ** (7 / 8) * (l1 * l2) ** (1 / 4) / e,
            n ** (6 / 7) * (l1 * l2) ** (2 / 7) / e ** (8 / 7),
        ),
        n ** (3 / 4) * (l1 * l2) ** 0.5 / e,
        n ** (2 / 3) * l1 ** (2 / 3) * l2 ** (1 / 3) / e ** (4 / 3),
        n**0.5 * (l1 * l2) ** 0.5 / e**2,
    )
    return full, simplified


def sample_complexity_general(n: int, ell1: int, ell2: int, eps: float, zeta: float = 1.0) -> int:
    """Ceiling of zeta times the full general sample-size formula."""
    full, _ = sample_complexity_general_forms(n, ell1, ell2, eps)
    return math.ceil(zeta * full)


# ---------------------------------------------------------------------------
# Bin statistics
# ---------------------------------------------------------------------------


def binary_bin_statistics(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-bin statistic sigma_z * Phi(S_z) * 1{sigma_z >= 4}.

    `counts` has shape (n, l1, l2); Phi is the unit-weight l2 estimator
    evaluated from each bin's fingerprint.  Products are accumulated in
    double precision (exact for per-bin counts below 2^26 or so, and
    relatively accurate far beyond).
    """
    c = counts.astype(float)
    sigma = c.sum(axis=(1, 2))
    rows = c.sum(axis=2, keepdims=True)
    cols = c.sum(axis=1, keepdims=True)
    big_n = sigma[:, None, None]
    f_inj = rows - c
    f_nij = cols - c
    f_ninj = big_n - rows - cols + c
    terms = (
        c * (c - 1) * f_ninj * (f_ninj - 1)
        + f_nij * (f_nij - 1) * f_inj * (f_inj - 1)
        - 2 * c * f_ninj * f_inj * f_nij
    )
    raw = terms.sum(axis=(1, 2))
    active = sigma >= 4
    den = np.where(active, sigma * (sigma - 1) * (sigma - 2) * (sigma - 3), 1.0)
    phi = np.where(active, raw / den, 0.0)
    return sigma.astype(np.int64), sigma * phi * active


def _general_bin_statistic(pairs: np.ndarray, l1: int, l2: int) -> tuple[int, float, float]:
    """(sigma_z, omega_z, A_z) for one bin's ordered (x, y) samples.

    Rounds the bin down to 4 + 4t usable samples, flattens with the first
    min(t, l1) + min(t, l2) of them, estimates on the next 2t + 4 with
    weights 1/(1 + a_xy), and discards any leftovers at the end.
    """
    size = pairs.shape[0]
    n_use = 4 + 4 * ((size - 4) // 4)
    t = (n_use - 4) // 4
    t1 = min(t, l1)
    t2 = min(t, l2)
    sigma = 2 * t + 4
    coeffs = implicit_flattening(pairs[: t1 + t2], l1, l2, t1, t2)
    test = pairs[t1 + t2 : t1 + t2 + sigma]
    flat = test[:, 0] * l2 + test[:, 1]
    fp = np.bincount(flat, minlength=l1 * l2).reshape(l1, l2)
    phi = l2_estimator(fp, coeffs.weight_grid())
    omega = math.sqrt(min(sigma, l1) * min(sigma, l2))
    return sigma, omega, sigma * omega * phi


# ---------------------------------------------------------------------------
# Testers
# ---------------------------------------------------------------------------


def _resolve_counts(source, cfg, dims, m_formula):
    """Common input handling for count-based statistics.

    Returns (dims, counts (n, l1, l2), m_used, M_drawn).
    """
    if isinstance(source, JointDistribution):
        m = cfg.m_override if cfg.m_override is not None else m_formula(source.dims)
        rng = as_generator(cfg.seed)
        big_m, counts = poissonized_count_tensor(source, m, rng)
        return source.dims, counts, int(m), big_m
    samples = np.asarray(source, dtype=np.int64)
    if dims is None:
        raise TesterInputError("fixed-sample input needs explicit dims (l1, l2, n)")
    if cfg.m_override is not None:
        if samples.shape[0] < cfg.m_override:
            raise TesterInputError(
                f"requested {cfg.m_override} samples, file provides {samples.shape[0]}"
            )
        samples = samples[: cfg.m_override]
    counts = counts_from_samples(samples, dims)
    return tuple(dims), counts, samples.shape[0], samples.shape[0]


def test_binary(source, cfg: TesterConfig, dims=None) -> Verdict:
    """Count-weighted conditional-independence tester for small alphabets.

    `source` is a JointDistribution (Poissonized sampling with the config
    seed) or an (N, 3) sample array with explicit `dims`, in which case the
    whole file is used and per-bin counts are multinomial rather than
    Poisson (a documented approximation; the statistic conditions on the
    counts either way).  The statistic is the sum over bins with at least
    4 samples of sigma_z times the unit-weight l2 estimate.
    """
    def m_formula(d):
        l1, l2, n = d
        return sample_complexity_binary(n, cfg.epsilon, cfg.beta, ell1=l1, ell2=l2)

    dims_r, counts, m_used, big_m = _resolve_counts(source, cfg, dims, m_formula)
    l1, l2, n = dims_r
    if l1 > 8 or l2 > 8:
        raise TesterInputError("binary tester supports alphabet sizes up to 8")
    tau = (
        cfg.tau_override
        if cfg.tau_override is not None
        else cfg.zeta * math.sqrt(min(n, m_used))
    )
    sigma, a_z = binary_bin_statistics(counts)
    stat = float(a_z.sum())  # bins ascending in z: deterministic reduction
    active = np.nonzero(sigma >= 4)[0]
    per_bin = tuple(
        (int(z), int(sigma[z]), 1.0, float(a_z[z])) for z in active
    )
    return Verdict(
        accept=stat <= tau,
        statistic_A=stat,
        threshold_tau=float(tau),
        m_used=m_used,
        M_drawn=big_m,
        per_bin=per_bin,
    )


def test_general(source, cfg: TesterConfig, dims=None) -> Verdict:
    """Flattened conditional-independence tester for arbitrary alphabets.

    Per bin with at least 4 samples: round down to 4 + 4t samples, flatten
    the marginals with the leading min(t, l1) + min(t, l2) samples, then
    estimate the rescaled squared l2 distance from the next 2t + 4 samples
    with weights 1/(1 + a_xy); the bin weight is sigma_z * omega_z with
    omega_z = sqrt(min(sigma_z, l1) * min(sigma_z, l2)).
    """
    if isinstance(source, JointDistribution):
        l1, l2, n = source.dims
        m = (
            cfg.m_override
            if cfg.m_override is not None
            else sample_complexity_general(n, l1, l2, cfg.epsilon, cfg.zeta)
        )
        samples = sample_poissonized(source, m, as_generator(cfg.seed))
        m_used, big_m = int(m), samples.shape[0]
    else:
        samples = np.asarray(source, dtype=np.int64)
        if dims is None:
            raise TesterInputError("fixed-sample input needs explicit dims (l1, l2, n)")
        l1, l2, n = dims
        if cfg.m_override is not None:
            if samples.shape[0] < cfg.m_override:
                raise TesterInputError(
                    f"requested {cfg.m_override} samples, file provides {samples.shape[0]}"
                )
            samples = samples[: cfg.m_override]
        m_used = big_m = samples.shape[0]
    tau = (
        cfg.tau_override
        if cfg.tau_override is not None
        else cfg.zeta**0.25 * math.sqrt(min(n, m_used))
    )
    # stable partition by z keeps each bin's samples in arrival order
    order = np.argsort(samples[:, 2], kind="stable") if samples.size else np.empty(0, int)
    sorted_samples = samples[order]
    zs = sorted_samples[:, 2]
    stat = 0.0
    per_bin = []
    if sorted_samples.size:
        boundaries = np.flatnonzero(np.diff(zs)) + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [zs.size]])
        for s, e in zip(starts, ends):
            if e - s < 4:
                continue
            z = int(zs[s])
            sigma, omega, a_z = _general_bin_statistic(sorted_samples[s:e, :2], l1, l2)
            stat += a_z
            per_bin.append((z, sigma, omega, a_z))
    return Verdict(
        accept=stat <= tau,
        statistic_A=float(stat),
        threshold_tau=float(tau),
        m_used=m_used,
        M_drawn=big_m,
        per_bin=tuple(per_bin),
    )


def test_cmi(source, eps: float, cfg: TesterConfig, dims=None) -> Verdict:
    """Distinguish zero conditional mutual information from CMI >= eps
    (binary alphabets) by running the binary TV tester at
    eps' = cmi_scale * eps / log2(1/eps)."""
    if not 0 < eps < 0.5:
        raise TesterInputError("cmi mode needs eps in (0, 1/2)")
    dims_check = source.dims if isinstance(source, JointDistribution) else dims
    if dims_check is None or dims_check[0] != 2 or dims_check[1] != 2:
        raise TesterInputError("cmi mode requires binary X and Y")
    eps_prime = cfg.cmi_scale * eps / math.log2(1.0 / eps)
    sub = replace(cfg, epsilon=min(eps_prime, 1.0), mode="binary")
    return test_binary(source, sub, dims=dims)


def run_tester(source, cfg: TesterConfig, dims=None) -> Verdict:
    """Dispatch on cfg.mode."""
    if cfg.mode == "binary":
        return test_binary(source, cfg, dims=dims)
    if cfg.mode == "general":
        return test_general(source, cfg, dims=dims)
    return test_cmi(source, cfg.epsilon, cfg, dims=dims)


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------


def calibrate_threshold(null_generator, cfg: TesterConfig, trials: int) -> float:
    """Empirical threshold from null runs: the smallest observed value tau
    such that at most 1/6 of the null statistics exceed it (a margin below
    the 1/3 error budget).  Returns a strictly positive tau; a null
    statistic that is identically zero yields the smallest positive float.

    `null_generator` maps a trial index to a JointDistribution; each trial
    runs the configured tester with a seed derived from cfg.seed and the
    trial index.
    """
    if trials < 100:
        raise TesterInputError("calibration needs at least 100 trials")
    stats = np.empty(trials)
    for t in range(trials):
        inst = null_generator(t)
        if not isinstance(inst, JointDistribution):
            raise TesterInputError("null_generator must produce JointDistributions")
        sub = replace(cfg, seed=child_seed(cfg.seed, "calibrate", t), tau_override=None)
        stats[t] = run_tester(inst, sub).statistic_A
    if not np.all(np.isfinite(stats)):
        raise TesterInputError("degenerate null generator: non-finite statistics")
    allowed = trials // 6
    tau = float(np.sort(stats)[trials - 1 - allowed])
    if tau <= 0.0:
        tau = float(np.finfo(float).tiny)
    return tau
