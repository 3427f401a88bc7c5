"""Reference precision bounds for the spin and photonic tasks.

Three families live here. Bayesian Cramer-Rao tables for the Ramsey tasks,
built from numerically maximized Fisher-information envelopes plus the prior
information of the uniform priors. Discrimination references for the photonic
tasks: the two-state Helstrom bound (with and without a finite reference
budget), the pretty-good-measurement error rate computed through the Gram
matrix, and the derived reference curves. Finally, the analytic geometric
ramp of Ramsey times, which turns a measurement budget into an explicit
schedule with a provable precision bound.

All times are in microseconds, rates in MHz, variances in MHz^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .photonic import CoherentRegister, adder, encode_multiphase, multiphase_phases

# geometric-ramp constants of the phase-estimation algorithm
RAMP_C = 1.66
RAMP_A = 0.60

HELSTROM_TAIL = 1e-12

# printed alongside the other decoherence constants but used by no table row
ETA_C = 0.10582


def uniform_prior_info(width: float) -> float:
    """Fisher information of a uniform prior of the given width, 12/width^2."""
    if width <= 0:
        raise ValueError("prior width must be positive")
    return 12.0 / width**2


@dataclass(frozen=True)
class IntervalExpectations:
    """Moments of T2 = 1/x for x uniform on (a, b), computed in closed form."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not 0 < self.lower < self.upper:
            raise ValueError("need 0 < lower < upper")

    @property
    def t2(self) -> float:
        """E[1/x] = ln(b/a)/(b - a)."""
        return math.log(self.upper / self.lower) / (self.upper - self.lower)

    @property
    def t2_squared(self) -> float:
        """E[1/x^2] = 1/(a b)."""
        return 1.0 / (self.lower * self.upper)

    @property
    def inverse(self) -> float:
        """E[x] = (a + b)/2."""
        return 0.5 * (self.lower + self.upper)

    @property
    def prior_info(self) -> float:
        return uniform_prior_info(self.upper - self.lower)


# priors used throughout the Ramsey examples
DC_INV_T2 = IntervalExpectations(0.09, 0.11)
DEC_INV_T = IntervalExpectations(0.01, 0.1)
DEC_BETA_LOWER, DEC_BETA_UPPER = 1.5, 4.0

INFO_OMEGA = uniform_prior_info(1.0)  # omega uniform on (0, 1) MHz
INFO_OMEGA_HYPERFINE = 18.18181  # triangular prior on the frequency pair


def _beta_second_moment() -> float:
    a, b = DEC_BETA_LOWER, DEC_BETA_UPPER
    return (a * a + a * b + b * b) / 3.0


def _beta_inverse_second_moment() -> float:
    return 1.0 / (DEC_BETA_LOWER * DEC_BETA_UPPER)


def _maximize_1d(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float) -> float:
    """Supremum of f on (lo, hi): coarse grid bracket, then golden section."""
    grid = np.linspace(lo, hi, 4001)
    values = f(grid)
    if not np.all(np.isfinite(values)):
        raise ValueError("objective is not finite on the bracketing grid")
    i = int(np.argmax(values))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(
        lambda x: -f(np.asarray(x)), bounds=(a, b), method="bounded",
        options={"xatol": 1e-12},
    )
    return float(max(-res.fun, values[i]))


def _saturation(x: np.ndarray) -> np.ndarray:
    # e^{-2x}/(1 - e^{-2x}), the envelope shared by every Ramsey objective
    return np.exp(-2 * x) / (1 - np.exp(-2 * x))


@dataclass(frozen=True)
class BoundConstants:
    """Maxima of the Fisher-information envelopes of the Ramsey models.

    mu bounds the per-measurement information on a decay rate, gamma the
    per-time information of the oscillating model, time_coeff the per-time
    information of a plain exponential decay. delta, eps, chi and psi bound
    the stretched-exponential objectives: delta and eps for the decay rate
    (free and fixed stretch exponent), chi and psi for the exponent itself
    (per measurement and per time). eta_c is carried along for completeness
    but enters no bound formula.
    """

    mu: float
    gamma: float
    time_coeff: float
    delta: float
    eps: float
    chi: float
    psi: float
    eta_c: float = ETA_C


def maximize_fi_objectives() -> BoundConstants:
    """Recompute every envelope maximum by direct numeric optimization."""
    mu = _maximize_1d(lambda x: x**2 * _saturation(x), 1e-8, 30.0)
    gamma = _maximize_1d(lambda x: np.sin(x) ** 2 / x, 1e-8, np.pi)
    time_coeff = _maximize_1d(lambda x: x * _saturation(x), 1e-9, 30.0)

    def rate_objective(beta: float) -> float:
        return _maximize_1d(lambda x: x ** (2 - 1 / beta) * _saturation(x), 1e-8, 30.0)

    def exponent_objective(beta: float) -> float:
        return _maximize_1d(
            lambda x: x ** (2 - 1 / beta) * np.log(x) ** 2 * _saturation(x),
            1e-9,
            1.0 - 1e-9,
        )

    betas = np.linspace(DEC_BETA_LOWER, DEC_BETA_UPPER, 26)
    delta = max(rate_objective(b) for b in betas)
    eps = rate_objective(2.0)
    chi = _maximize_1d(
        lambda x: x**2 * np.log(x) ** 2 * _saturation(x), 1e-9, 1.0 - 1e-9
    )
    psi = max(exponent_objective(b) for b in betas)
    return BoundConstants(
        mu=mu, gamma=gamma, time_coeff=time_coeff,
        delta=delta, eps=eps, chi=chi, psi=psi,
    )


@dataclass(frozen=True)
class BoundCurve:
    """A precision bound evaluated on a grid of resource values."""

    resource: np.ndarray
    bound: np.ndarray
    task: str
    case: str
    regime: str

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["resource", "bound", "task", "case", "regime"])
            for r, b in zip(self.resource, self.bound):
                writer.writerow([repr(float(r)), repr(float(b)), self.task,
                                 self.case, self.regime])


def bit_floor(m: np.ndarray) -> np.ndarray:
    """One bit of phase information per measurement: 2^{-2(M+1)}/3 MHz^2."""
    return 2.0 ** (-2 * (np.asarray(m, dtype=float) + 1)) / 3.0


def hyperfine_bit_floor(m: np.ndarray) -> np.ndarray:
    """Bit-counting floor for the frequency pair: 2^{-M}/24 MHz^2."""
    return 2.0 ** (-np.asarray(m, dtype=float)) / 24.0


_CRB_CASES = {
    "dc": ("coherent", "fixed_t2", "interval"),
    "ac": ("coherent", "fixed_t2", "interval"),
    "dec": ("beta_nuisance", "beta_fixed", "both"),
    "hyperfine": ("coherent", "fixed_t2"),
}


def crb_curve(
    task: str,
    case: str,
    regime: str,
    resources: Sequence[float],
    *,
    t2: float = 10.0,
    omega: float = 0.2,
    constants: BoundConstants | None = None,
) -> BoundCurve:
    """Bayesian Cramer-Rao bound of one table row on a resource grid.

    regime "time" reads the resources as total evolution times in us,
    "measurement" as Ramsey-measurement counts. t2 is the known coherence
    time of the fixed_t2 rows; omega is the known drive frequency of the
    oscillating model. Multiparameter rows are sums of independent
    single-parameter bounds.
    """
    if task not in _CRB_CASES:
        raise ValueError(f"unknown task {task!r}")
    if case not in _CRB_CASES[task]:
        raise ValueError(f"unknown case {case!r} for task {task!r}")
    if regime not in ("time", "measurement"):
        raise ValueError(f"unknown regime {regime!r}")
    k = constants if constants is not None else maximize_fi_objectives()
    r = np.asarray(resources, dtype=float)
    if np.any(r <= 0):
        raise ValueError("resources must be positive")

    if task == "dc":
        if case == "coherent":
            value = 1 / (r**2 + INFO_OMEGA) if regime == "time" else bit_floor(r)
        elif case == "fixed_t2":
            if regime == "time":
                value = 1 / (k.time_coeff * r * t2 + INFO_OMEGA)
            else:
                value = np.maximum(
                    bit_floor(r), 1 / (k.mu * r * t2**2 + INFO_OMEGA)
                )
        else:
            e = DC_INV_T2
            if regime == "time":
                rate = k.time_coeff * r * e.t2
            else:
                rate = k.mu * r * e.t2_squared
            value = 1 / (rate + INFO_OMEGA) + 1 / (rate + e.prior_info)
    elif task == "ac":
        if regime == "time":
            amplitude = 1 / (k.gamma * r / omega + INFO_OMEGA)
        else:
            amplitude = 1 / (r / omega**2 + INFO_OMEGA)
        if case in ("coherent", "fixed_t2"):
            if regime == "time":
                value = amplitude
            else:
                value = np.maximum(bit_floor(r), amplitude)
        else:
            e = DC_INV_T2
            if regime == "time":
                rate = k.time_coeff * r * e.t2
            else:
                rate = k.mu * r * e.t2_squared
            value = amplitude + 1 / (rate + e.prior_info)
    elif task == "dec":
        e = DEC_INV_T
        beta_sq = _beta_second_moment()
        inv_beta_sq = _beta_inverse_second_moment()
        if case == "beta_nuisance":
            if regime == "time":
                value = 1 / (k.delta * r * e.t2 * beta_sq + e.prior_info)
            else:
                value = 1 / (k.mu * r * e.t2_squared * beta_sq + e.prior_info)
        elif case == "beta_fixed":
            if regime == "time":
                value = 1 / (4 * k.eps * r * e.t2 + e.prior_info)
            else:
                value = 1 / (4 * k.mu * r * e.t2_squared + e.prior_info)
        else:
            info_beta = uniform_prior_info(DEC_BETA_UPPER - DEC_BETA_LOWER)
            if regime == "time":
                value = 1 / (k.psi * r * e.inverse * inv_beta_sq + info_beta) + 1 / (
                    k.delta * r * e.t2 * beta_sq + e.prior_info
                )
            else:
                value = 1 / (k.chi * r * inv_beta_sq + info_beta) + 1 / (
                    k.mu * r * e.t2_squared * beta_sq + e.prior_info
                )
    else:  # hyperfine, two symmetric frequencies at half contrast
        if case == "coherent":
            if regime == "time":
                value = 2 / (r**2 / 4 + INFO_OMEGA_HYPERFINE)
            else:
                value = hyperfine_bit_floor(r)
        else:
            if regime == "time":
                value = 2 / (r * t2 / 8 + INFO_OMEGA_HYPERFINE)
            else:
                value = np.maximum(
                    hyperfine_bit_floor(r),
                    2 / (k.mu * r * t2**2 / 4 + INFO_OMEGA_HYPERFINE),
                )

    return BoundCurve(resource=r, bound=np.asarray(value, dtype=float),
                      task=task, case=case, regime=regime)


def helstrom(alpha: float, n_refs: float = math.inf) -> float:
    """Minimum error probability for discriminating |alpha> from |-alpha>.

    With an unlimited reference budget the bound is the two-state value
    (1 - sqrt(1 - e^{-4 alpha^2}))/2. With n reference copies the signal and
    references are jointly discriminated; the bound becomes a Poisson average
    over the photon count of the combined state, whose mean is (n+1) alpha^2.
    The series is truncated once the remaining Poisson tail is below 1e-12,
    and converges to the unlimited value as n grows.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0.0:
        return 0.5
    if math.isinf(n_refs):
        return 0.5 * (1.0 - math.sqrt(1.0 - math.exp(-4 * alpha**2)))
    n = int(n_refs)
    if n < 1:
        raise ValueError("need at least one reference copy")
    mean = (n + 1) * alpha**2
    ratio = (n - 1) / (n + 1)
    total = 0.0
    pmf = math.exp(-mean)
    cdf = pmf
    k = 0
    while True:
        total += pmf * math.sqrt(max(0.0, 1.0 - ratio ** (2 * k)))
        if 1.0 - cdf < HELSTROM_TAIL:
            break
        k += 1
        pmf *= mean / k
        cdf += pmf
    return 0.5 * (1.0 - total)


def coherent_overlap(a: CoherentRegister, b: CoherentRegister) -> complex:
    """<a|b> = exp(-(|a|^2 + |b|^2)/2 + a* . b), product over modes."""
    if a.n_modes != b.n_modes:
        raise ValueError("registers must have the same number of modes")
    exponent = (
        -0.5 * (np.sum(np.abs(a.amps) ** 2) + np.sum(np.abs(b.amps) ** 2))
        + np.sum(np.conj(a.amps) * b.amps)
    )
    return complex(np.exp(exponent))


def pgm_error(states: Sequence[CoherentRegister], priors: Sequence[float]) -> float:
    """Error probability of the pretty good measurement on pure states.

    Works entirely in the Gram matrix G_ij = sqrt(p_i p_j) <psi_i|psi_j>:
    the success probability is sum_j |(sqrt G)_jj|^2, with the principal
    square root taken through a Hermitian eigendecomposition. Exact for pure
    states at cost cubic in the number of hypotheses.
    """
    priors = np.asarray(priors, dtype=float)
    if len(states) != priors.size:
        raise ValueError("need one prior per state")
    if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be nonnegative and sum to one")
    m = len(states)
    gram = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            gram[i, j] = math.sqrt(priors[i] * priors[j]) * coherent_overlap(
                states[i], states[j]
            )
    return pgm_error_from_gram(gram)


def pgm_error_from_gram(gram: np.ndarray) -> float:
    """Error probability of the pretty good measurement from a Gram matrix.

    The input is G_ij = sqrt(p_i p_j) <psi_i|psi_j>, Hermitian and PSD with
    unit trace. Invariant under G -> D G D* for any diagonal unitary D, which
    is how a global phase on one of the states acts.
    """
    gram = np.asarray(gram, dtype=complex)
    eigvals, eigvecs = np.linalg.eigh(gram)
    if np.any(eigvals < -1e-10):
        raise ValueError("Gram matrix is not positive semidefinite")
    root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.conj().T
    success = float(np.sum(np.abs(np.diag(root)) ** 2))
    return max(0.0, 1.0 - success)


def _scaled(register: CoherentRegister, n_copies: int) -> CoherentRegister:
    return CoherentRegister(adder(register.amps, n_copies))


def multiphase_reference_curve(
    input_amps: Sequence[complex] = (1, 0, 0, 0),
    n_grid: Sequence[int] = tuple(range(1, 9)),
) -> BoundCurve:
    """Collective discrimination reference for the eight phase hypotheses.

    For each copy budget n the n encoded copies are merged into a single
    register of n-fold amplitude and the pretty good measurement is applied
    to the eight resulting states. The resource axis is the mean photon
    number consumed, n times the photons of a single copy.
    """
    base = CoherentRegister(np.asarray(input_amps, dtype=complex))
    encoded = [
        encode_multiphase(base, multiphase_phases(h)) for h in range(1, 9)
    ]
    priors = np.full(8, 1.0 / 8.0)
    photons, errors = [], []
    for n in n_grid:
        merged = [_scaled(state, n) for state in encoded]
        photons.append(n * base.mean_photons)
        errors.append(pgm_error(merged, priors))
    return BoundCurve(
        resource=np.asarray(photons, dtype=float),
        bound=np.asarray(errors, dtype=float),
        task="multiphase",
        case=f"input_photons_{base.mean_photons:g}",
        regime="photons",
    )


def qml_reference_curve(
    alpha: float = 0.75,
    n_grid: Sequence[int] = tuple(range(1, 9)),
    n_samples: int = 200,
    seed: int = 0,
) -> BoundCurve:
    """Monte Carlo discrimination reference for the three-state classifier.

    Each sample draws the three class amplitudes uniformly from the square
    of half-width alpha and a uniform signal class. The classes are assumed
    to be characterized exactly by spending 2n training copies each, after
    which the pretty good measurement discriminates the signal. The resource
    is the mean photon count 2n(|a0|^2+|a1|^2+|a2|^2) + |a_s|^2.
    """
    rng = np.random.default_rng(seed)
    priors = np.full(3, 1.0 / 3.0)
    photons, errors = [], []
    for n in n_grid:
        ph_acc = err_acc = 0.0
        for _ in range(n_samples):
            amps = rng.uniform(-alpha, alpha, (3, 2)) @ np.array([1.0, 1j])
            signal = rng.integers(3)
            states = [CoherentRegister(np.array([a])) for a in amps]
            err_acc += pgm_error(states, priors)
            ph_acc += 2 * n * float(np.sum(np.abs(amps) ** 2)) + float(
                np.abs(amps[signal]) ** 2
            )
        photons.append(ph_acc / n_samples)
        errors.append(err_acc / n_samples)
    return BoundCurve(
        resource=np.asarray(photons, dtype=float),
        bound=np.asarray(errors, dtype=float),
        task="qml",
        case=f"alpha_{alpha:g}",
        regime="photons",
    )


def linear_classifier_reference_curve(
    alpha: float = 0.5,
    n_states: int = 3,
    m_grid: Sequence[int] = tuple(range(1, 17)),
) -> BoundCurve:
    """Optimal discrimination of cyclic coherent states after merging copies.

    The hypotheses are alpha times the n_states-th roots of unity. Merging
    the M signal copies gives amplitude sqrt(M) alpha; by the cyclic symmetry
    of the set the pretty good measurement is optimal here, so this is a true
    bound rather than a reference value.
    """
    phases = np.exp(2j * np.pi * np.arange(n_states) / n_states)
    priors = np.full(n_states, 1.0 / n_states)
    errors = []
    for m in m_grid:
        states = [
            CoherentRegister(np.array([math.sqrt(m) * alpha * p])) for p in phases
        ]
        errors.append(pgm_error(states, priors))
    return BoundCurve(
        resource=np.asarray(m_grid, dtype=float),
        bound=np.asarray(errors, dtype=float),
        task="linear_classifier",
        case=f"states_{n_states}_alpha_{alpha:g}",
        regime="copies",
    )


def pgm_reference_curves(task: str, **kwargs) -> BoundCurve:
    """Dispatch to the discrimination reference curve of the given task."""
    builders = {
        "multiphase": multiphase_reference_curve,
        "qml": qml_reference_curve,
        "linear_classifier": linear_classifier_reference_curve,
    }
    if task not in builders:
        raise ValueError(f"unknown reference-curve task {task!r}")
    return builders[task](**kwargs)


@dataclass(frozen=True)
class MeasurementDistribution:
    """Geometric ramp of Ramsey times tau_j = b^{j-1} with nu_j repetitions.

    The count at the longest time is pinned to one and the ramp decreases
    linearly in j with slope 2/log_b(C); k_star_exact solves the resource
    constraint exactly, k_star is its large-budget limit sqrt(log_b C) sqrt(M).
    """

    k: int
    nu: np.ndarray
    base: float
    k_star: float
    k_star_exact: float
    c: float = RAMP_C
    a: float = RAMP_A

    @property
    def total_measurements(self) -> int:
        return int(2 * np.sum(self.nu))


def _ramp_bound(k: int, nu: np.ndarray, c: float, a: float) -> float:
    j = np.arange(1, k + 1)
    return (2 * np.pi / 3) ** 2 * (
        4.0**-k + 16 * float(np.sum(a * 4.0 ** (1 - j) * c ** (-nu)))
    )


def analytic_ramp(m: int, base: float = 2.0) -> tuple[MeasurementDistribution, float]:
    """Optimal ramp for a budget of m measurements, with its precision bound.

    Solves the resource constraint m = K(nu_K - 1/L) + K^2/L with nu_K = 1,
    where L = log_base(C), rounds K down and fills nu_j = 1 + (2/L)(K - j)
    rounded to integers of at least one. Returns the distribution and the
    evaluated precision upper bound. Budgets too small to host a single scale
    fall back to K = 1.
    """
    if m < 4:
        raise ValueError("need a budget of at least four measurements")
    if base < 2:
        raise ValueError("the time base must be at least two")
    log_c = math.log(RAMP_C) / math.log(base)
    # K (1 - 1/L) + K^2/L = m, taking the positive root
    disc = (log_c - 1) ** 2 + 4 * log_c * m
    k_exact = ((1 - log_c) + math.sqrt(disc)) / 2
    k_star = math.sqrt(log_c) * math.sqrt(m)
    k = max(1, math.floor(k_exact))
    slope = 2.0 / log_c
    j = np.arange(1, k + 1)
    nu = np.maximum(1, np.rint(1 + slope * (k - j)).astype(int))
    dist = MeasurementDistribution(
        k=k, nu=nu, base=base, k_star=k_star, k_star_exact=k_exact
    )
    return dist, _ramp_bound(k, nu, RAMP_C, RAMP_A)


def analytic_ramp_unrounded(m: int, base: float = 2.0) -> float:
    """Precision bound of the ramp before integer rounding of the counts."""
    dist, _ = analytic_ramp(m, base)
    slope = 2.0 / (math.log(RAMP_C) / math.log(base))
    j = np.arange(1, dist.k + 1)
    nu = 1 + slope * (dist.k - j)
    return _ramp_bound(dist.k, nu, RAMP_C, RAMP_A)
