"""Coherent-state linear optics and the four photonic discrimination tasks.

Everything here is passive: beam splitters, phase plates, the balanced
four-mode quarter, and photon counting on coherent states. A register of
coherent amplitudes is a complete description of the light, so no covariance
propagation is needed. Photon counts on a coherent mode are Poisson with
mean |amp|^2, and joint likelihoods factorize over modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

POISSON_TAIL = 1e-14  # inversion-sampler truncation; exact at |amp|^2 <= 16


@dataclass(frozen=True)
class CoherentRegister:
    """Complex amplitudes of a multimode coherent state, one per mode."""

    amps: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.amps, dtype=complex)
        if a.ndim != 1:
            raise ValueError("amps must be a 1-d array of mode amplitudes")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amps", a)

    @property
    def n_modes(self) -> int:
        return self.amps.shape[0]

    @property
    def mean_photons(self) -> float:
        """Total mean photon number sum |amp_i|^2."""
        return float(np.sum(np.abs(self.amps) ** 2))


@dataclass(frozen=True)
class BsControl:
    """Beam-splitter controls: mixing angle and relative phase (rad)."""

    theta: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise ValueError("beam-splitter angles must be finite")


def apply_beamsplitter(a, b, ctrl: BsControl):
    """Mix two mode amplitudes on a beam splitter.

    (a', b') = (a cos(theta) + b e^{i phi} sin(theta),
                -a e^{-i phi} sin(theta) + b cos(theta)).
    Unitary, so |a'|^2 + |b'|^2 = |a|^2 + |b|^2. Broadcasts over arrays.
    """
    c, s = np.cos(ctrl.theta), np.sin(ctrl.theta)
    ph = np.exp(1j * ctrl.phi)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return a * c + b * ph * s, -a * np.conj(ph) * s + b * c


def photon_count_prob(amp, k):
    """Poisson probability of counting k photons on a coherent mode.

    P(k) = e^{-|amp|^2} |amp|^{2k} / k!. Broadcasts over arrays of amps.
    """
    mean = np.abs(np.asarray(amp, dtype=complex)) ** 2
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("photon counts must be nonnegative")
    logp = (
        -mean
        + k * np.log(np.where(mean > 0, mean, 1.0))
        - np.vectorize(math.lgamma, otypes=[float])(k + 1)
    )
    # a dark mode never clicks: P(0) = 1, P(k > 0) = 0
    logp = np.where((mean == 0) & (k > 0), -np.inf, logp)
    return np.exp(logp)


def sample_photon_count(rng: np.random.Generator, mean: float) -> int:
    """Poisson draw by inversion of the CDF, truncated at tail mass 1e-14."""
    if mean < 0:
        raise ValueError("Poisson mean must be nonnegative")
    if mean == 0.0:
        return 0
    u = rng.uniform()
    k = 0
    term = math.exp(-mean)
    cdf = term
    while cdf < u and 1.0 - cdf > POISSON_TAIL:
        k += 1
        term *= mean / k
        cdf += term
    return k


class DolinarStep(NamedTuple):
    """One mixing round of the sign-discrimination receiver."""

    measured_mean: np.ndarray  # Poisson mean on the counted port
    new_signal: np.ndarray  # amplitude left on the signal port


def dolinar_step(signal, reference, theta: float, n_phot: int = 0) -> DolinarStep:
    """Mix the signal with one reference copy and expose the counted port.

    The effective mixing angle is theta - pi * (n_phot mod 2), where n_phot
    is the total number of photons observed so far; the parity offset lets
    the same control formula serve both sign hypotheses. The reference
    enters the first port, the counted port is the first output, and the
    second output becomes the new signal. Broadcasts over hypothesis and
    particle axes.
    """
    theta_eff = theta - np.pi * (n_phot % 2)
    measured, remaining = apply_beamsplitter(
        reference, signal, BsControl(theta=theta_eff)
    )
    return DolinarStep(np.abs(measured) ** 2, remaining)


def qml_coarse_grain(count: int, alpha_scale: float) -> int:
    """Map a raw photon count to the three-class summary.

    The pivot is the nearest integer to alpha_scale^2: class 0 below it,
    class 1 at it, class 2 above it.
    """
    if count < 0:
        raise ValueError("photon counts must be nonnegative")
    pivot = int(np.floor(alpha_scale**2 + 0.5))
    if count <= pivot - 1:
        return 0
    if count == pivot:
        return 1
    return 2


# Balanced four-mode splitter: the columns are the amplitudes produced by a
# single photon entering each port, unitary by construction.
QUARTER = 0.5 * np.array(
    [
        [1, 1j, 1j, -1],
        [1j, -1, 1, 1j],
        [1j, 1, -1, 1j],
        [-1, 1j, 1j, 1],
    ],
    dtype=complex,
)


def encode_multiphase(
    register: CoherentRegister, phases: Sequence[float]
) -> CoherentRegister:
    """Opening quarter followed by the unknown phases on modes 0..2.

    Each phase phi_i acts as e^{-i phi_i} on its mode; the fourth mode is
    the phase reference and is left untouched.
    """
    if register.n_modes != 4:
        raise ValueError("the multiphase interferometer has four modes")
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (3,):
        raise ValueError("expected three phases")
    amps = QUARTER @ register.amps
    amps[:3] = amps[:3] * np.exp(-1j * phases)
    return CoherentRegister(amps)


def multiphase_output(
    encoded: CoherentRegister, controls: Sequence[float]
) -> CoherentRegister:
    """Control phases on modes 0..2, then the closing quarter.

    Controls rotate with the opposite sign of the encoding, so a control
    matching the unknown phase cancels it exactly.
    """
    if encoded.n_modes != 4:
        raise ValueError("the multiphase interferometer has four modes")
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (3,):
        raise ValueError("expected three control phases")
    amps = encoded.amps.copy()
    amps[:3] = amps[:3] * np.exp(1j * controls)
    return CoherentRegister(QUARTER @ amps)


class CountRecord(NamedTuple):
    """Photon counts with their joint log-likelihood."""

    counts: np.ndarray
    log_likelihood: float


def _count_modes(rng: np.random.Generator, register: CoherentRegister) -> CountRecord:
    means = np.abs(register.amps) ** 2
    counts = np.array([sample_photon_count(rng, m) for m in means])
    logl = float(np.sum(np.log(photon_count_prob(register.amps, counts))))
    return CountRecord(counts, logl)


def multiphase_measure(
    encoded: CoherentRegister, controls: Sequence[float], rng: np.random.Generator
) -> CountRecord:
    """Close the interferometer and count all four modes independently."""
    return _count_modes(rng, multiphase_output(encoded, controls))


def multiphase_likelihood(
    encoded: CoherentRegister, controls: Sequence[float], counts
) -> float:
    """Joint probability of the four counts; factorizes over modes."""
    out = multiphase_output(encoded, controls)
    return float(np.prod(photon_count_prob(out.amps, np.asarray(counts))))


MULTIPHASE_PHASE_TABLE = np.array(
    [[(h >> 2) & 1, (h >> 1) & 1, h & 1] for h in range(8)], dtype=float
)


def multiphase_phases(hypothesis: int) -> np.ndarray:
    """Phases (phi_0, phi_1, phi_2) in {0, 1} rad for hypothesis 1..8."""
    if not 1 <= hypothesis <= 8:
        raise ValueError("hypothesis index must be in 1..8")
    return MULTIPHASE_PHASE_TABLE[hypothesis - 1]


@dataclass(frozen=True)
class BsNetwork:
    """Static beam-splitter network on d+1 modes.

    The trainable object is a complex generator A; the implemented mode
    transformation is U = exp(i (A + A^dagger)), which is unitary because
    the exponent is Hermitian. The equivalent quadrature action is the
    symplectic-orthogonal block matrix [[Re U, Im U], [-Im U, Re U]].
    """

    generator: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.generator, dtype=complex)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("generator must be a square complex matrix")
        if not np.all(np.isfinite(g)):
            raise ValueError("generator entries must be finite")
        object.__setattr__(self, "generator", g)

    @property
    def n_modes(self) -> int:
        return self.generator.shape[0]

    @property
    def unitary(self) -> np.ndarray:
        return expm(1j * (self.generator + self.generator.conj().T))

    @property
    def symplectic(self) -> np.ndarray:
        u = self.unitary
        return np.block([[u.real, u.imag], [-u.imag, u.real]])


def bsnetwork_apply(net: BsNetwork, register: CoherentRegister) -> CoherentRegister:
    """Propagate the coherent amplitudes through the network."""
    if register.n_modes != net.n_modes:
        raise ValueError(
            f"register has {register.n_modes} modes, network expects {net.n_modes}"
        )
    return CoherentRegister(net.unitary @ register.amps)


def bsnetwork_counts(
    net: BsNetwork, register: CoherentRegister, rng: np.random.Generator
) -> CountRecord:
    """Propagate and photon-count every output mode independently."""
    return _count_modes(rng, bsnetwork_apply(net, register))


def adder(amp, n_copies: int):
    """Combine n identical coherent states into one mode: amp -> sqrt(n) amp."""
    if n_copies < 1:
        raise ValueError("need at least one copy")
    return np.sqrt(n_copies) * np.asarray(amp, dtype=complex)
