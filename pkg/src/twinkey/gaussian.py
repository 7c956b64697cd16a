"""Two-mode squeezed vacuum statistics in shot-noise units (vacuum variance = 1).

Covariance matrices use the mode ordering (X_p, Y_p, X_c, Y_c).  The
amplitude difference ``(X_p - X_c)/sqrt(2)`` carries the squeezed variance
``v_minus``; the sum carries ``v_plus``.  The phase quadratures mirror this with
the sign of the cross term flipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

# Below this the product v_minus * v_plus is treated as satisfying the bound.
_UNCERTAINTY_RTOL = 1e-12


def _check_joint_variances(v_minus: float, v_plus: float) -> None:
    if not (v_minus > 0 and v_plus > 0):
        raise ValueError(f"joint variances must be positive, got v_minus={v_minus}, v_plus={v_plus}")
    if v_minus * v_plus < 1.0 - _UNCERTAINTY_RTOL:
        raise ValueError(
            f"v_minus * v_plus = {v_minus * v_plus:.6g} < 1 violates the uncertainty bound"
        )


@dataclass(frozen=True)
class ChannelModel:
    """Gaussian noise description of one probe/conjugate pair.

    ``v_minus``/``v_plus`` hold inside ``[squeeze_band_lo_hz, squeeze_band_hi_hz]``.
    Above the band both relax linearly to shot noise over ``relax_width_hz``;
    below it they sit at shot noise.  Common-mode technical noise of
    ``technical_noise_db`` (relative to shot noise) rolls off above
    ``technical_corner_hz`` as a single pole; a zero corner disables it.
    """

    v_minus: float
    v_plus: float
    squeeze_band_lo_hz: float = 15e3
    squeeze_band_hi_hz: float = 2e6
    technical_noise_db: float = 10.0
    technical_corner_hz: float = 15e3
    relax_width_hz: float = 500e3

    def __post_init__(self):
        _check_joint_variances(self.v_minus, self.v_plus)
        if not 0 <= self.squeeze_band_lo_hz < self.squeeze_band_hi_hz:
            raise ValueError("squeeze band must satisfy 0 <= lo < hi")
        if self.technical_corner_hz < 0 or self.relax_width_hz <= 0:
            raise ValueError("technical_corner_hz must be >= 0 and relax_width_hz > 0")

    @classmethod
    def calibrated(cls, squeezing: float, agreement: float, **kwargs) -> "ChannelModel":
        """Model whose difference quadrature sits at ``squeezing`` dB and whose
        sign agreement equals ``agreement``; the excess (anti-squeezed) noise is
        whatever the pair of targets requires."""
        v_minus = 10.0 ** (squeezing / 10.0)
        rho = rho_for_agreement(agreement)
        if rho >= 1.0:
            raise ValueError("agreement target of 1 needs infinite excess noise")
        if rho <= -1.0:
            raise ValueError("agreement target of 0 is not reachable")
        v_plus = v_minus * (1.0 + rho) / (1.0 - rho)
        return cls(v_minus=v_minus, v_plus=v_plus, **kwargs)

    @classmethod
    def from_db(cls, squeezing: float, antisqueezing: float | None = None, **kwargs) -> "ChannelModel":
        """Model from squeezing/anti-squeezing levels in dB; a missing
        anti-squeezing level means a pure state (v_plus = 1/v_minus)."""
        v_minus = 10.0 ** (squeezing / 10.0)
        v_plus = 1.0 / v_minus if antisqueezing is None else 10.0 ** (antisqueezing / 10.0)
        return cls(v_minus=v_minus, v_plus=v_plus, **kwargs)

    @property
    def rho(self) -> float:
        """In-band amplitude correlation between probe and conjugate."""
        return (self.v_plus - self.v_minus) / (self.v_plus + self.v_minus)

    def covariance(self) -> "CovarianceMatrix":
        return covariance_from_joint_variances(self.v_minus, self.v_plus)


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """4x4 quadrature covariance over (X_p, Y_p, X_c, Y_c)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12):
            raise ValueError("covariance matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise ValueError("covariance matrix must be positive definite")
        if self.symplectic_eigenvalues(m).min() < 1.0 - 1e-9:
            raise ValueError("covariance matrix violates the uncertainty relation")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def symplectic_eigenvalues(m: np.ndarray) -> np.ndarray:
        omega = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))
        ev = np.abs(np.linalg.eigvals(1j * omega @ m))
        return np.sort(ev)[::2]

    @property
    def v_minus(self) -> float:
        m = self.matrix
        return float((m[0, 0] + m[2, 2] - 2 * m[0, 2]) / 2)

    @property
    def v_plus(self) -> float:
        m = self.matrix
        return float((m[0, 0] + m[2, 2] + 2 * m[0, 2]) / 2)


def covariance_from_joint_variances(v_minus: float, v_plus: float) -> CovarianceMatrix:
    _check_joint_variances(v_minus, v_plus)
    a = (v_plus + v_minus) / 2
    c = (v_plus - v_minus) / 2
    m = np.array(
        [
            [a, 0.0, c, 0.0],
            [0.0, a, 0.0, -c],
            [c, 0.0, a, 0.0],
            [0.0, -c, 0.0, a],
        ]
    )
    return CovarianceMatrix(m)


def squeezing_db(v: float) -> float:
    """Noise level of variance ``v`` relative to shot noise, in dB."""
    if not v > 0:
        raise ValueError(f"variance must be positive, got {v}")
    return 10.0 * math.log10(v)


def pearson_correlation(cov: CovarianceMatrix) -> float:
    m = cov.matrix
    return float(m[0, 2] / math.sqrt(m[0, 0] * m[2, 2]))


def sign_agreement(rho: float) -> float:
    """Probability that a zero-mean bivariate Gaussian pair with correlation
    ``rho`` has matching signs (the quadrant I+III mass)."""
    if abs(rho) > 1:
        raise ValueError(f"|rho| must be <= 1, got {rho}")
    return 0.5 + math.asin(rho) / math.pi


def rho_for_agreement(p: float) -> float:
    """Inverse of :func:`sign_agreement`."""
    if not 0 <= p <= 1:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    return math.sin(math.pi * (p - 0.5))


def xor_agreement(per_channel: Sequence[float]) -> float:
    """Probability that the XOR of noisy copies matches the XOR of the
    originals, given independent per-channel agreement probabilities."""
    if len(per_channel) == 0:
        raise ValueError("need at least one channel")
    prod = 1.0
    for p in per_channel:
        if not 0 <= p <= 1:
            raise ValueError(f"probability must lie in [0, 1], got {p}")
        prod *= 2.0 * p - 1.0
    return (1.0 + prod) / 2.0


class Witness(NamedTuple):
    entangled: bool
    margin: float


def entanglement_witness(cov: CovarianceMatrix) -> Witness:
    """Duan-type inseparability test; separable states have
    Var((X_p - X_c)/sqrt2) + Var((Y_p + Y_c)/sqrt2) >= 2."""
    m = cov.matrix
    var_x_diff = (m[0, 0] + m[2, 2] - 2 * m[0, 2]) / 2
    var_y_sum = (m[1, 1] + m[3, 3] + 2 * m[1, 3]) / 2
    margin = 2.0 - (var_x_diff + var_y_sum)
    return Witness(entangled=bool(margin > 0), margin=float(margin))
