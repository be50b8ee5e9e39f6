"""Information-bottleneck objectives and their linear-Gaussian closed forms.

The transformed objective adds the identically-zero term
``beta * (H(Z|X) - H(Z|X))`` to the IB Lagrangian and regroups it as

    (1 - beta) * (H(Z) - H(Z|X)) + beta * (H(Z|Y) - H(Z|X)).

Under a linear map with additive Gaussian noise of variance eps^2/d per
coordinate, that expression reduces to log-determinants of Gram matrices,
which is what :func:`gaussian_delta_i` evaluates. Everything is in nats.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ibmcr.errors import InputDomainError
from ibmcr.rates import (
    Partition,
    as_features,
    coding_rate,
    logdet_gram,
    rate_reduction,
    _check_eps,
    _check_partition,
)

DEFAULT_BETAS = (0.5, 1.0, 2.0, 10.0, 100.0, 1000.0, 10000.0)
LOG_2PIE = math.log(2.0 * math.pi * math.e)


def _check_beta(beta):
    if not (beta > 0 and math.isfinite(beta)):
        raise InputDomainError(f"beta must lie in (0, inf), got {beta}")


def ib_lagrangian(i_xz, i_yz, beta):
    """I(X;Z) - beta * I(Y;Z)."""
    _check_beta(beta)
    if not (math.isfinite(i_xz) and math.isfinite(i_yz)):
        raise InputDomainError("mutual-information inputs must be finite")
    return i_xz - beta * i_yz


@dataclass(frozen=True)
class EntropyTriple:
    """H(Z), H(Z|X), H(Z|Y) in nats.

    ``discrete`` marks plug-in (Shannon) entropies, for which conditioning may
    not raise entropy. Differential entropies skip that check.
    """

    h_z: float
    h_z_given_x: float
    h_z_given_y: float
    discrete: bool = False

    def __post_init__(self):
        vals = (self.h_z, self.h_z_given_x, self.h_z_given_y)
        if not all(math.isfinite(v) for v in vals):
            raise InputDomainError("entropy values must be finite")
        if self.discrete:
            if self.h_z_given_x > self.h_z + 1e-9 or self.h_z_given_y > self.h_z + 1e-9:
                raise InputDomainError("conditional entropy exceeds H(Z) for a discrete triple")

    @property
    def i_xz(self):
        return self.h_z - self.h_z_given_x

    @property
    def i_yz(self):
        return self.h_z - self.h_z_given_y


def transformed_terms(e, beta):
    """The two summands of the transformed objective.

    Returns ``(input_term, label_term)`` where ``input_term = (1 - beta) I(X;Z)``
    changes sign at beta = 1 and ``label_term = beta (H(Z|Y) - H(Z|X))``.
    """
    _check_beta(beta)
    return (1.0 - beta) * (e.h_z - e.h_z_given_x), beta * (e.h_z_given_y - e.h_z_given_x)


def transformed_ib(e, beta):
    first, second = transformed_terms(e, beta)
    return first + second


@dataclass(frozen=True)
class GaussianChannel:
    """z_hat = theta @ x + c with x ~ N(0, sigma_x), c ~ N(0, eps^2/d I)."""

    theta: np.ndarray
    sigma_x: np.ndarray
    eps: float

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma_x, dtype=np.float64))
        _check_eps(self.eps)
        if sigma.shape != (theta.shape[1], theta.shape[1]):
            raise InputDomainError(
                f"sigma_x must be {theta.shape[1]}x{theta.shape[1]}, got {sigma.shape}"
            )
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(sigma))):
            raise InputDomainError("channel matrices must be finite")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-10:
            raise InputDomainError("sigma_x is not symmetric")
        lam_min = float(np.linalg.eigvalsh(sigma).min())
        if lam_min < -1e-10:
            raise InputDomainError(f"sigma_x is not PSD (min eigenvalue {lam_min:.3e})")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma_x", sigma)

    @property
    def d(self):
        return self.theta.shape[0]

    @classmethod
    def empirical(cls, theta, X, eps):
        """Channel whose input covariance is the raw second moment (1/M) X X^T."""
        X = as_features(X)
        sigma = X @ X.T / X.shape[1]
        return cls(theta, 0.5 * (sigma + sigma.T), eps)


@dataclass(frozen=True)
class ChannelCovariances:
    sigma_zhat: np.ndarray
    sigma_x_zhat: np.ndarray
    cond_closed_form: np.ndarray
    cond_schur: np.ndarray | None
    schur_skipped: bool


def schur_covariances(ch, rcond=1e-12):
    """Covariances of z_hat; Sigma_{z_hat|x} both in closed form and by Schur complement.

    The Schur path needs sigma_x invertible; when its condition number exceeds
    ``1/rcond`` only the closed form is returned and ``schur_skipped`` is set.
    """
    noise = (ch.eps**2 / ch.d) * np.eye(ch.d)
    sigma_zhat = ch.theta @ ch.sigma_x @ ch.theta.T + noise
    sigma_x_zhat = ch.theta @ ch.sigma_x
    lam = np.linalg.eigvalsh(ch.sigma_x)
    if lam.min() <= rcond * max(lam.max(), 0.0):
        return ChannelCovariances(sigma_zhat, sigma_x_zhat, noise, None, True)
    cond = sigma_zhat - sigma_x_zhat @ np.linalg.solve(ch.sigma_x, sigma_x_zhat.T)
    return ChannelCovariances(sigma_zhat, sigma_x_zhat, noise, 0.5 * (cond + cond.T), False)


def gaussian_entropy(sigma, dim=None):
    """Differential entropy 1/2 log((2 pi e)^dim det sigma) of N(., sigma), in nats."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InputDomainError(f"covariance must be square, got {sigma.shape}")
    if dim is None:
        dim = sigma.shape[0]
    if dim != sigma.shape[0]:
        raise InputDomainError(f"dim={dim} does not match covariance size {sigma.shape[0]}")
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(0.5 * (sigma + sigma.T)).min())
        raise InputDomainError(
            f"covariance is not positive definite (min eigenvalue {lam_min:.3e})"
        ) from None
    return 0.5 * (dim * LOG_2PIE + 2.0 * float(np.sum(np.log(np.diag(L)))))


def gaussian_delta_i(Z, partition, eps, beta):
    """Closed-form transformed IB objective for linear features with Gaussian noise.

    (1-beta)/2 log det(I + d/(M eps^2) Z Z^T)
      + beta/2 sum_j (n_j/M) log det(I + d/(n_j eps^2) Z_j Z_j^T)
    """
    Z = as_features(Z)
    _check_eps(eps)
    _check_beta(beta)
    partition = _check_partition(Z, partition)
    d, m = Z.shape
    whole = logdet_gram(Z, d / (m * eps**2))
    per_class = 0.0
    for j, n_j in enumerate(partition.counts()):
        per_class += (n_j / m) * logdet_gram(Z[:, partition.assignment == j], d / (n_j * eps**2))
    return 0.5 * (1.0 - beta) * whole + 0.5 * beta * per_class


def neg_delta_i(Z, partition, eps, beta):
    """The quantity the IB objective maximizes; tends to beta * Delta R as beta grows."""
    return -gaussian_delta_i(Z, partition, eps, beta)


@dataclass(frozen=True)
class SpecialCaseRow:
    beta: float
    neg_delta_i: float
    delta_r: float
    residual: float
    predicted: float
    passed: bool


def verify_special_case(Z, partition, eps, betas=DEFAULT_BETAS, rtol=1e-9, atol=1e-12,
                        delta_r_offset=0.0):
    """Check |neg_delta_i / beta - Delta R| == R / beta for each beta.

    Betas are evaluated in increasing order. A row passes when the residual
    matches R/beta to ``rtol`` and, for R > 0, is strictly below the previous
    row's residual. ``delta_r_offset`` corrupts Delta R for fault-injection
    self-tests.
    """
    betas = sorted(float(b) for b in betas)
    if not betas:
        raise InputDomainError("betas must be nonempty")
    for b in betas:
        _check_beta(b)
    dr = rate_reduction(Z, partition, eps) + delta_r_offset
    r = coding_rate(Z, eps)
    rows = []
    prev = math.inf
    for b in betas:
        ndi = neg_delta_i(Z, partition, eps, b)
        residual = abs(ndi / b - dr)
        predicted = r / b
        ok = abs(residual - predicted) <= rtol * predicted + atol
        if predicted > atol:
            ok = ok and residual < prev
        rows.append(SpecialCaseRow(b, ndi, dr, residual, predicted, ok))
        prev = residual
    return rows


REPORT_HEADER = ("beta", "neg_delta_i", "delta_r", "residual", "predicted", "pass")


def format_report(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for row in rows:
        w.writerow([
            *(repr(float(v)) for v in (row.beta, row.neg_delta_i, row.delta_r, row.residual, row.predicted)),
            "PASS" if row.passed else "FAIL",
        ])
    return buf.getvalue()


def write_report(rows, path):
    with open(path, "w", newline="") as f:
        f.write(format_report(rows))


def random_instance(rng, max_d=16, max_m=64, max_k=4, eps_choices=(0.1, 0.5, 1.0)):
    """Random (Z, Partition, eps) with every class nonempty."""
    d = int(rng.integers(1, max_d + 1))
    k = int(rng.integers(1, max_k + 1))
    m = int(rng.integers(k, max_m + 1))
    Z = rng.standard_normal((d, m)) * rng.uniform(0.1, 3.0)
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=m - k)])
    rng.shuffle(labels)
    return Z, Partition(labels, k), float(rng.choice(eps_choices))
