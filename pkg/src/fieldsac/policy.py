"""Squashed diagonal-Gaussian policy head.

The pre-squash distribution is a factorized Gaussian N(mu, diag(sigma^2));
actions are tanh of the sample, so they live in (-1, 1) per dimension and
the log-density carries the exact change-of-variables correction.  All
functions here are pure and operate on (batch, action_dim) arrays.

The closed-form KL divergence is computed between the pre-squash
Gaussians; tanh is a shared bijection, so it equals the KL between the
squashed distributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

LOG_SIGMA_MIN = -20.0
LOG_SIGMA_MAX = 2.0

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class GaussianHead:
    """Pre-squash mean and per-dimension log standard deviation.

    ``log_sigma`` is clamped to [LOG_SIGMA_MIN, LOG_SIGMA_MAX] on
    construction.
    """

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        ls = np.clip(np.asarray(self.log_sigma, dtype=np.float64), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        if mu.ndim != 2 or mu.shape != ls.shape:
            raise ConfigError("mu and log_sigma must be matching (batch, dim) arrays")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", ls)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


@dataclass(frozen=True)
class ActionSample:
    """A reparameterized draw: action = tanh(pre_squash), log_prob in nats."""

    action: np.ndarray
    pre_squash: np.ndarray
    log_prob: np.ndarray


def head_from_output(net_out: np.ndarray) -> tuple[GaussianHead, np.ndarray]:
    """Split a network output of width 2*A into a head.

    Also returns the mask of log_sigma entries that were inside the clamp
    range (1.0 where the gradient flows, 0.0 where clamped).
    """
    if net_out.ndim != 2 or net_out.shape[1] % 2 != 0:
        raise ConfigError("policy output must have even width (mu ++ log_sigma)")
    a = net_out.shape[1] // 2
    raw_ls = net_out[:, a:]
    mask = ((raw_ls > LOG_SIGMA_MIN) & (raw_ls < LOG_SIGMA_MAX)).astype(np.float64)
    return GaussianHead(net_out[:, :a], raw_ls), mask


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) evaluated stably for large |u|
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def log_prob_of_pre_squash(head: GaussianHead, pre_squash: np.ndarray) -> np.ndarray:
    """Log density (nats) of the squashed sample tanh(pre_squash)."""
    z = (pre_squash - head.mu) / head.sigma
    gauss = -0.5 * z * z - head.log_sigma - _HALF_LOG_2PI
    return (gauss - _log1m_tanh2(pre_squash)).sum(axis=1)


def sample(head: GaussianHead, noise: np.ndarray) -> ActionSample:
    """Reparameterized sample: pre_squash = mu + sigma * noise.

    Deterministic given (head, noise); differentiable w.r.t. mu and
    log_sigma through `sample_grads`.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mu.shape:
        raise ConfigError("noise must match the action shape")
    pre = head.mu + head.sigma * noise
    action = np.tanh(pre)
    gauss = -0.5 * noise * noise - head.log_sigma - _HALF_LOG_2PI
    log_prob = (gauss - _log1m_tanh2(pre)).sum(axis=1)
    return ActionSample(action, pre, log_prob)


def sample_grads(head: GaussianHead, sampled: ActionSample, noise: np.ndarray, clamp_mask: np.ndarray | None = None):
    """Partial derivatives of a reparameterized sample, noise held fixed.

    Returns (dlogp_dmu, dlogp_dls, daction_dmu, daction_dls), each of
    shape (batch, dim).  ``clamp_mask`` zeroes the log_sigma derivatives
    where the raw network output was outside the clamp range.
    """
    a = sampled.action
    sn = head.sigma * noise
    one_m_a2 = 1.0 - a * a
    dlp_dmu = 2.0 * a
    dlp_dls = -1.0 + 2.0 * a * sn
    da_dmu = one_m_a2
    da_dls = one_m_a2 * sn
    if clamp_mask is not None:
        dlp_dls = dlp_dls * clamp_mask
        da_dls = da_dls * clamp_mask
    return dlp_dmu, dlp_dls, da_dmu, da_dls


def deterministic_action(head: GaussianHead) -> np.ndarray:
    return np.tanh(head.mu)


def log_prob_of_action(head: GaussianHead, action: np.ndarray) -> np.ndarray:
    """Density of an explicit action in (-1, 1); used by quadrature tests."""
    action = np.asarray(action, dtype=np.float64)
    pre = np.arctanh(action)
    return log_prob_of_pre_squash(head, pre)


def kl_diag_gaussian(p: GaussianHead, q: GaussianHead) -> np.ndarray:
    """Closed-form KL(p || q) between the pre-squash Gaussians, in nats."""
    if p.mu.shape != q.mu.shape:
        raise ConfigError("heads must share the action dimension")
    var_ratio = np.exp(2.0 * (p.log_sigma - q.log_sigma))
    dmu = (p.mu - q.mu) / q.sigma
    per_dim = q.log_sigma - p.log_sigma + 0.5 * (var_ratio + dmu * dmu) - 0.5
    return per_dim.sum(axis=1)


def kl_grads(p: GaussianHead, q: GaussianHead, clamp_mask: np.ndarray | None = None):
    """d KL(p||q) / d(mu_p, log_sigma_p) with q held fixed."""
    dmu = (p.mu - q.mu) / (q.sigma**2)
    dls = -1.0 + np.exp(2.0 * (p.log_sigma - q.log_sigma))
    if clamp_mask is not None:
        dls = dls * clamp_mask
    return dmu, dls


def entropy_bonus(sampled: ActionSample, alpha: float) -> np.ndarray:
    """Single-sample entropy estimate -alpha * log pi(a|s), per row."""
    return -alpha * sampled.log_prob
