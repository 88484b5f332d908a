"""Reward vocabulary: the seven shaping terms, their weights, and the
windowed environment reward.

Every term is emitted per control step; episode-level sums arise from
discounted accumulation in the learner.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

# Coordinate order of the reward vector.
R_ENV, R_CLP, R_VDP, R_PVB, R_DEP, R_TAB, R_ENTROPY = range(7)
NUM_TERMS = 7
TERM_NAMES = ("r_env", "r_clp", "r_vdp", "r_pvb", "r_dep", "r_tab", "r_entropy")

# Stage weight vectors over (r_env, r_clp, r_vdp, r_pvb, r_dep, r_tab, r_entropy).
PRETRAIN_WEIGHTS = (1.0, 10.0, 0.0, 1.0, 1.0, 0.0, 1.0)
FINETUNE_WEIGHTS = (1.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class VectorReward:
    r_env: float = 0.0
    r_clp: float = 0.0
    r_vdp: float = 0.0
    r_pvb: float = 0.0
    r_dep: float = 0.0
    r_tab: float = 0.0
    r_entropy: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.r_env, self.r_clp, self.r_vdp, self.r_pvb, self.r_dep, self.r_tab, self.r_entropy]
        )

    @classmethod
    def from_array(cls, arr) -> "VectorReward":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (NUM_TERMS,):
            raise ConfigError(f"reward vector must have {NUM_TERMS} entries")
        return cls(*arr.tolist())

    def validate(self) -> None:
        arr = self.as_array()
        if not np.isfinite(arr).all():
            raise ConfigError("reward vector contains non-finite entries")
        if self.r_clp > 0 or self.r_vdp > 0 or self.r_dep > 0:
            raise ConfigError("penalty coordinates must be non-positive")
        if not 0.0 <= self.r_tab <= 1.0:
            raise ConfigError("target-achieve bonus must lie in [0, 1]")


@dataclass(frozen=True)
class RewardWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.shape != (NUM_TERMS,) or not np.isfinite(w).all():
            raise ConfigError(f"weights must be {NUM_TERMS} finite reals")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class BodyFrame:
    """Head, pelvis and foot positions of a multi-body agent (meters)."""

    head: np.ndarray
    pelvis: np.ndarray
    left: np.ndarray
    right: np.ndarray


@dataclass(frozen=True)
class EnvRewardConfig:
    """Structure of the windowed environment reward.

    ``window`` control steps of ``dt`` seconds form one step event: the
    event credits w_step * (window duration) and debits the accumulated
    velocity-deviation and squared-effort integrals.
    """

    r_alive: float = 0.1
    w_step: float = 1.0
    w_vel: float = 1.0
    w_eff: float = 1.0
    window: int = 10
    dt: float = 0.1

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("window must be at least one control step")


def crossing_legs_penalty(frame: BodyFrame) -> float:
    """min(0, triple product of (head, left, right) offsets from the pelvis).

    Negative exactly when the legs cross under an upright torso.
    """
    a = np.asarray(frame.head, dtype=np.float64) - np.asarray(frame.pelvis, dtype=np.float64)
    b = np.asarray(frame.left, dtype=np.float64) - np.asarray(frame.pelvis, dtype=np.float64)
    c = np.asarray(frame.right, dtype=np.float64) - np.asarray(frame.pelvis, dtype=np.float64)
    triple = float(np.dot(np.cross(a, b), c))
    return min(0.0, triple)


def velocity_deviation_penalty(v_body, v_tgt) -> float:
    """-|v_body - v_tgt| for one control step."""
    return -float(np.linalg.norm(np.asarray(v_body, dtype=np.float64) - np.asarray(v_tgt, dtype=np.float64)))


def pelvis_velocity_bonus(v_body, v_tgt, directional: bool = False) -> float:
    """|v_body|, or cos(theta) * |v_body| against the target direction.

    cos(theta) is defined as 0 when either vector has zero norm.
    """
    v_body = np.asarray(v_body, dtype=np.float64)
    speed = float(np.linalg.norm(v_body))
    if not directional:
        return speed
    v_tgt = np.asarray(v_tgt, dtype=np.float64)
    tgt_norm = float(np.linalg.norm(v_tgt))
    if speed == 0.0 or tgt_norm == 0.0:
        return 0.0
    cos_theta = float(np.dot(v_body, v_tgt)) / (speed * tgt_norm)
    return cos_theta * speed


def dense_effort_penalty(action) -> float:
    """-|action|."""
    return -float(np.linalg.norm(np.asarray(action, dtype=np.float64)))


def target_achieve_bonus(v_tgt_local) -> float:
    """Piecewise bonus for standing where the target field vanishes.

    0 above 0.7 m/s, 0.1 on (0.5, 0.7], and 1 - 3.5 |v|^2 at or below
    0.5 m/s.
    """
    m = float(np.linalg.norm(np.asarray(v_tgt_local, dtype=np.float64)))
    if m > 0.7:
        return 0.0
    if m > 0.5:
        return 0.1
    return 1.0 - 3.5 * m * m


def env_reward(cfg: EnvRewardConfig, v_body, v_tgt, actions) -> float:
    """One window's worth of environment reward.

    ``v_body``, ``v_tgt`` and ``actions`` are (window, 2) arrays of the
    per-step body velocity, local target velocity, and applied action.
    """
    v_body = np.asarray(v_body, dtype=np.float64)
    v_tgt = np.asarray(v_tgt, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if v_body.shape[0] != cfg.window or v_tgt.shape[0] != cfg.window or actions.shape[0] != cfg.window:
        raise ConfigError(f"window data must have exactly {cfg.window} rows")
    r_step = cfg.window * cfg.dt
    c_vel = float(np.linalg.norm(v_body - v_tgt, axis=1).sum()) * cfg.dt
    c_eff = float((actions * actions).sum()) * cfg.dt
    return cfg.r_alive * cfg.window + cfg.w_step * r_step - cfg.w_vel * c_vel - cfg.w_eff * c_eff


def env_reward_partial(cfg: EnvRewardConfig, v_body, v_tgt, actions) -> float:
    """As env_reward but for a truncated window (episode ended mid-window)."""
    k = np.asarray(v_body).shape[0]
    return env_reward(replace(cfg, window=k), v_body, v_tgt, actions)


def scalarize(r, w) -> float:
    """Weighted sum of the reward coordinates."""
    r_arr = r.as_array() if isinstance(r, VectorReward) else np.asarray(r, dtype=np.float64)
    w_arr = w.w if isinstance(w, RewardWeights) else np.asarray(w, dtype=np.float64)
    if r_arr.shape != (NUM_TERMS,) or w_arr.shape != (NUM_TERMS,):
        raise ConfigError("scalarize expects 7-vectors")
    return float(r_arr @ w_arr)
