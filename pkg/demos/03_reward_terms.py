#!/usr/bin/env python3
"""Walk through every coordinate of the reward vector and the windowed
environment reward, then scalarize with the two curriculum weightings.
"""

import numpy as np

from fieldsac import rewards
from fieldsac.rewards import BodyFrame, EnvRewardConfig, VectorReward

# Crossing-legs penalty: scalar triple product of body-frame offsets.
pelvis = np.zeros(3)
upright = BodyFrame(head=np.array([0, 0, 1.0]), pelvis=pelvis, left=np.array([1.0, 0, 0]), right=np.array([0, 1.0, 0]))
crossed = BodyFrame(head=np.array([0, 0, 1.0]), pelvis=pelvis, left=np.array([0, 1.0, 0]), right=np.array([1.0, 0, 0]))
print("crossing legs, normal stance ", rewards.crossing_legs_penalty(upright))
print("crossing legs, crossed stance", rewards.crossing_legs_penalty(crossed))

# Velocity-tracking terms.
v_body, v_tgt = np.array([1.2, 0.0]), np.array([0.8, 0.4])
print("\nvelocity deviation  ", rewards.velocity_deviation_penalty(v_body, v_tgt))
print("speed bonus (plain)  ", rewards.pelvis_velocity_bonus(v_body, v_tgt, directional=False))
print("speed bonus (cosine) ", rewards.pelvis_velocity_bonus(v_body, v_tgt, directional=True))
print("effort penalty       ", rewards.dense_effort_penalty([0.6, 0.8]))

# Target-achieve bonus across its three branches.
print("\n|v_tgt|  bonus")
for m in (0.0, 0.3, 0.5, 0.6, 0.7, 0.9):
    print(f"  {m:.1f}    {rewards.target_achieve_bonus((m, 0.0)):.3f}")

# One 10-step window of the environment reward.
cfg = EnvRewardConfig(r_alive=0.1, w_step=1.0, w_vel=1.0, w_eff=1.0, window=10, dt=0.1)
steps = np.tile(v_body, (10, 1))
targets = np.tile(v_tgt, (10, 1))
actions = np.tile([0.3, 0.1], (10, 1))
print(f"\nwindowed env reward: {rewards.env_reward(cfg, steps, targets, actions):.4f}")

# Scalarization under both curriculum weightings.
r = VectorReward(r_env=1.2, r_clp=0.0, r_vdp=-0.45, r_pvb=1.2, r_dep=-1.0, r_tab=0.1, r_entropy=0.3)
print("\nreward vector      ", r.as_array())
print("pretrain scalar    ", rewards.scalarize(r, rewards.PRETRAIN_WEIGHTS))
print("finetune scalar    ", rewards.scalarize(r, rewards.FINETUNE_WEIGHTS))
