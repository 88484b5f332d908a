#!/usr/bin/env python3
"""The squashed-Gaussian policy head: sampling, densities, KL, and the
single-sample entropy bonus, each cross-checked against an independent
numeric estimate.
"""

import numpy as np

from fieldsac import policy

trapezoid = getattr(np, "trapezoid", getattr(np, "trapz", None))

rng = np.random.default_rng(1)

head = policy.GaussianHead(mu=np.array([[0.4, -0.8]]), log_sigma=np.array([[-0.3, 0.1]]))
sample = policy.sample(head, rng.standard_normal((1, 2)))
print("mu            ", head.mu[0])
print("sigma         ", head.sigma[0])
print("sampled action", sample.action[0], "(always inside (-1, 1))")
print("log prob      ", sample.log_prob[0], "nats")
print("deterministic ", policy.deterministic_action(head)[0])

# Normalization: integrate the 1-dim density over the action interval.
grid = np.tanh(np.linspace(-12, 12, 20_001))
h1 = policy.GaussianHead(np.full((grid.size, 1), 0.4), np.full((grid.size, 1), -0.3))
dens = np.exp(policy.log_prob_of_action(h1, grid[:, None]))
print(f"\nintegral of the squashed density: {trapezoid(dens, grid):.6f}")

# Closed-form KL vs a Monte-Carlo estimate.
p = policy.GaussianHead(np.array([[0.2]]), np.array([[-0.1]]))
q = policy.GaussianHead(np.array([[-0.5]]), np.array([[0.2]]))
n = 200_000
pb = policy.GaussianHead(np.repeat(p.mu, n, 0), np.repeat(p.log_sigma, n, 0))
qb = policy.GaussianHead(np.repeat(q.mu, n, 0), np.repeat(q.log_sigma, n, 0))
draws = policy.sample(pb, rng.standard_normal((n, 1)))
mc = float((draws.log_prob - policy.log_prob_of_pre_squash(qb, draws.pre_squash)).mean())
print(f"\nKL closed form   {policy.kl_diag_gaussian(p, q)[0]:.5f} nats")
print(f"KL Monte Carlo   {mc:.5f} nats ({n} samples)")

# Entropy bonus: -alpha log pi, averaged, approaches alpha * entropy.
alpha = 0.2
hb = policy.GaussianHead(np.zeros((n, 1)), np.full((n, 1), -0.5))
draws = policy.sample(hb, rng.standard_normal((n, 1)))
print(f"\nmean entropy bonus (alpha={alpha}): {policy.entropy_bonus(draws, alpha).mean():.5f}")
lp = policy.log_prob_of_action(policy.GaussianHead(np.zeros((grid.size, 1)), np.full((grid.size, 1), -0.5)), grid[:, None])
print(f"alpha * quadrature entropy:        {-alpha * trapezoid(np.exp(lp) * lp, grid):.5f}")
