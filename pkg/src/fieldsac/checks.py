"""Fast self-check suite behind the `check` CLI subcommand.

Each check re-derives an expected value with an independent oracle
(closed form, brute force, quadrature, finite differences) and compares
the implementation against it.  The suite runs in well under two
minutes; the heavyweight learning criteria live in the test suite, not
here.
"""

from __future__ import annotations

import numpy as np

from . import distill, nn, policy, sac
from .replay import AnnealSchedule, PrioritizedStore, Segment, SegmentCutter, segment_priority
from .rewards import NUM_TERMS, target_achieve_bonus


def check_rescaling() -> None:
    assert abs(sac.h(3.0, 1e-3) - 1.003) < 1e-12
    xs = np.linspace(-1e4, 1e4, 10_001)
    back = sac.h_inv(sac.h(xs))
    assert np.max(np.abs(back - xs) / np.maximum(1.0, np.abs(xs))) < 1e-9
    assert np.all(np.diff(sac.h(xs)) > 0)


def check_segment_priority() -> None:
    assert abs(segment_priority([1.0, 2.0, 3.0], 0.9) - 2.9) < 1e-12
    assert segment_priority([1.0, 5.0, 2.0], 1.0) == 5.0
    assert abs(segment_priority([1.0, 5.0, 3.0], 0.0) - 3.0) < 1e-12


def check_target_achieve_bonus() -> None:
    rng = np.random.default_rng(0)
    for val, expect in ((0.8, 0.0), (0.6, 0.1), (0.0, 1.0), (0.5, 0.125), (0.7, 0.1)):
        assert abs(target_achieve_bonus((val, 0.0)) - expect) < 1e-12
    for _ in range(1000):
        m = rng.uniform(0, 1.2)
        got = target_achieve_bonus((m, 0.0))
        expect = 0.0 if m > 0.7 else (0.1 if m > 0.5 else 1.0 - 3.5 * m * m)
        assert abs(got - expect) < 1e-12


def check_n_step_targets() -> None:
    rng = np.random.default_rng(1)
    for n in range(1, 6):
        hy = sac.SacHyper(weights=np.ones(NUM_TERMS), n_step=n)
        for _ in range(10):
            B, L = 2, 4
            rewards = rng.standard_normal((B, L + n - 1, NUM_TERMS))
            dones = rng.random((B, L + n - 1)) < 0.2
            boot = rng.standard_normal((B, L, NUM_TERMS))
            got = sac.n_step_targets(rewards, dones, boot, hy)
            for b in range(B):
                for t in range(L):
                    for c in range(NUM_TERMS):
                        g, dead = 0.0, False
                        for k in range(n):
                            if dead:
                                break
                            g += hy.gamma**k * rewards[b, t + k, c]
                            if dones[b, t + k]:
                                dead = True
                        boot_v = 0.0 if dead else float(sac.h_inv(boot[b, t, c]))
                        expect = float(sac.h(g + hy.gamma**n * boot_v))
                        assert abs(got[b, t, c] - expect) < 1e-6


def check_sum_tree() -> None:
    rng = np.random.default_rng(2)
    L, tail = 10, 5
    store = PrioritizedStore(capacity=48, alpha=0.6, n_tail=tail)

    def seg():
        return Segment(
            rng.standard_normal((L + tail, 3)),
            rng.standard_normal((L, 2)),
            rng.standard_normal((L + tail - 1, NUM_TERMS)),
            np.zeros(L + tail - 1, dtype=bool),
            0,
            0,
            L,
        )

    ids = []
    for _ in range(2000):
        if rng.random() < 0.5 or not ids:
            ids.append(store.append(seg(), priority=float(rng.uniform(0, 5))))
        else:
            pick = [ids[i] for i in rng.integers(0, len(ids), size=3)]
            store.update_priorities(pick, rng.uniform(0, 5, size=3))
    root = store._tree.total()
    assert abs(root - store.brute_force_total()) / max(root, 1e-12) < 1e-6


def check_anneal() -> None:
    s = AnnealSchedule()
    assert abs(s.value(1500) - 0.5) < 1e-12
    assert s.value(3000) == 0.9 and s.value(99999) == 0.9


def check_segment_overlap() -> None:
    cutter = SegmentCutter(obs_dim=2, act_dim=2, episode_id=0, n_tail=5)
    cutter.begin(np.zeros(2))
    segs = []
    T = 1000
    for t in range(T):
        segs += cutter.push(np.full(2, float(t)), np.zeros(NUM_TERMS), t == T - 1, np.full(2, float(t + 1)))
    assert len(segs) == 199
    for seg in segs:
        assert seg.start_index % 5 == 0
        for off in range(seg.length):
            assert seg.actions[off, 0] == float(seg.start_index + off)


def check_policy_distribution() -> None:
    h = policy.GaussianHead(np.array([[0.3, -0.5]]), np.array([[0.1, -0.2]]))
    assert policy.kl_diag_gaussian(h, h)[0] < 1e-14
    p = policy.GaussianHead(np.array([[0.0]]), np.array([[0.0]]))
    q = policy.GaussianHead(np.array([[1.0]]), np.array([[0.0]]))
    assert abs(policy.kl_diag_gaussian(p, q)[0] - 0.5) < 1e-12
    grid = np.tanh(np.linspace(-12, 12, 10_001))
    hb = policy.GaussianHead(np.full((grid.size, 1), 0.4), np.full((grid.size, 1), -0.3))
    lp = policy.log_prob_of_action(hb, grid[:, None])
    total = np.trapezoid(np.exp(lp), grid) if hasattr(np, "trapezoid") else np.trapz(np.exp(lp), grid)
    assert abs(total - 1.0) < 1e-4


def check_gradients() -> None:
    rng = np.random.default_rng(3)
    for trial in range(5):
        net = nn.build_mlp(4, 8, 3, rng, activation="elu" if trial % 2 else "relu")
        x = rng.standard_normal((3, 4)) + 0.2
        report = nn.grad_check(net, x, tolerance=1e-6, seed=trial)
        assert report.passed, f"gradient check failed: {report.worst}"


def check_mvrr_surgery() -> None:
    rng = np.random.default_rng(4)
    critic = sac.VectorCritic(nn.build_mlp(5, 8, NUM_TERMS, rng, activation="relu"))
    x = rng.standard_normal((4, 5))
    before, _ = critic.forward(x, want_tape=False)
    ext = sac.extend_reward_term(critic, 0.01, rng)
    after, _ = ext.forward(x, want_tape=False)
    assert np.array_equal(after[:, :NUM_TERMS], before)
    cut = sac.remove_reward_term(critic, 3)
    after_cut, _ = cut.forward(x, want_tape=False)
    assert np.array_equal(after_cut, np.delete(before, 3, axis=1))


def check_distill_clone() -> None:
    rng = np.random.default_rng(5)
    teacher = nn.build_mlp(6, 8, 4, rng, activation="elu")
    clone = distill.clone_actor_into_student(teacher, field_dim=12)
    obs = rng.standard_normal((4, 6))
    field = rng.standard_normal((4, 12))
    t_out, _ = nn.forward(teacher, obs, want_tape=False)
    s_out, _ = nn.forward(clone, np.concatenate([obs, field], axis=1), want_tape=False)
    assert np.array_equal(t_out, s_out)


ALL_CHECKS = [
    ("rescaling round trip", check_rescaling),
    ("segment priority mix", check_segment_priority),
    ("target achieve bonus table", check_target_achieve_bonus),
    ("n-step target oracle", check_n_step_targets),
    ("sum tree vs brute force", check_sum_tree),
    ("anneal schedule", check_anneal),
    ("segment overlap", check_segment_overlap),
    ("policy distribution", check_policy_distribution),
    ("gradient checks", check_gradients),
    ("reward-term surgery", check_mvrr_surgery),
    ("distillation clone", check_distill_clone),
]


def run_all(verbose: bool = True) -> bool:
    ok = True
    for name, fn in ALL_CHECKS:
        try:
            fn()
            status = "pass"
        except AssertionError as e:
            status, ok = f"FAIL ({e})", False
        except Exception as e:  # noqa: BLE001 - report, keep checking
            status, ok = f"ERROR ({type(e).__name__}: {e})", False
        if verbose:
            print(f"check {name:<28} {status}")
    return ok
