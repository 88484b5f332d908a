"""Sampler/learner pipeline, evaluation, checkpoints and metrics.

Several samplers roll episodes on private environment copies and append
prioritized segments to the shared store; a single learner samples
batches, applies the actor/critic/temperature updates, repriorizes, and
periodically publishes an immutable policy snapshot that the samplers
pick up.  The learner is throttled so that
    learner_steps <= replay_ratio * segments_appended / num_samplers.

Seeds: sampler i rolls episode k with seed
    seed * 10_000_000 + (i + 1) * 1_000_000 + k
and evaluation episode j uses seed * 10_000_000 + 999_000_000 + j, so a
run is fully reproducible from (seed, num_samplers).

``single_thread=True`` interleaves samplers and learner deterministically
(bit-identical checkpoints across runs); the threaded mode shares only
the store (linearizable operations) and the snapshot hub (atomic swap).
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn, policy, sac
from .config import TrainConfig, config_to_text
from .env import OBS_STUDENT_DIM, OBS_TEACHER_DIM, PointMassEnv, StepResult
from .errors import ConfigError, FieldsacError, NumericFault
from .replay import AnnealSchedule, PrioritizedStore, SegmentCutter
from .rewards import R_ENTROPY, EnvRewardConfig, TERM_NAMES
from .sac import CriticEnsemble, SacHyper, ScalarAdam, VectorCritic

ACT_DIM = 2
SINK_REACH_RADIUS = 0.5


def obs_dim_for_stage(stage: str) -> int:
    return OBS_TEACHER_DIM if stage == "pretrain" else OBS_STUDENT_DIM


def pick_obs(sr: StepResult, obs_mode: str) -> np.ndarray:
    return sr.obs_teacher if obs_mode == "teacher" else sr.obs_student


# ---------------------------------------------------------------------------
# Policy snapshots


def _freeze(net: nn.Network) -> nn.Network:
    for blk in net.param_blocks():
        blk.w.flags.writeable = False
        blk.b.flags.writeable = False
    return net


@dataclass(frozen=True)
class PolicySnapshot:
    version: int
    actor: nn.Network  # read-only copy
    alpha: float


class PolicySnapshotHub:
    """Atomic publish/fetch of read-only policy copies; versions only grow."""

    def __init__(self):
        self._lock = threading.Lock()
        self._snap: PolicySnapshot | None = None

    def publish(self, actor: nn.Network, alpha: float) -> int:
        frozen = _freeze(actor.copy())
        with self._lock:
            version = (self._snap.version if self._snap else 0) + 1
            self._snap = PolicySnapshot(version, frozen, float(alpha))
            return version

    def current(self) -> PolicySnapshot:
        with self._lock:
            if self._snap is None:
                raise ConfigError("no policy snapshot published yet")
            return self._snap

    @property
    def version(self) -> int:
        with self._lock:
            return self._snap.version if self._snap else 0


# ---------------------------------------------------------------------------
# Sampler


class Sampler:
    """Owns one environment; streams prioritized segments into the store."""

    def __init__(self, sid: int, cfg: TrainConfig, store: PrioritizedStore, hub: PolicySnapshotHub, segment_cond: threading.Condition | None = None):
        self.sid = sid
        self.cfg = cfg
        self.store = store
        self.hub = hub
        self.segment_cond = segment_cond
        self.env = PointMassEnv(
            reward_cfg=EnvRewardConfig(w_vel=cfg.effective_env_w_vel),
            directional_pvb=cfg.directional_pvb,
            horizon=cfg.horizon,
        )
        self.obs_dim = obs_dim_for_stage(cfg.stage)
        self.rng = np.random.default_rng(cfg.seed * 7919 + 13 * (sid + 1))
        self.episode_index = 0
        self.env_steps = 0
        self.segments_emitted = 0
        self.env_faults = 0
        self.snapshot = hub.current()
        self._cutter: SegmentCutter | None = None
        self._last_obs: np.ndarray | None = None
        self.emitted_keys: list[tuple[int, int]] = []  # (episode_id, start_index) audit trail

    def _episode_seed(self) -> int:
        return self.cfg.seed * 10_000_000 + (self.sid + 1) * 1_000_000 + self.episode_index

    def _begin_episode(self) -> None:
        seed = self._episode_seed()
        sr = self.env.reset(seed, self.cfg.difficulty)
        self._cutter = SegmentCutter(self.obs_dim, ACT_DIM, episode_id=seed, n_tail=self.cfg.n_step)
        self._last_obs = pick_obs(sr, self.cfg.obs_mode)
        self._cutter.begin(self._last_obs)

    def tick(self) -> int:
        """Advance one environment step; returns segments appended."""
        try:
            if self.env.done or self._cutter is None:
                self.episode_index += 1
                self._begin_episode()
            if self.hub.version != self.snapshot.version:
                new = self.hub.current()
                assert new.version >= self.snapshot.version
                self.snapshot = new
            out, _ = nn.forward(self.snapshot.actor, self._last_obs[None, :], want_tape=False)
            head, _ = policy.head_from_output(out)
            sampled = policy.sample(head, self.rng.standard_normal(head.mu.shape))
            action = sampled.action[0]
            sr = self.env.step(action)
            self.env_steps += 1
            reward_vec = sr.reward.as_array()
            reward_vec[R_ENTROPY] = policy.entropy_bonus(sampled, self.snapshot.alpha)[0]
            next_obs = pick_obs(sr, self.cfg.obs_mode)
            segments = self._cutter.push(action, reward_vec, sr.done, next_obs)
            self._last_obs = next_obs
            appended = 0
            for seg in segments:
                self.store.append(seg, priority=self.store.max_priority())
                self.emitted_keys.append((seg.episode_id, seg.start_index))
                appended += 1
        except FieldsacError:
            # discard the broken episode; the next tick restarts with a
            # fresh seed derived from the master seed
            self.env_faults += 1
            self._cutter = None
            self.env._done = True
            return 0
        if appended:
            self.segments_emitted += appended
            if self.segment_cond is not None:
                with self.segment_cond:
                    self.segment_cond.notify_all()
        return appended


# ---------------------------------------------------------------------------
# Learner


class Learner:
    """Owns every mutable parameter; one step is a critical section."""

    def __init__(
        self,
        cfg: TrainConfig,
        store: PrioritizedStore,
        hub: PolicySnapshotHub,
        actor: nn.Network,
        ensemble: CriticEnsemble,
        log_alpha: ScalarAdam | None = None,
    ):
        self.cfg = cfg
        self.store = store
        self.hub = hub
        self.actor = actor
        self.ensemble = ensemble
        self.log_alpha = log_alpha or ScalarAdam(value=float(np.log(cfg.init_alpha)))
        self.hyper = SacHyper(
            weights=cfg.weights,
            gamma=cfg.gamma,
            n_step=cfg.n_step,
            rescale_eps=cfg.rescale_eps,
            use_rescale=cfg.use_rescale,
            target_entropy=cfg.target_entropy,
            tau=cfg.tau,
        )
        self.anneal = AnnealSchedule(cfg.anneal_start, cfg.anneal_end, cfg.anneal_steps)
        self.rng = np.random.default_rng(cfg.seed * 104729 + 7)
        self.steps = 0
        self.last_critic_loss = float("nan")
        self.last_actor_loss = float("nan")
        self.last_alpha_loss = float("nan")
        self.max_throttle_excess = -float("inf")
        hub.publish(self.actor, self.alpha)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.value))

    def allowed_steps(self, segments_appended: int) -> int:
        return int(self.cfg.replay_ratio * segments_appended / self.cfg.num_samplers)

    def throttle_ok(self) -> bool:
        return self.steps < self.allowed_steps(self.store.appended_total)

    def step(self) -> None:
        t = self.steps
        exp = self.anneal.value(t)
        self.store.set_exponents(exp, exp)
        batch = self.store.sample(self.cfg.batch, self.rng)

        res = sac.critic_loss(batch, self.ensemble, self.actor, self.hyper, rng=self.rng, eta=self.cfg.eta)
        nn.adam_step_net(self.ensemble.q1.net, self.cfg.lr_critic)
        nn.adam_step_net(self.ensemble.q2.net, self.cfg.lr_critic)

        L = batch.actions.shape[1]
        valid = np.arange(L)[None, :] < batch.lengths[:, None]
        obs_rows = batch.obs[:, :L, :][valid]
        aloss, log_probs = sac.actor_loss(obs_rows, self.ensemble, self.actor, self.alpha, self.hyper, rng=self.rng)
        nn.adam_step_net(self.actor, self.cfg.lr_actor)

        tloss, tgrad = sac.temperature_loss(log_probs, self.log_alpha.value, self.cfg.target_entropy)
        self.log_alpha.step(tgrad, self.cfg.lr_alpha)

        self.ensemble.soft_update(self.cfg.tau)
        self.store.update_priorities(batch.ids, res.segment_priorities)

        self.steps += 1
        self.last_critic_loss = res.loss
        self.last_actor_loss = aloss
        self.last_alpha_loss = tloss
        excess = self.steps - self.cfg.replay_ratio * self.store.appended_total / self.cfg.num_samplers
        self.max_throttle_excess = max(self.max_throttle_excess, excess)
        if self.steps % self.cfg.publish_every == 0:
            self.hub.publish(self.actor, self.alpha)


# ---------------------------------------------------------------------------
# Checkpoints


_CKPT_NETS = ("actor", "q1", "q2", "q1_target", "q2_target")


@dataclass
class CheckpointBundle:
    actor: nn.Network
    ensemble: CriticEnsemble
    log_alpha: ScalarAdam
    stage: str
    learner_steps: int
    env_steps: int
    config_text: str


def save_checkpoint(
    directory: str,
    actor: nn.Network,
    ensemble: CriticEnsemble,
    log_alpha: ScalarAdam,
    cfg: TrainConfig,
    learner_steps: int = 0,
    env_steps: int = 0,
) -> str:
    os.makedirs(directory, exist_ok=True)
    nets = dict(zip(_CKPT_NETS, (actor, ensemble.q1.net, ensemble.q2.net, ensemble.q1_target.net, ensemble.q2_target.net)))
    for name, net in nets.items():
        nn.save_network(net, os.path.join(directory, name), with_optimizer=True)
    meta = [
        "format = fieldsac-checkpoint-v1",
        f"stage = {cfg.stage}",
        f"log_alpha = {float(log_alpha.value).hex()}",
        f"alpha_m = {float(log_alpha.m).hex()}",
        f"alpha_v = {float(log_alpha.v).hex()}",
        f"alpha_t = {log_alpha.t}",
        f"learner_steps = {learner_steps}",
        f"env_steps = {env_steps}",
    ]
    with open(os.path.join(directory, "meta.txt"), "w") as f:
        f.write("\n".join(meta) + "\n")
    with open(os.path.join(directory, "config.txt"), "w") as f:
        f.write(config_to_text(cfg))
    return directory


def load_checkpoint(directory: str) -> CheckpointBundle:
    meta_path = os.path.join(directory, "meta.txt")
    if not os.path.exists(meta_path):
        raise ConfigError(f"no checkpoint at {directory} (expected {meta_path})")
    kv = {}
    with open(meta_path) as f:
        for line in f:
            if "=" in line:
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
    nets = {name: nn.load_network(os.path.join(directory, name)) for name in _CKPT_NETS}
    ensemble = CriticEnsemble(
        VectorCritic(nets["q1"]),
        VectorCritic(nets["q2"]),
        VectorCritic(nets["q1_target"]),
        VectorCritic(nets["q2_target"]),
    )
    log_alpha = ScalarAdam(
        value=float.fromhex(kv["log_alpha"]),
        m=float.fromhex(kv["alpha_m"]),
        v=float.fromhex(kv["alpha_v"]),
        t=int(kv["alpha_t"]),
    )
    config_text = ""
    cfg_path = os.path.join(directory, "config.txt")
    if os.path.exists(cfg_path):
        config_text = open(cfg_path).read()
    return CheckpointBundle(
        actor=nets["actor"],
        ensemble=ensemble,
        log_alpha=log_alpha,
        stage=kv.get("stage", "pretrain"),
        learner_steps=int(kv.get("learner_steps", 0)),
        env_steps=int(kv.get("env_steps", 0)),
        config_text=config_text,
    )


def checkpoint_fingerprint(directory: str) -> bytes:
    """Byte-exact digest material for reproducibility checks."""
    parts = []
    for name in _CKPT_NETS:
        with open(os.path.join(directory, name + ".bin"), "rb") as f:
            parts.append(f.read())
    with open(os.path.join(directory, "meta.txt"), "rb") as f:
        parts.append(f.read())
    return b"".join(parts)


# ---------------------------------------------------------------------------
# Evaluation


class NetPolicy:
    """Deterministic policy: action = tanh(mu(s))."""

    def __init__(self, actor: nn.Network, obs_mode: str):
        self.actor = actor
        self.obs_mode = obs_mode

    def __call__(self, sr: StepResult) -> np.ndarray:
        obs = pick_obs(sr, self.obs_mode)
        out, _ = nn.forward(self.actor, obs[None, :], want_tape=False)
        head, _ = policy.head_from_output(out)
        return policy.deterministic_action(head)[0]


class SinkSeeker:
    """Scripted reference controller: accelerate along the target field.

    Tracks v_tgt with a proportional term plus the feed-forward needed to
    hold a velocity against drag; parks at the sink as the field decays.
    """

    def __init__(self, kp: float = 2.0, kf: float = 0.25):
        self.kp = kp
        self.kf = kf

    def __call__(self, sr: StepResult) -> np.ndarray:
        v_tgt, v = sr.info["v_tgt"], sr.info["v"]
        return np.clip(self.kp * (v_tgt - v) + self.kf * v_tgt, -1.0, 1.0)


@dataclass
class EvalReport:
    episodes: int
    mean_env_reward: float
    std_env_reward: float
    term_sums: dict
    sink_reach_fraction: float
    mean_speed: float
    direction: float  # radians of the summed displacement
    per_episode_env_reward: list = field(default_factory=list)
    per_episode_final_dist: list = field(default_factory=list)
    per_episode_displacement: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"episodes            {self.episodes}",
            f"env reward          {self.mean_env_reward:.4f} +- {self.std_env_reward:.4f}",
            f"mean speed          {self.mean_speed:.4f} m/s",
            f"sink reach fraction {self.sink_reach_fraction:.2f}",
            f"direction           {np.degrees(self.direction):.1f} deg",
        ]
        out += [f"sum {name:<10} {val:.4f}" for name, val in self.term_sums.items()]
        return out


def evaluate(
    policy_fn,
    difficulty: int,
    episodes: int = 5,
    seed: int = 0,
    horizon: int = 1000,
    reward_cfg: EnvRewardConfig | None = None,
    directional_pvb: bool = False,
    record_dir: str | None = None,
) -> EvalReport:
    """Roll deterministic episodes on fresh environments and aggregate."""
    env = PointMassEnv(reward_cfg=reward_cfg, directional_pvb=directional_pvb, horizon=horizon, record_dir=record_dir)
    totals, finals, disps, speeds = [], [], [], []
    term_totals = np.zeros(len(TERM_NAMES))
    for ep in range(episodes):
        sr = env.reset(seed * 10_000_000 + 999_000_000 + ep, difficulty)
        ep_terms = np.zeros(len(TERM_NAMES))
        ep_speeds = []
        while not sr.done:
            sr = env.step(policy_fn(sr))
            ep_terms += sr.reward.as_array()
            ep_speeds.append(sr.info["speed"])
        totals.append(ep_terms[0])
        term_totals += ep_terms
        finals.append(sr.info["dist_to_sink"])
        disps.append(sr.info["p"].copy())
        speeds.append(float(np.mean(ep_speeds)))
    totals = np.asarray(totals)
    disp_sum = np.sum(disps, axis=0)
    return EvalReport(
        episodes=episodes,
        mean_env_reward=float(totals.mean()),
        std_env_reward=float(totals.std()),
        term_sums={name: float(v / episodes) for name, v in zip(TERM_NAMES, term_totals)},
        sink_reach_fraction=float(np.mean([d <= SINK_REACH_RADIUS for d in finals])),
        mean_speed=float(np.mean(speeds)),
        direction=float(np.arctan2(disp_sum[1], disp_sum[0])),
        per_episode_env_reward=[float(x) for x in totals],
        per_episode_final_dist=[float(x) for x in finals],
        per_episode_displacement=[d.tolist() for d in disps],
    )


# ---------------------------------------------------------------------------
# Metrics


METRICS_HEADER = (
    ["epoch", "wall_time_s", "env_steps", "learner_steps", "segments", "store_size"]
    + ["eval_env_reward_mean", "eval_env_reward_std", "eval_mean_speed", "eval_sink_fraction", "eval_direction_rad"]
    + [f"eval_sum_{name}" for name in TERM_NAMES]
    + ["critic_loss", "actor_loss", "alpha_loss", "alpha", "priority_mean", "priority_max"]
)


class MetricsWriter:
    """Append-only CSV, one row per epoch, lossless float round-trip."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as f:
            f.write(",".join(METRICS_HEADER) + "\n")

    def write(self, row: dict) -> None:
        missing = set(METRICS_HEADER) - set(row)
        if missing:
            raise ConfigError(f"metrics row is missing {sorted(missing)}")
        cells = [repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in METRICS_HEADER]
        with open(self.path, "a") as f:
            f.write(",".join(cells) + "\n")


def read_metrics(path: str) -> list[dict]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append({k: float(v) for k, v in zip(header, cells)})
    return rows


# ---------------------------------------------------------------------------
# Stage driver


@dataclass
class TrainResult:
    checkpoint_dir: str
    replay_dir: str | None
    metrics_path: str
    final_eval: EvalReport
    env_steps: int
    learner_steps: int
    stopped_early: bool
    samplers: list = field(default_factory=list, repr=False)
    learner: Learner | None = field(default=None, repr=False)


def build_learner_nets(cfg: TrainConfig, rng: np.random.Generator) -> tuple[nn.Network, CriticEnsemble]:
    obs_dim = obs_dim_for_stage(cfg.stage)
    actor = nn.build_mlp(obs_dim, cfg.hidden, 2 * ACT_DIM, rng, activation="elu", out_scale=0.01)
    ensemble = CriticEnsemble.build(obs_dim, ACT_DIM, cfg.hidden, rng, tau=cfg.tau)
    return actor, ensemble


def _stop_reached(cfg: TrainConfig, report: EvalReport) -> bool:
    if cfg.stop_at_eval_speed > 0.0 and report.mean_speed >= cfg.stop_at_eval_speed:
        return True
    if cfg.stop_at_sink_fraction > 0.0 and report.sink_reach_fraction >= cfg.stop_at_sink_fraction:
        return True
    return False


def train_stage(
    cfg: TrainConfig,
    out_dir: str,
    resume_actor: nn.Network | None = None,
    resume_ensemble: CriticEnsemble | None = None,
    save_replay: bool | None = None,
) -> TrainResult:
    """Run one curriculum stage end to end and save its artifacts.

    Pretraining starts from fresh networks; finetuning passes the
    distilled student networks in.  The replay store always starts empty.
    On a numeric fault the current state is checkpointed under
    ``<out_dir>/faulted`` before the fault propagates.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if resume_actor is None:
        actor, ensemble = build_learner_nets(cfg, rng)
    else:
        actor = resume_actor
        ensemble = resume_ensemble
        if actor.in_dim != obs_dim_for_stage(cfg.stage):
            raise ConfigError(
                f"resumed actor expects {actor.in_dim} inputs but stage {cfg.stage!r} provides {obs_dim_for_stage(cfg.stage)}"
            )
    store = PrioritizedStore(
        capacity=cfg.capacity,
        alpha=cfg.anneal_start,
        beta=cfg.anneal_start,
        eta=cfg.eta,
        n_tail=cfg.n_step,
    )
    assert len(store) == 0  # every stage starts from an empty replay
    hub = PolicySnapshotHub()
    learner = Learner(cfg, store, hub, actor, ensemble)
    segment_cond = threading.Condition()
    samplers = [Sampler(i, cfg, store, hub, segment_cond) for i in range(cfg.num_samplers)]
    metrics = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    reward_cfg = EnvRewardConfig(w_vel=cfg.effective_env_w_vel)
    t0 = time.time()
    epoch = 0
    stopped = False
    last_report: EvalReport | None = None

    def run_eval() -> EvalReport:
        return evaluate(
            NetPolicy(learner.actor, cfg.obs_mode),
            difficulty=cfg.difficulty,
            episodes=cfg.eval_episodes,
            seed=cfg.seed,
            horizon=cfg.horizon,
            reward_cfg=reward_cfg,
            directional_pvb=cfg.directional_pvb,
        )

    def write_epoch_row(report: EvalReport, env_steps: int) -> None:
        raw = store._raw_p[: len(store)]
        row = {
            "epoch": epoch,
            "wall_time_s": time.time() - t0,
            "env_steps": env_steps,
            "learner_steps": learner.steps,
            "segments": store.appended_total,
            "store_size": len(store),
            "eval_env_reward_mean": report.mean_env_reward,
            "eval_env_reward_std": report.std_env_reward,
            "eval_mean_speed": report.mean_speed,
            "eval_sink_fraction": report.sink_reach_fraction,
            "eval_direction_rad": report.direction,
            "critic_loss": learner.last_critic_loss,
            "actor_loss": learner.last_actor_loss,
            "alpha_loss": learner.last_alpha_loss,
            "alpha": learner.alpha,
            "priority_mean": float(raw.mean()) if raw.size else 0.0,
            "priority_max": float(raw.max()) if raw.size else 0.0,
        }
        for name, val in report.term_sums.items():
            row[f"eval_sum_{name}"] = val
        metrics.write(row)

    def total_env_steps() -> int:
        return sum(s.env_steps for s in samplers)

    try:
        if cfg.single_thread:
            next_epoch = cfg.epoch_env_steps
            while total_env_steps() < cfg.total_env_steps and not stopped:
                for s in samplers:
                    s.tick()
                while learner.throttle_ok() and len(store) >= cfg.min_segments_to_learn:
                    learner.step()
                if total_env_steps() >= next_epoch:
                    epoch += 1
                    next_epoch += cfg.epoch_env_steps
                    last_report = run_eval()
                    write_epoch_row(last_report, total_env_steps())
                    stopped = _stop_reached(cfg, last_report)
        else:
            stop_event = threading.Event()

            def sampler_loop(s: Sampler) -> None:
                while not stop_event.is_set() and total_env_steps() < cfg.total_env_steps:
                    s.tick()

            threads = [threading.Thread(target=sampler_loop, args=(s,), daemon=True) for s in samplers]
            for t in threads:
                t.start()
            next_epoch = cfg.epoch_env_steps
            while not stopped:
                steps_now = total_env_steps()
                if learner.throttle_ok() and len(store) >= cfg.min_segments_to_learn:
                    learner.step()
                else:
                    if steps_now >= cfg.total_env_steps:
                        break
                    with segment_cond:
                        segment_cond.wait(timeout=0.05)
                if steps_now >= next_epoch:
                    epoch += 1
                    next_epoch += cfg.epoch_env_steps
                    last_report = run_eval()
                    write_epoch_row(last_report, steps_now)
                    stopped = _stop_reached(cfg, last_report)
            stop_event.set()
            for t in threads:
                t.join(timeout=10.0)
    except NumericFault:
        save_checkpoint(os.path.join(out_dir, "faulted"), learner.actor, ensemble, learner.log_alpha, cfg, learner.steps, total_env_steps())
        raise

    if last_report is None:
        last_report = run_eval()
        epoch += 1
        write_epoch_row(last_report, total_env_steps())

    ckpt_dir = save_checkpoint(os.path.join(out_dir, "checkpoint"), learner.actor, ensemble, learner.log_alpha, cfg, learner.steps, total_env_steps())
    replay_dir = None
    if save_replay if save_replay is not None else (cfg.stage == "pretrain"):
        replay_dir = os.path.join(out_dir, "replay")
        store.save(replay_dir)
    return TrainResult(
        checkpoint_dir=ckpt_dir,
        replay_dir=replay_dir,
        metrics_path=metrics.path,
        final_eval=last_report,
        env_steps=total_env_steps(),
        learner_steps=learner.steps,
        stopped_early=stopped,
        samplers=samplers,
        learner=learner,
    )


# ---------------------------------------------------------------------------
# Distillation stage driver


@dataclass
class DistillStageResult:
    checkpoint_dir: str
    metrics_path: str
    report: "distill_mod.DistillReport"
    teacher_unchanged: bool


def run_distill_stage(
    teacher_ckpt_dir: str,
    replay_dir: str,
    out_dir: str,
    dcfg: "distill_mod.DistillConfig",
    holdout_fraction: float = 0.1,
    kl_threshold: float = 0.05,
    action_threshold: float = 0.05,
) -> DistillStageResult:
    """Distill a pretrained teacher into field-aware students.

    Loads the teacher checkpoint and the saved replay, trains the student
    actor against the teacher policy and one student critic per twin, and
    saves a finetune-ready student checkpoint (targets start as copies of
    the online students, temperature starts fresh).
    """
    from . import distill as distill_mod

    bundle = load_checkpoint(teacher_ckpt_dir)
    store = PrioritizedStore.load(replay_dir)
    states = store.all_observation_rows()
    rng = np.random.default_rng(dcfg.seed)
    perm = rng.permutation(states.shape[0])
    n_hold = max(1, int(holdout_fraction * states.shape[0]))
    holdout, train_states = states[perm[:n_hold]], states[perm[n_hold:]]

    fp_before = distill_mod.network_fingerprint(bundle.actor) + distill_mod.network_fingerprint(bundle.ensemble.q1.net) + distill_mod.network_fingerprint(bundle.ensemble.q2.net)

    from .config import load_config

    stage_cfg = load_config(overrides={"stage": bundle.stage})
    weights = stage_cfg.weights
    os.makedirs(out_dir, exist_ok=True)
    student_actor, student_q1, hist1 = distill_mod.run_distillation(
        bundle.actor, bundle.ensemble.q1, train_states, weights, dcfg,
        metrics_path=os.path.join(out_dir, "distill_metrics.csv"),
    )
    # the second twin reuses the distilled actor and only fits its critic
    import dataclasses as _dc

    dcfg2 = _dc.replace(dcfg, seed=dcfg.seed + 1)
    rng2 = np.random.default_rng(dcfg2.seed)
    student_q2 = distill_mod.build_student_critic(
        bundle.ensemble.q2, bundle.actor.in_dim, bundle.actor.out_dim // 2, dcfg2.field_dim, dcfg2.student_hidden, rng2
    )
    for step in range(len(hist1)):
        idx = rng2.integers(0, train_states.shape[0], size=dcfg2.batch)
        distill_mod.distill_critic_only(student_q2, bundle.actor, bundle.ensemble.q2, student_actor, train_states[idx], rng2, dcfg2, weights, step_index=step)

    report = distill_mod.verify_distillation(student_actor, bundle.actor, holdout, dcfg.field_dim, kl_threshold, action_threshold)
    fp_after = distill_mod.network_fingerprint(bundle.actor) + distill_mod.network_fingerprint(bundle.ensemble.q1.net) + distill_mod.network_fingerprint(bundle.ensemble.q2.net)

    ensemble = CriticEnsemble(student_q1, student_q2, student_q1.copy(), student_q2.copy())
    cfg = load_config(overrides={"stage": "finetune"})
    ckpt_dir = save_checkpoint(os.path.join(out_dir, "checkpoint"), student_actor, ensemble, ScalarAdam(value=float(np.log(cfg.init_alpha))), cfg)
    with open(os.path.join(out_dir, "verify.txt"), "w") as f:
        f.write(
            f"mean_kl = {report.mean_kl!r}\nmax_action_deviation = {report.max_action_deviation!r}\n"
            f"passed = {report.passed}\nteacher_unchanged = {fp_before == fp_after}\n"
        )
    return DistillStageResult(
        checkpoint_dir=ckpt_dir,
        metrics_path=os.path.join(out_dir, "distill_metrics.csv"),
        report=report,
        teacher_unchanged=fp_before == fp_after,
    )
