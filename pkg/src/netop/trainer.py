"""Data collection, the critical-loss objective, and the training schedule.

Rewards are immediate (+1 correct, -1 wrong) and the regression targets
are fixed at 0.7 / 0.3, so no bootstrapping or target network is needed:
each replay sample supervises the seven quantile scores of the action it
took.  Loss elements are split into critical and non-critical:

  reward +1: an element is non-critical if its score >= 0.7 or the
             action's mean score >= 0.56
  reward -1: an element is non-critical if its score <= 0.3 or the
             action's mean score <= 0.44

everything else is critical, i.e. still capable of flipping a greedy
decision.  Training runs in two phases: phase 1 weights all elements
equally; phase 2 multiplies critical elements by `critical_weight` and
stops once held-out accuracy reaches 100% (confirmed on a larger probe)
or the step budget runs out.

Phase 2 starts from a freshly collected buffer and its own seed streams,
so resuming from the phase-boundary checkpoint replays the exact same
trajectory as an uninterrupted run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import codec, env, neural
from .env import EpisodeStream
from .netsim import ConfigError, SimConfig
from .seeding import make_rng, seed_pairs, spawn_seed

METRICS_SCHEMA = "netop-metrics-1"

N_QUANTILES = 7
# Quantile midpoints: (2k - 1) / 14 for k = 1..7.
TAU = (2.0 * np.arange(1, N_QUANTILES + 1) - 1.0) / (2.0 * N_QUANTILES)

# Seed-stream labels (spawn keys off the master seed). Phase 2 gets its own
# streams so a resumed run and an uninterrupted run are bit-identical.
_S_INIT = 0
_S_P1_ENV, _S_P1_EXPLORE, _S_P1_REPLAY = 1, 2, 3
_S_P2_ENV, _S_P2_EXPLORE, _S_P2_REPLAY = 4, 5, 6
_S_VAL, _S_CONFIRM = 7, 8


@dataclass(frozen=True)
class TrainConfig:
    sim: SimConfig = SimConfig()
    seed: int = 0
    hidden_dims: tuple[int, ...] = (128, 128)
    target_correct: float = 0.7
    target_wrong: float = 0.3
    mean_threshold_correct: float = 0.56
    mean_threshold_wrong: float = 0.44
    critical_weight: float = 10.0
    huber_kappa: float = 1.0
    loss_kind: str = "quantile-huber"  # or "squared"
    learning_rate: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 50_000
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_steps: int = 20_000
    warmup_steps: int = 1_000
    phase1_gradient_steps: int = 50_000
    phase2_gradient_steps: int = 20_000
    phase2_refill_steps: int = 4_000
    val_interval: int = 1_000
    val_networks: int = 50
    val_confirm_networks: int = 200
    log_interval: int = 100

    def validate(self) -> None:
        chain = (self.target_wrong, self.mean_threshold_wrong, self.mean_threshold_correct, self.target_correct)
        if not (0.0 < chain[0] < chain[1] < chain[2] < chain[3] < 1.0):
            raise ConfigError(
                "targets/thresholds must satisfy 0 < wrong-target < wrong-mean < correct-mean < correct-target < 1, "
                f"got {chain}"
            )
        if self.critical_weight < 1.0:
            raise ConfigError(f"critical_weight {self.critical_weight} must be >= 1")
        if self.loss_kind not in ("quantile-huber", "squared"):
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}")
        if self.huber_kappa <= 0:
            raise ConfigError("huber_kappa must be positive")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("need buffer_capacity >= batch_size >= 1")
        if not 0.0 <= self.epsilon_final <= self.epsilon_start <= 1.0:
            raise ConfigError("epsilon schedule must fall within [0, 1] and not increase")
        for name in ("epsilon_decay_steps", "warmup_steps", "phase1_gradient_steps",
                     "phase2_gradient_steps", "phase2_refill_steps", "val_interval",
                     "val_networks", "val_confirm_networks", "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        self.sim.validate()

    @property
    def dims(self) -> tuple[int, ...]:
        return (codec.OBS_DIM, *self.hidden_dims, codec.N_ACTIONS * N_QUANTILES)


def small_pool_train_config(seed: int = 0) -> TrainConfig:
    """A configuration that trains to 100% accuracy in a few minutes on a CPU.

    Uses the reduced token pools (8 subnets, 8 addresses, 4-6 devices);
    budgets were tuned empirically for that scale.
    """
    from .netsim import SMALL_POOL_CONFIG

    return TrainConfig(
        sim=SMALL_POOL_CONFIG,
        seed=seed,
        epsilon_decay_steps=12_000,
        warmup_steps=2_000,
        phase1_gradient_steps=14_000,
        phase2_gradient_steps=20_000,
        phase2_refill_steps=4_000,
        val_interval=500,
        val_networks=50,
        val_confirm_networks=200,
    )


def epsilon_at(cfg: TrainConfig, collection_step: int) -> float:
    """Linear decay from epsilon_start to epsilon_final, then flat."""
    frac = min(max(collection_step, 0) / cfg.epsilon_decay_steps, 1.0)
    return cfg.epsilon_start + frac * (cfg.epsilon_final - cfg.epsilon_start)


# --- loss pieces ----------------------------------------------------------


def target_for(reward: int, correct: float = 0.7, wrong: float = 0.3) -> float:
    """+1 maps to the correct-instruction target, -1 to the wrong one."""
    if reward == 1:
        return correct
    if reward == -1:
        return wrong
    raise ValueError(f"reward must be +1 or -1, got {reward}")


def _critical_mask(scores: np.ndarray, rewards: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """True where a loss element is critical. scores: (B, 7), rewards: (B,)."""
    means = scores.mean(axis=-1, keepdims=True)
    positive = (rewards > 0)[:, None]
    safe_pos = (scores >= cfg.target_correct) | (means >= cfg.mean_threshold_correct)
    safe_neg = (scores <= cfg.target_wrong) | (means <= cfg.mean_threshold_wrong)
    return ~np.where(positive, safe_pos, safe_neg)


def classify_losses(scores: np.ndarray, reward: int, cfg: TrainConfig = TrainConfig()) -> np.ndarray:
    """Critical flags for the 7 scores of one taken action."""
    s = np.asarray(scores, dtype=np.float64).reshape(1, -1)
    if reward not in (1, -1):
        raise ValueError(f"reward must be +1 or -1, got {reward}")
    return _critical_mask(s, np.array([reward]), cfg)[0]


def quantile_huber_loss(score, target, tau, kappa: float = 1.0):
    """Asymmetric Huber: |tau - 1[u < 0]| * huber(u) with u = target - score."""
    u = np.asarray(target, dtype=np.float64) - np.asarray(score, dtype=np.float64)
    au = np.abs(u)
    huber = np.where(au <= kappa, 0.5 * u * u, kappa * (au - 0.5 * kappa))
    return np.abs(tau - (u < 0.0)) * huber


def _quantile_huber_grad(score, target, tau, kappa: float):
    """d loss / d score (piecewise; the tau weight is constant per branch)."""
    u = np.asarray(target, dtype=np.float64) - np.asarray(score, dtype=np.float64)
    return np.abs(tau - (u < 0.0)) * -np.clip(u, -kappa, kappa)


@dataclass(frozen=True)
class BatchStats:
    step: int
    phase: int
    mean_loss: float
    critical: int
    non_critical: int
    epsilon: float


def batch_loss(
    taken_scores: np.ndarray,
    rewards: np.ndarray,
    cfg: TrainConfig,
    critical_weight: float | None = None,
) -> tuple[float, BatchStats, np.ndarray]:
    """Weighted per-element loss over the taken actions' score rows.

    Returns (total, stats, d_total/d_scores).  total averages over
    batch x 7 elements with critical elements multiplied by the weight;
    gradients flow only through these rows, never other actions.
    """
    scores = np.asarray(taken_scores, dtype=np.float64)
    rewards = np.asarray(rewards)
    if scores.ndim != 2 or scores.shape[1] != N_QUANTILES:
        raise ValueError(f"expected taken scores of shape (batch, {N_QUANTILES}), got {scores.shape}")
    if scores.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if not np.all(np.isin(rewards, (1, -1))):
        raise ValueError("rewards must be +1 or -1")
    weight = cfg.critical_weight if critical_weight is None else critical_weight
    targets = np.where(rewards > 0, cfg.target_correct, cfg.target_wrong)[:, None]
    tau = TAU[None, :]
    if cfg.loss_kind == "quantile-huber":
        base = quantile_huber_loss(scores, targets, tau, cfg.huber_kappa)
        dbase = _quantile_huber_grad(scores, targets, tau, cfg.huber_kappa)
    else:
        base = (scores - targets) ** 2
        dbase = 2.0 * (scores - targets)
    critical = _critical_mask(scores, rewards, cfg)
    w = np.where(critical, weight, 1.0)
    denom = scores.size
    total = float((w * base).sum() / denom)
    dscores = w * dbase / denom
    stats = BatchStats(
        step=0,
        phase=0,
        mean_loss=total,
        critical=int(critical.sum()),
        non_critical=int((~critical).sum()),
        epsilon=0.0,
    )
    return total, stats, dscores


# --- replay buffer and collection ----------------------------------------


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform with-replacement sampling."""

    def __init__(self, capacity: int, obs_dim: int = codec.OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dim), dtype=np.float64)
        self._next_obs = np.zeros((capacity, obs_dim), dtype=np.float64)
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.int64)
        self._write = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, observation, action: int, reward: int, next_observation) -> None:
        i = self._write
        self._obs[i] = observation
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_obs[i] = next_observation
        self._write = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def add_sample(self, sample: env.ReplaySample) -> None:
        self.add(sample.observation, sample.action, sample.reward, sample.next_observation)

    def sample(self, batch_size: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return (
            self._obs[idx].copy(),
            self._actions[idx].copy(),
            self._rewards[idx].copy(),
            self._next_obs[idx].copy(),
        )


@dataclass(frozen=True)
class CollectStats:
    positives: int
    negatives: int


def collect(
    stream: EpisodeStream,
    model: neural.QuantileModel,
    epsilon: float,
    n_steps: int,
    buffer: ReplayBuffer,
    rng,
) -> CollectStats:
    """Run epsilon-greedy steps, storing every transition in the buffer."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    pos = neg = 0
    for _ in range(n_steps):
        obs = stream.obs
        if rng.random() < epsilon:
            action = int(rng.integers(0, codec.N_ACTIONS))
        else:
            action = neural.greedy_action(neural.score_grid(model, obs))
        result = stream.step(action)
        buffer.add(obs, action, result.reward, result.next_observation)
        if result.reward > 0:
            pos += 1
        else:
            neg += 1
    return CollectStats(positives=pos, negatives=neg)


# --- evaluation -----------------------------------------------------------


@dataclass(frozen=True)
class NetworkResult:
    design_seed: int
    fault_seed: int
    steps: int
    correct_steps: int
    assisted: bool
    repaired: bool
    wall_time_s: float


@dataclass(frozen=True)
class AccuracyReport:
    n_networks: int
    total_steps: int
    correct_steps: int
    sub_action_accuracy: float | None
    fully_repaired_fraction: float | None
    assisted_episodes: int
    mean_ops_per_network: float | None
    mean_wall_time_s: float | None
    p95_wall_time_s: float | None

    def to_dict(self) -> dict:
        return {
            "networks": self.n_networks,
            "total_steps": self.total_steps,
            "correct_steps": self.correct_steps,
            "sub_action_accuracy": self.sub_action_accuracy,
            "fully_repaired_fraction": self.fully_repaired_fraction,
            "assisted_episodes": self.assisted_episodes,
            "mean_ops_per_network": self.mean_ops_per_network,
            "mean_wall_time_s": self.mean_wall_time_s,
            "p95_wall_time_s": self.p95_wall_time_s,
        }


def evaluate_networks(
    model: neural.QuantileModel, sim: SimConfig, pairs: list[tuple[int, int]]
) -> list[NetworkResult]:
    """Greedy rollouts on the given (design_seed, fault_seed) pairs.

    Oracle assists still fire after repeated wrong actions (so episodes
    terminate) but any assisted episode counts as a failure.
    """
    results = []
    for design_seed, fault_seed in pairs:
        t0 = time.perf_counter()
        state, obs = env.reset(design_seed, fault_seed, sim)
        correct = 0
        while not state.done:
            action = neural.greedy_action(neural.score_grid(model, obs))
            result = env.step(state, action)
            if result.reward > 0:
                correct += 1
            obs = result.next_observation
        results.append(
            NetworkResult(
                design_seed=design_seed,
                fault_seed=fault_seed,
                steps=state.steps_taken,
                correct_steps=correct,
                assisted=state.assisted,
                repaired=result.network_repaired,
                wall_time_s=time.perf_counter() - t0,
            )
        )
    return results


def build_report(results: list[NetworkResult]) -> AccuracyReport:
    n = len(results)
    if n == 0:
        return AccuracyReport(0, 0, 0, None, None, 0, None, None, None)
    total = sum(r.steps for r in results)
    correct = sum(r.correct_steps for r in results)
    succeeded = sum(1 for r in results if r.repaired and not r.assisted)
    times = np.array([r.wall_time_s for r in results])
    return AccuracyReport(
        n_networks=n,
        total_steps=total,
        correct_steps=correct,
        sub_action_accuracy=correct / total,
        fully_repaired_fraction=succeeded / n,
        assisted_episodes=sum(1 for r in results if r.assisted),
        mean_ops_per_network=total / n,
        mean_wall_time_s=float(times.mean()),
        p95_wall_time_s=float(np.percentile(times, 95)),
    )


def accuracy(model: neural.QuantileModel, sim: SimConfig, n_networks: int, seed: int) -> AccuracyReport:
    """Greedy evaluation over fresh networks derived from one seed."""
    return build_report(evaluate_networks(model, sim, seed_pairs(seed, n_networks)))


# --- training -------------------------------------------------------------


@dataclass
class TrainResult:
    model: neural.QuantileModel
    adam: neural.AdamState
    history: list[BatchStats]
    val_history: list[tuple[int, float]]
    converged: bool
    final_val_accuracy: float
    checkpoint: bytes
    boundary_checkpoint: bytes | None


class _MetricsLog:
    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps({"schema": METRICS_SCHEMA, **record}, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _gradient_step(model, adam, hyper, buffer, replay_rng, cfg, weight):
    obs, actions, rewards, _ = buffer.sample(cfg.batch_size, replay_rng)
    scores, trace = neural.forward(model, obs)
    rows = np.arange(len(actions))
    taken = scores[rows, actions]
    total, stats, dtaken = batch_loss(taken, rewards, cfg, critical_weight=weight)
    dscores = np.zeros_like(scores)
    dscores[rows, actions] = dtaken
    grads = neural.backward(model, trace, dscores)
    neural.adam_step(model, grads, adam, hyper)
    return total, stats


def _probe_accuracy(model, cfg: TrainConfig, stream_label: int, probe_index: int, n_networks: int) -> float:
    pairs = seed_pairs(cfg.seed, n_networks, stream_label, probe_index)
    report = build_report(evaluate_networks(model, cfg.sim, pairs))
    return report.sub_action_accuracy if report.sub_action_accuracy is not None else 1.0


def _run_phase2(model, adam, cfg, collection_steps, start_step, log, history, val_history):
    """Critical-weighted fine-tuning on fresh streams; returns convergence info."""
    hyper = neural.AdamHyper(learning_rate=cfg.learning_rate)
    stream = EpisodeStream(cfg.sim, spawn_seed(cfg.seed, _S_P2_ENV))
    explore_rng = make_rng(spawn_seed(cfg.seed, _S_P2_EXPLORE))
    replay_rng = make_rng(spawn_seed(cfg.seed, _S_P2_REPLAY))
    buffer = ReplayBuffer(cfg.buffer_capacity)
    refill = max(cfg.batch_size, cfg.phase2_refill_steps)
    for _ in range(refill):
        collect(stream, model, epsilon_at(cfg, collection_steps), 1, buffer, explore_rng)
        collection_steps += 1
    converged = False
    final_acc = 0.0
    step = start_step
    probes = 0
    for g in range(1, cfg.phase2_gradient_steps + 1):
        collect(stream, model, epsilon_at(cfg, collection_steps), 1, buffer, explore_rng)
        collection_steps += 1
        step += 1
        total, stats = _gradient_step(model, adam, hyper, buffer, replay_rng, cfg, cfg.critical_weight)
        if g % cfg.log_interval == 0 or g == 1:
            eps = epsilon_at(cfg, collection_steps)
            entry = BatchStats(step, 2, total, stats.critical, stats.non_critical, eps)
            history.append(entry)
            log.write({"phase": 2, "step": step, "mean_loss": total, "critical": stats.critical,
                       "non_critical": stats.non_critical, "epsilon": eps, "buffer_size": len(buffer)})
        if g % cfg.val_interval == 0:
            probes += 1
            acc = _probe_accuracy(model, cfg, _S_VAL, probes, cfg.val_networks)
            val_history.append((step, acc))
            log.write({"phase": 2, "step": step, "val_accuracy": acc})
            final_acc = acc
            if acc == 1.0:
                confirm = _probe_accuracy(model, cfg, _S_CONFIRM, probes, cfg.val_confirm_networks)
                val_history.append((step, confirm))
                log.write({"phase": 2, "step": step, "val_confirm_accuracy": confirm})
                final_acc = confirm
                if confirm == 1.0:
                    converged = True
                    break
    return converged, final_acc, step, collection_steps


def train(
    cfg: TrainConfig,
    checkpoint_path=None,
    metrics_path=None,
    resume_from: bytes | None = None,
) -> TrainResult:
    """Run the two-phase schedule (or resume phase 2 from a boundary checkpoint).

    Writes the phase-boundary checkpoint to ``<checkpoint_path>.phase2-start``
    and the final checkpoint to ``checkpoint_path`` when a path is given.
    Non-convergence is reported, never silently swallowed.
    """
    cfg.validate()
    vhash = codec.vocab_hash()
    log = _MetricsLog(metrics_path)
    history: list[BatchStats] = []
    val_history: list[tuple[int, float]] = []
    boundary_bytes: bytes | None = None
    try:
        if resume_from is not None:
            model, adam, meta = neural.load_checkpoint(resume_from)
            if meta.get("vocab_hash") != vhash:
                raise neural.VocabHashMismatchError("checkpoint was built against a different vocabulary")
            if meta.get("phase") != "phase2-start":
                raise neural.CheckpointError("can only resume from a phase2-start checkpoint")
            if meta.get("seed") != cfg.seed:
                raise ConfigError(f"checkpoint seed {meta.get('seed')} != config seed {cfg.seed}")
            step = int(meta["train_step"])
            collection_steps = int(meta["collection_steps"])
        else:
            model = neural.init(spawn_seed(cfg.seed, _S_INIT), cfg.dims)
            adam = neural.adam_init(model)
            hyper = neural.AdamHyper(learning_rate=cfg.learning_rate)
            stream = EpisodeStream(cfg.sim, spawn_seed(cfg.seed, _S_P1_ENV))
            explore_rng = make_rng(spawn_seed(cfg.seed, _S_P1_EXPLORE))
            replay_rng = make_rng(spawn_seed(cfg.seed, _S_P1_REPLAY))
            buffer = ReplayBuffer(cfg.buffer_capacity)
            collection_steps = 0
            for _ in range(cfg.warmup_steps):
                collect(stream, model, epsilon_at(cfg, collection_steps), 1, buffer, explore_rng)
                collection_steps += 1
            step = 0
            for g in range(1, cfg.phase1_gradient_steps + 1):
                collect(stream, model, epsilon_at(cfg, collection_steps), 1, buffer, explore_rng)
                collection_steps += 1
                step += 1
                total, stats = _gradient_step(model, adam, hyper, buffer, replay_rng, cfg, 1.0)
                if g % cfg.log_interval == 0 or g == 1:
                    eps = epsilon_at(cfg, collection_steps)
                    entry = BatchStats(step, 1, total, stats.critical, stats.non_critical, eps)
                    history.append(entry)
                    log.write({"phase": 1, "step": step, "mean_loss": total, "critical": stats.critical,
                               "non_critical": stats.non_critical, "epsilon": eps, "buffer_size": len(buffer)})
            boundary_meta = {
                "phase": "phase2-start",
                "train_step": step,
                "collection_steps": collection_steps,
                "seed": cfg.seed,
                "vocab_hash": vhash,
            }
            boundary_bytes = neural.save_checkpoint(model, adam, boundary_meta)
            if checkpoint_path is not None:
                with open(f"{checkpoint_path}.phase2-start", "wb") as fh:
                    fh.write(boundary_bytes)

        converged, final_acc, step, collection_steps = _run_phase2(
            model, adam, cfg, collection_steps, step, log, history, val_history
        )
        final_meta = {
            "phase": "final",
            "train_step": step,
            "collection_steps": collection_steps,
            "seed": cfg.seed,
            "vocab_hash": vhash,
            "converged": converged,
        }
        final_bytes = neural.save_checkpoint(model, adam, final_meta)
        if checkpoint_path is not None:
            with open(checkpoint_path, "wb") as fh:
                fh.write(final_bytes)
    finally:
        log.close()
    return TrainResult(
        model=model,
        adam=adam,
        history=history,
        val_history=val_history,
        converged=converged,
        final_val_accuracy=final_acc,
        checkpoint=final_bytes,
        boundary_checkpoint=boundary_bytes,
    )
