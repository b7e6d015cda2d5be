"""Sub-stepped repair episodes over faulted networks.

One episode walks the item list of a freshly faulted network.  Each item
takes a diagnose sub-step; a detected fault adds command and parameter
sub-steps, after which the composed instruction is applied.  Every
sub-step is scored +1/-1 against the oracle.  A wrong action leaves the
episode where it is; after three failures on the same (item, phase) the
oracle action is applied automatically and the episode is marked
assisted, which guarantees termination and counts as a failure in
evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import codec, netsim
from .codec import PHASE_COMMAND, PHASE_DIAGNOSE, PHASE_PARAMETER
from .netsim import Command, InfoItem, NetworkState, SimConfig, Verdict
from .seeding import make_rng

RETRY_LIMIT = 3
TRACE_SCHEMA = "netop-trace-1"


class EpisodeDoneError(RuntimeError):
    """step() was called on a finished episode."""


@dataclass
class EpisodeState:
    network: NetworkState
    items: list[InfoItem]
    cursor: int
    phase: str
    pending_command: Optional[Command]
    steps_taken: int
    retries_on_current: int
    assisted: bool
    max_steps: int
    done: bool
    initial_fault_count: int


@dataclass(frozen=True)
class StepResult:
    reward: int
    next_observation: np.ndarray
    episode_done: bool
    network_repaired: bool


@dataclass(frozen=True)
class ReplaySample:
    observation: np.ndarray
    action: int
    reward: int
    next_observation: np.ndarray


def reset(design_seed: int, fault_seed: int, cfg: SimConfig = SimConfig()) -> tuple[EpisodeState, np.ndarray]:
    """Generate, fault, and wrap a fresh network; return the first observation."""
    design = netsim.generate_design(design_seed, cfg)
    network, faults = netsim.inject_faults(design, fault_seed, cfg)
    items = netsim.enumerate_items(network)
    state = EpisodeState(
        network=network,
        items=items,
        cursor=0,
        phase=PHASE_DIAGNOSE,
        pending_command=None,
        steps_taken=0,
        retries_on_current=0,
        assisted=False,
        max_steps=4 * (len(items) + 2 * len(faults)),
        done=False,
        initial_fault_count=len(faults),
    )
    return state, observe(state)


def observe(state: EpisodeState) -> np.ndarray:
    """The observation for the current (item, phase); all-PAD when done."""
    if state.done:
        return np.zeros(codec.OBS_DIM, dtype=np.float64)
    item = state.items[state.cursor]
    return codec.build_observation(item, state.phase, state.pending_command)


def oracle_action(state: EpisodeState) -> int:
    """The unique correct action id for the current (item, phase)."""
    if state.done:
        raise EpisodeDoneError("episode is finished")
    item = state.items[state.cursor]
    if state.phase == PHASE_DIAGNOSE:
        if item.current_value == item.design_value:
            return codec.A_NO_FAULT
        return codec.A_FAULT_DETECTED
    if state.phase == PHASE_COMMAND:
        return codec.command_action_id(netsim.REPAIR_COMMAND[item.kind])
    return codec.encode_action(netsim.param_action_name(item))


def _advance(state: EpisodeState, action: int) -> None:
    """Apply a correct action to the phase machine (and the network)."""
    item = state.items[state.cursor]
    if state.phase == PHASE_DIAGNOSE:
        if action == codec.A_NO_FAULT:
            state.cursor += 1
        else:
            state.phase = PHASE_COMMAND
    elif state.phase == PHASE_COMMAND:
        state.pending_command = codec.decode_action(action, PHASE_COMMAND)
        state.phase = PHASE_PARAMETER
    else:
        param = codec.decode_action(action, PHASE_PARAMETER)
        instr = netsim.DeviceInstruction(Verdict.FAULT_DETECTED, state.pending_command, param.index)
        state.network = netsim.apply_instruction(state.network, item, instr)
        state.pending_command = None
        state.phase = PHASE_DIAGNOSE
        state.cursor += 1
    state.retries_on_current = 0


def step(state: EpisodeState, action: int) -> StepResult:
    """Score one action against the oracle and advance the episode.

    Correct actions advance the phase machine; wrong ones are retried up
    to RETRY_LIMIT times before the oracle action is applied automatically
    and the episode is marked assisted.
    """
    if state.done:
        raise EpisodeDoneError("episode is finished")
    oracle = oracle_action(state)
    state.steps_taken += 1
    if action == oracle:
        reward = 1
        _advance(state, oracle)
    else:
        reward = -1
        state.retries_on_current += 1
        if state.retries_on_current >= RETRY_LIMIT:
            _advance(state, oracle)
            state.assisted = True
    if state.cursor >= len(state.items) or state.steps_taken >= state.max_steps:
        state.done = True
    return StepResult(
        reward=reward,
        next_observation=observe(state),
        episode_done=state.done,
        network_repaired=netsim.is_repaired(state.network),
    )


def make_sample(
    observation: np.ndarray, action: int, reward: int, next_observation: np.ndarray
) -> ReplaySample:
    """An immutable replay record; terminal steps store an all-PAD next observation."""
    if reward not in (1, -1):
        raise ValueError(f"reward must be +1 or -1, got {reward}")
    return ReplaySample(
        observation=np.array(observation, dtype=np.float64, copy=True),
        action=int(action),
        reward=int(reward),
        next_observation=np.array(next_observation, dtype=np.float64, copy=True),
    )


def sample_to_dict(sample: ReplaySample) -> dict:
    return {
        "schema": TRACE_SCHEMA,
        "observation": [float(x) for x in sample.observation],
        "action": sample.action,
        "reward": sample.reward,
        "next_observation": [float(x) for x in sample.next_observation],
    }


def write_trace(samples, path) -> None:
    """One JSON document per line, suitable for offline inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_dict(sample), sort_keys=True) + "\n")


def run_oracle_episode(
    design_seed: int, fault_seed: int, cfg: SimConfig = SimConfig()
) -> tuple[int, int, bool, bool, EpisodeState]:
    """Play one episode acting the oracle at every step.

    Returns (total_reward, steps, repaired, assisted, final_state).
    """
    state, _ = reset(design_seed, fault_seed, cfg)
    total = 0
    while not state.done:
        result = step(state, oracle_action(state))
        total += result.reward
    return total, state.steps_taken, netsim.is_repaired(state.network), state.assisted, state


class EpisodeStream:
    """Auto-resetting episode source for data collection.

    Draws fresh (design_seed, fault_seed) pairs from its own generator;
    `obs` always holds the observation the next action will see.
    """

    def __init__(self, cfg: SimConfig, seed: int):
        self._cfg = cfg
        self._rng = make_rng(seed)
        self.state: EpisodeState
        self.obs: np.ndarray
        self._start_episode()

    def _start_episode(self) -> None:
        design_seed = int(self._rng.integers(0, 2**63))
        fault_seed = int(self._rng.integers(0, 2**63))
        self.state, self.obs = reset(design_seed, fault_seed, self._cfg)

    def step(self, action: int) -> StepResult:
        result = step(self.state, action)
        if result.episode_done:
            self._start_episode()
        else:
            self.obs = result.next_observation
        return result
