"""Token vocabulary, interval embeddings, observation vectors, actions.

Every text token the simulator can emit belongs to exactly one of 12
categories.  A token embeds to a scalar strictly inside its category's
half-open interval [c/12, (c+1)/12), so same-category tokens cluster and
different categories never overlap:

    embed(c, i) = (c + (i + 1) / (N_c + 1)) / 12

PAD is special: observation slots that carry no token hold exactly 0.0,
which no embedded token can produce.

The action space is a flat enumeration of 104 ids covering the two
diagnosis verdicts, six repair commands, and every possible parameter.
The enumeration is frozen; its hash travels inside checkpoints so a model
can never be evaluated against a different table.
"""

from __future__ import annotations

import hashlib
import json
from typing import NamedTuple, Optional, Union

import numpy as np

from . import netsim
from .netsim import Command, InfoItem, ItemKind, Verdict

N_CATEGORIES = 12
OBS_DIM = 16
N_ACTIONS = 104

VOCAB_SCHEMA = "netop-vocab-1"

PAD = "PAD"
NONE = "NONE"

PHASE_DIAGNOSE = "diagnose"
PHASE_COMMAND = "command"
PHASE_PARAMETER = "parameter"
PHASES = (PHASE_DIAGNOSE, PHASE_COMMAND, PHASE_PARAMETER)

CAT_SPECIAL = 0
CAT_ADDRESS = 1
CAT_SUBNET = 2
CAT_DEVICE = 3
CAT_INTERFACE = 4
CAT_PORT_STATUS = 5
CAT_PROTOCOL = 6
CAT_COMMAND = 7
CAT_PHASE = 8
CAT_BOOLEAN = 9
CAT_VERSION = 10
CAT_ITEM_KIND = 11

_CATEGORIES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("special", (PAD, netsim.ABSENT, NONE)),
    ("ip-address", tuple(netsim.address_token(i) for i in range(1, netsim.MAX_ADDRESSES + 1))),
    ("ip-subnet", tuple(netsim.subnet_token(i) for i in range(1, netsim.MAX_SUBNETS + 1))),
    ("device-name", tuple(netsim.device_name(i) for i in range(netsim.MAX_DEVICES))),
    ("interface-name", tuple(netsim.port_name(i) for i in range(1, netsim.MAX_PORTS + 1))),
    ("port-status", (netsim.PORT_OPEN, netsim.PORT_CLOSED)),
    ("routing-protocol", netsim.PROTOCOLS),
    ("command", tuple(c.value for c in Command)),
    ("phase", PHASES),
    ("boolean", (netsim.SUMMARY_DISABLED, netsim.SUMMARY_ENABLED)),
    ("version", (netsim.VERSION_1, netsim.VERSION_2)),
    ("item-kind", tuple(k.value for k in ItemKind)),
)

_TOKEN_TO_PAIR: dict[str, tuple[int, int]] = {}
for _cat, (_name, _tokens) in enumerate(_CATEGORIES):
    for _idx, _tok in enumerate(_tokens):
        if _tok in _TOKEN_TO_PAIR:
            raise AssertionError(f"duplicate vocabulary token {_tok!r}")
        _TOKEN_TO_PAIR[_tok] = (_cat, _idx)


class UnknownTokenError(ValueError):
    """A text token is not in the vocabulary."""


class UnknownActionError(ValueError):
    """An action name is not in the enumeration."""


class TokenRangeError(ValueError):
    """A (category, index) pair or action id is out of range."""


def category_size(category: int) -> int:
    if not 0 <= category < N_CATEGORIES:
        raise TokenRangeError(f"category {category} outside 0..{N_CATEGORIES - 1}")
    return len(_CATEGORIES[category][1])


def encode_token(text: str) -> tuple[int, int]:
    """Token text to its (category, index) pair."""
    try:
        return _TOKEN_TO_PAIR[text]
    except KeyError:
        raise UnknownTokenError(f"unknown token {text!r}") from None


def decode_token(category: int, index: int) -> str:
    tokens = _CATEGORIES[category][1] if 0 <= category < N_CATEGORIES else ()
    if not 0 <= category < N_CATEGORIES or not 0 <= index < len(tokens):
        raise TokenRangeError(f"({category}, {index}) is not a vocabulary slot")
    return tokens[index]


def embed(category: int, index: int) -> float:
    """Scalar embedding of a (category, index) pair, strictly in (0, 1)."""
    size = category_size(category)
    if not 0 <= index < size:
        raise TokenRangeError(f"index {index} outside category {category} of size {size}")
    return (category + (index + 1) / (size + 1)) / N_CATEGORIES


def embed_token(text: str) -> float:
    return embed(*encode_token(text))


# --- actions -------------------------------------------------------------

ACTION_NAMES: tuple[str, ...] = (
    "NO_FAULT",
    "FAULT_DETECTED",
    *(f"CMD_{c.name}" for c in Command),
    "PARAM_NONE",
    *(f"PARAM_ADDR_{i}" for i in range(1, netsim.MAX_ADDRESSES + 1)),
    *(f"PARAM_SUBNET_{i}" for i in range(1, netsim.MAX_SUBNETS + 1)),
)
assert len(ACTION_NAMES) == N_ACTIONS

_ACTION_IDS = {name: i for i, name in enumerate(ACTION_NAMES)}

A_NO_FAULT = 0
A_FAULT_DETECTED = 1
A_CMD_BASE = 2
A_PARAM_NONE = 8
A_PARAM_ADDR_BASE = 9  # PARAM_ADDR_i = 8 + i
A_PARAM_SUBNET_BASE = 72  # PARAM_SUBNET_j = 71 + j

_COMMAND_LIST = tuple(Command)


class Param(NamedTuple):
    """A decoded parameter sub-action."""

    kind: str  # "none" | "address" | "subnet"
    index: Optional[int]


def encode_action(name: str) -> int:
    try:
        return _ACTION_IDS[name]
    except KeyError:
        raise UnknownActionError(f"unknown action {name!r}") from None


def action_name(action_id: int) -> str:
    if not 0 <= action_id < N_ACTIONS:
        raise TokenRangeError(f"action id {action_id} outside 0..{N_ACTIONS - 1}")
    return ACTION_NAMES[action_id]


def command_action_id(command: Command) -> int:
    return A_CMD_BASE + _COMMAND_LIST.index(command)


def decode_action(action_id: int, phase: str) -> Union[Verdict, Command, Param, None]:
    """The typed component an action means in a phase, or None if the
    action is not legal in that phase."""
    if not 0 <= action_id < N_ACTIONS:
        raise TokenRangeError(f"action id {action_id} outside 0..{N_ACTIONS - 1}")
    if phase == PHASE_DIAGNOSE:
        if action_id == A_NO_FAULT:
            return Verdict.NO_FAULT
        if action_id == A_FAULT_DETECTED:
            return Verdict.FAULT_DETECTED
        return None
    if phase == PHASE_COMMAND:
        if A_CMD_BASE <= action_id < A_PARAM_NONE:
            return _COMMAND_LIST[action_id - A_CMD_BASE]
        return None
    if phase == PHASE_PARAMETER:
        if action_id == A_PARAM_NONE:
            return Param("none", None)
        if A_PARAM_ADDR_BASE <= action_id < A_PARAM_SUBNET_BASE:
            return Param("address", action_id - A_PARAM_ADDR_BASE + 1)
        if A_PARAM_SUBNET_BASE <= action_id < N_ACTIONS:
            return Param("subnet", action_id - A_PARAM_SUBNET_BASE + 1)
        return None
    raise ValueError(f"unknown phase {phase!r}")


# --- observation vectors -------------------------------------------------


def build_observation(item: InfoItem, phase: str, pending_command: Optional[Command] = None) -> np.ndarray:
    """The 16-slot observation for one item at one sub-step.

    Layout: phase, item kind, device, interface (PAD when the item has
    none), design value, current value, pending command (PAD outside the
    parameter phase), protocol, then 8 PAD slots.
    """
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    if (phase == PHASE_PARAMETER) != (pending_command is not None):
        raise ValueError("pending_command must be given exactly in the parameter phase")
    v = np.zeros(OBS_DIM, dtype=np.float64)
    v[0] = embed_token(phase)
    v[1] = embed_token(item.kind.value)
    v[2] = embed_token(item.device)
    v[3] = embed_token(item.interface) if item.interface is not None else 0.0
    v[4] = embed_token(item.design_value)
    v[5] = embed_token(item.current_value)
    v[6] = embed_token(pending_command.value) if pending_command is not None else 0.0
    v[7] = embed_token(item.protocol)
    return v


# --- vocabulary artifact --------------------------------------------------


def vocab_document() -> dict:
    return {
        "schema": VOCAB_SCHEMA,
        "categories": [
            {"id": cat, "name": name, "tokens": list(tokens)}
            for cat, (name, tokens) in enumerate(_CATEGORIES)
        ],
        "actions": list(ACTION_NAMES),
    }


def vocab_json() -> str:
    return json.dumps(vocab_document(), sort_keys=True, separators=(",", ":")) + "\n"


def vocab_hash() -> str:
    return hashlib.sha256(vocab_json().encode("utf-8")).hexdigest()
