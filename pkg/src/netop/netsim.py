"""Random small-network generation, fault injection, and the repair oracle.

A generated network is a tree of 4..10 devices joined by point-to-point
links.  Each link owns a distinct subnet; each link endpoint owns an
address inside that subnet.  Configuration lives in two flat token maps,
``design`` (the intended values) and ``current`` (the live values); a
fault is any key where the two disagree.  Six fault kinds are injected,
one per information-item kind, and each kind has exactly one repair
command, which makes the ground-truth repair script derivable from the
state alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from string import ascii_lowercase
from typing import Optional

from .seeding import make_rng

PROTOCOLS = ("RIP", "EIGRP", "OSPF")

PORT_OPEN = "open"
PORT_CLOSED = "closed"
SUMMARY_DISABLED = "disabled"
SUMMARY_ENABLED = "enabled"
VERSION_1 = "version-1"
VERSION_2 = "version-2"
ABSENT = "ABSENT"

STATE_SCHEMA = "netop-state-1"

# Hard vocabulary bounds; SimConfig may shrink the pools but never exceed
# these, otherwise generated tokens would fall outside the codec tables.
MAX_DEVICES = 10
MAX_PORTS = 9
MAX_SUBNETS = 32
MAX_ADDRESSES = 63


class ConfigError(ValueError):
    """A SimConfig (or derived configuration) violates its invariants."""


class InstructionMismatchError(ValueError):
    """A repair command was applied to an item kind it cannot repair."""


class StateParseError(ValueError):
    """A serialized network state could not be parsed."""


def device_name(index: int) -> str:
    return f"Device-{ascii_lowercase[index]}"


def port_name(number: int) -> str:
    return f"Port-{number}"


def address_token(index: int) -> str:
    return f"ip-address-{index}"


def subnet_token(index: int) -> str:
    return f"ip-subnet-{index}"


class ItemKind(Enum):
    """The six kinds of information item a state exposes."""

    PORT_STATUS = "port-status"
    IP_ADDRESS = "ip-address"
    IP_SUBNET = "ip-subnet"
    NETWORK_STATEMENT = "network-statement"
    AUTO_SUMMARY = "auto-summary"
    PROTOCOL_VERSION = "protocol-version"


class Command(Enum):
    """Repair commands, one per item kind."""

    NO_SHUTDOWN = "no-shutdown"
    SET_IP_ADDRESS = "set-ip-address"
    SET_IP_SUBNET = "set-ip-subnet"
    ADD_NETWORK_STATEMENT = "add-network-statement"
    NO_AUTO_SUMMARY = "no-auto-summary"
    SET_VERSION_2 = "set-version-2"


class Verdict(Enum):
    NO_FAULT = "no-fault"
    FAULT_DETECTED = "fault-detected"


class FaultKind(Enum):
    PORT_CLOSED = "port-closed"
    INCORRECT_IP_ADDRESS = "incorrect-ip-address"
    INCORRECT_IP_SUBNET = "incorrect-ip-subnet"
    MISSING_IP_SUBNET = "missing-ip-subnet"
    AUTO_SUMMARY_ENABLED = "auto-summary-enabled"
    WRONG_PROTOCOL_VERSION = "wrong-protocol-version"


REPAIR_COMMAND = {
    ItemKind.PORT_STATUS: Command.NO_SHUTDOWN,
    ItemKind.IP_ADDRESS: Command.SET_IP_ADDRESS,
    ItemKind.IP_SUBNET: Command.SET_IP_SUBNET,
    ItemKind.NETWORK_STATEMENT: Command.ADD_NETWORK_STATEMENT,
    ItemKind.AUTO_SUMMARY: Command.NO_AUTO_SUMMARY,
    ItemKind.PROTOCOL_VERSION: Command.SET_VERSION_2,
}

FAULT_FOR_KIND = {
    ItemKind.PORT_STATUS: FaultKind.PORT_CLOSED,
    ItemKind.IP_ADDRESS: FaultKind.INCORRECT_IP_ADDRESS,
    ItemKind.IP_SUBNET: FaultKind.INCORRECT_IP_SUBNET,
    ItemKind.NETWORK_STATEMENT: FaultKind.MISSING_IP_SUBNET,
    ItemKind.AUTO_SUMMARY: FaultKind.AUTO_SUMMARY_ENABLED,
    ItemKind.PROTOCOL_VERSION: FaultKind.WRONG_PROTOCOL_VERSION,
}

COMMANDS_WITH_ADDRESS = frozenset({Command.SET_IP_ADDRESS})
COMMANDS_WITH_SUBNET = frozenset({Command.SET_IP_SUBNET, Command.ADD_NETWORK_STATEMENT})


@dataclass(frozen=True)
class SimConfig:
    """Knobs for network generation and fault injection."""

    device_min: int = 4
    device_max: int = 10
    subnet_pool_size: int = 32
    address_pool_size: int = 63
    fault_probability: float = 0.3
    fault_min: int = 1

    def validate(self) -> None:
        if not 4 <= self.device_min <= self.device_max:
            raise ConfigError(
                f"device range [{self.device_min}, {self.device_max}] must satisfy "
                f"4 <= device_min <= device_max"
            )
        if self.device_max > MAX_DEVICES:
            raise ConfigError(f"device_max {self.device_max} exceeds the pool of {MAX_DEVICES} device names")
        if self.subnet_pool_size < self.device_max - 1:
            raise ConfigError(
                f"subnet_pool_size {self.subnet_pool_size} cannot cover "
                f"{self.device_max - 1} links with distinct subnets"
            )
        if self.subnet_pool_size > MAX_SUBNETS:
            raise ConfigError(f"subnet_pool_size {self.subnet_pool_size} exceeds the pool of {MAX_SUBNETS}")
        if self.address_pool_size < 2:
            raise ConfigError("address_pool_size must be at least 2 (two distinct endpoints per link)")
        if self.address_pool_size > MAX_ADDRESSES:
            raise ConfigError(f"address_pool_size {self.address_pool_size} exceeds the pool of {MAX_ADDRESSES}")
        if not 0.0 <= self.fault_probability <= 1.0:
            raise ConfigError(f"fault_probability {self.fault_probability} outside [0, 1]")
        if self.fault_min < 1:
            raise ConfigError("fault_min must be at least 1")


# Reduced pools for fast training runs: same code paths, smaller token space.
SMALL_POOL_CONFIG = SimConfig(device_min=4, device_max=6, subnet_pool_size=8, address_pool_size=8)


@dataclass(frozen=True)
class NetworkDesign:
    """The intended (fault-free) configuration of one generated network."""

    devices: tuple[str, ...]
    links: tuple[tuple[str, str, str, str], ...]  # (device, port, device, port)
    link_subnets: tuple[int, ...]  # parallel to links, 1-based pool index
    endpoint_addresses: dict[tuple[str, str], int]  # (device, port) -> 1-based pool index
    protocol: str


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    device: str
    interface: Optional[str] = None
    subnet: Optional[int] = None
    wrong_value: Optional[str] = None


@dataclass
class NetworkState:
    """Two parallel token maps plus the routing protocol."""

    design: dict[str, str]
    current: dict[str, str]
    protocol: str
    faults_remaining: int


@dataclass(frozen=True)
class InfoItem:
    """One observable slice of network state: its key, kind and both values."""

    kind: ItemKind
    device: str
    interface: Optional[str]
    design_value: str
    current_value: str
    protocol: str
    key: str


@dataclass(frozen=True)
class DeviceInstruction:
    """A composed (verdict, command, parameter) repair instruction."""

    verdict: Verdict
    command: Optional[Command] = None
    parameter: Optional[int] = None

    def __post_init__(self) -> None:
        if self.verdict is Verdict.NO_FAULT:
            if self.command is not None or self.parameter is not None:
                raise ValueError("a no-fault verdict carries no command or parameter")
            return
        if self.command is None:
            raise ValueError("a fault-detected verdict requires a command")
        if self.command in COMMANDS_WITH_ADDRESS:
            if self.parameter is None or not 1 <= self.parameter <= MAX_ADDRESSES:
                raise ValueError(f"{self.command.value} needs an address index in 1..{MAX_ADDRESSES}")
        elif self.command in COMMANDS_WITH_SUBNET:
            if self.parameter is None or not 1 <= self.parameter <= MAX_SUBNETS:
                raise ValueError(f"{self.command.value} needs a subnet index in 1..{MAX_SUBNETS}")
        elif self.parameter is not None:
            raise ValueError(f"{self.command.value} takes no parameter")


# --- item keys ----------------------------------------------------------

_IFACE_KIND_RANK = {ItemKind.PORT_STATUS: 0, ItemKind.IP_ADDRESS: 1, ItemKind.IP_SUBNET: 2}


def _iface_key(device: str, port: str, kind: ItemKind) -> str:
    return f"{device}/{port}/{kind.value}"


def _statement_key(device: str, subnet: int) -> str:
    return f"{device}/routing/network-statement/{subnet:02d}"


def _routing_key(device: str, kind: ItemKind) -> str:
    return f"{device}/routing/{kind.value}"


def _parse_key(key: str) -> tuple[str, ItemKind, Optional[str], Optional[int]]:
    """Split an item key into (device, kind, interface, subnet)."""
    parts = key.split("/")
    try:
        if len(parts) == 4 and parts[1] == "routing" and parts[2] == ItemKind.NETWORK_STATEMENT.value:
            return parts[0], ItemKind.NETWORK_STATEMENT, None, int(parts[3])
        if len(parts) == 3 and parts[1] == "routing":
            kind = ItemKind(parts[2])
            if kind not in (ItemKind.AUTO_SUMMARY, ItemKind.PROTOCOL_VERSION):
                raise ValueError(key)
            return parts[0], kind, None, None
        if len(parts) == 3:
            kind = ItemKind(parts[2])
            if kind not in _IFACE_KIND_RANK:
                raise ValueError(key)
            return parts[0], kind, parts[1], None
    except ValueError as exc:
        raise StateParseError(f"unrecognized item key {key!r}") from exc
    raise StateParseError(f"unrecognized item key {key!r}")


def _order_key(key: str) -> tuple:
    device, kind, iface, subnet = _parse_key(key)
    if iface is not None:
        return (device, 0, int(iface.split("-")[1]), _IFACE_KIND_RANK[kind])
    if kind is ItemKind.NETWORK_STATEMENT:
        return (device, 1, subnet, 0)
    if kind is ItemKind.AUTO_SUMMARY:
        return (device, 2, 0, 0)
    return (device, 3, 0, 0)


# --- generation ---------------------------------------------------------


def generate_design(seed: int, cfg: SimConfig = SimConfig()) -> NetworkDesign:
    """Deterministically generate one random tree network.

    Devices are attached one at a time to a uniformly chosen existing
    device; every link draws a distinct subnet and two distinct endpoint
    addresses from the configured pools.
    """
    cfg.validate()
    rng = make_rng(seed)
    n = int(rng.integers(cfg.device_min, cfg.device_max + 1))
    devices = tuple(device_name(i) for i in range(n))
    degrees = [0] * n
    links = []
    for child in range(1, n):
        parent = int(rng.integers(0, child))
        degrees[parent] += 1
        degrees[child] += 1
        links.append(
            (devices[parent], port_name(degrees[parent]), devices[child], port_name(degrees[child]))
        )
    protocol = PROTOCOLS[int(rng.integers(0, len(PROTOCOLS)))]
    subnets = rng.choice(range(1, cfg.subnet_pool_size + 1), size=n - 1, replace=False)
    endpoint_addresses: dict[tuple[str, str], int] = {}
    for dev_a, port_a, dev_b, port_b in links:
        addr_a, addr_b = rng.choice(range(1, cfg.address_pool_size + 1), size=2, replace=False)
        endpoint_addresses[(dev_a, port_a)] = int(addr_a)
        endpoint_addresses[(dev_b, port_b)] = int(addr_b)
    return NetworkDesign(
        devices=devices,
        links=tuple(links),
        link_subnets=tuple(int(s) for s in subnets),
        endpoint_addresses=endpoint_addresses,
        protocol=protocol,
    )


def design_state(design: NetworkDesign) -> NetworkState:
    """The fault-free state of a design: current equals design everywhere."""
    m: dict[str, str] = {}
    attached: dict[str, set[int]] = {dev: set() for dev in design.devices}
    for idx, (dev_a, port_a, dev_b, port_b) in enumerate(design.links):
        subnet = design.link_subnets[idx]
        for dev, port in ((dev_a, port_a), (dev_b, port_b)):
            m[_iface_key(dev, port, ItemKind.PORT_STATUS)] = PORT_OPEN
            m[_iface_key(dev, port, ItemKind.IP_ADDRESS)] = address_token(
                design.endpoint_addresses[(dev, port)]
            )
            m[_iface_key(dev, port, ItemKind.IP_SUBNET)] = subnet_token(subnet)
            attached[dev].add(subnet)
    for dev in design.devices:
        for subnet in sorted(attached[dev]):
            m[_statement_key(dev, subnet)] = subnet_token(subnet)
        if design.protocol in ("RIP", "EIGRP"):
            m[_routing_key(dev, ItemKind.AUTO_SUMMARY)] = SUMMARY_DISABLED
        if design.protocol == "RIP":
            m[_routing_key(dev, ItemKind.PROTOCOL_VERSION)] = VERSION_2
    return NetworkState(design=m, current=dict(m), protocol=design.protocol, faults_remaining=0)


def _draw_different(rng, pool_size: int, exclude: int) -> int:
    """Uniform draw from 1..pool_size excluding one value."""
    r = int(rng.integers(1, pool_size))
    return r if r < exclude else r + 1


def _inject_one(current: dict[str, str], item: InfoItem, rng, cfg: SimConfig) -> Fault:
    kind = FAULT_FOR_KIND[item.kind]
    subnet = None
    wrong_value = None
    if item.kind is ItemKind.PORT_STATUS:
        current[item.key] = PORT_CLOSED
    elif item.kind is ItemKind.IP_ADDRESS:
        design_idx = int(item.design_value.rsplit("-", 1)[1])
        wrong_value = address_token(_draw_different(rng, cfg.address_pool_size, design_idx))
        current[item.key] = wrong_value
    elif item.kind is ItemKind.IP_SUBNET:
        design_idx = int(item.design_value.rsplit("-", 1)[1])
        wrong_value = subnet_token(_draw_different(rng, cfg.subnet_pool_size, design_idx))
        current[item.key] = wrong_value
    elif item.kind is ItemKind.NETWORK_STATEMENT:
        subnet = int(item.design_value.rsplit("-", 1)[1])
        current[item.key] = ABSENT
    elif item.kind is ItemKind.AUTO_SUMMARY:
        current[item.key] = SUMMARY_ENABLED
    else:
        current[item.key] = VERSION_1
    return Fault(kind=kind, device=item.device, interface=item.interface, subnet=subnet, wrong_value=wrong_value)


def inject_faults(
    design: NetworkDesign, seed: int, cfg: SimConfig = SimConfig()
) -> tuple[NetworkState, list[Fault]]:
    """Fault each eligible item independently with ``fault_probability``.

    If the independent draws produce fewer than ``fault_min`` faults,
    additional uniformly chosen healthy items are faulted to reach the
    floor, so a generated episode always has at least one fault.
    """
    cfg.validate()
    state = design_state(design)
    rng = make_rng(seed)
    items = enumerate_items(state)
    current = dict(state.design)
    faults: list[Fault] = []
    for item in items:
        if rng.random() < cfg.fault_probability:
            faults.append(_inject_one(current, item, rng, cfg))
    if len(faults) < cfg.fault_min:
        healthy = [it for it in items if current[it.key] == state.design[it.key]]
        extra = min(cfg.fault_min - len(faults), len(healthy))
        picks = rng.choice(len(healthy), size=extra, replace=False)
        for i in picks:
            faults.append(_inject_one(current, healthy[int(i)], rng, cfg))
    return (
        NetworkState(
            design=state.design, current=current, protocol=state.protocol, faults_remaining=len(faults)
        ),
        faults,
    )


# --- observation items and repairs --------------------------------------


def enumerate_items(state: NetworkState) -> list[InfoItem]:
    """All information items in canonical order.

    Per device (sorted by name): interface items first (ports sorted,
    each yielding port-status, ip-address, ip-subnet), then routing items
    (network statements by subnet, auto-summary, protocol version).
    """
    items = []
    for key in sorted(state.design, key=_order_key):
        device, kind, iface, _ = _parse_key(key)
        items.append(
            InfoItem(
                kind=kind,
                device=device,
                interface=iface,
                design_value=state.design[key],
                current_value=state.current[key],
                protocol=state.protocol,
                key=key,
            )
        )
    return items


def _repair_value(instr: DeviceInstruction) -> str:
    if instr.command is Command.NO_SHUTDOWN:
        return PORT_OPEN
    if instr.command is Command.SET_IP_ADDRESS:
        return address_token(instr.parameter)
    if instr.command in COMMANDS_WITH_SUBNET:
        return subnet_token(instr.parameter)
    if instr.command is Command.NO_AUTO_SUMMARY:
        return SUMMARY_DISABLED
    return VERSION_2


def apply_instruction(state: NetworkState, item: InfoItem, instr: DeviceInstruction) -> NetworkState:
    """Apply one composed instruction to one item.

    A no-fault verdict leaves the state untouched.  A repair command must
    match the item kind; it writes the commanded value (which may itself
    be wrong if the parameter is wrong) and recounts remaining faults.
    """
    if instr.verdict is Verdict.NO_FAULT:
        return state
    expected = REPAIR_COMMAND[item.kind]
    if instr.command is not expected:
        raise InstructionMismatchError(
            f"{instr.command.value} cannot repair a {item.kind.value} item (expected {expected.value})"
        )
    current = dict(state.current)
    current[item.key] = _repair_value(instr)
    remaining = sum(1 for k, v in state.design.items() if current[k] != v)
    return NetworkState(
        design=state.design, current=current, protocol=state.protocol, faults_remaining=remaining
    )


def is_repaired(state: NetworkState) -> bool:
    return state.current == state.design


def command_action_name(command: Command) -> str:
    return f"CMD_{command.name}"


def param_action_name(item: InfoItem) -> str:
    """The parameter sub-action that names the item's design value."""
    command = REPAIR_COMMAND[item.kind]
    index = None
    if command in COMMANDS_WITH_ADDRESS or command in COMMANDS_WITH_SUBNET:
        index = int(item.design_value.rsplit("-", 1)[1])
    if command in COMMANDS_WITH_ADDRESS:
        return f"PARAM_ADDR_{index}"
    if command in COMMANDS_WITH_SUBNET:
        return f"PARAM_SUBNET_{index}"
    return "PARAM_NONE"


def oracle_script(state: NetworkState) -> list[tuple[InfoItem, tuple[str, ...]]]:
    """The correct sub-action sequence for every item, in canonical order."""
    script = []
    for item in enumerate_items(state):
        if item.current_value == item.design_value:
            script.append((item, ("NO_FAULT",)))
        else:
            script.append(
                (
                    item,
                    (
                        "FAULT_DETECTED",
                        command_action_name(REPAIR_COMMAND[item.kind]),
                        param_action_name(item),
                    ),
                )
            )
    return script


def oracle_instruction(item: InfoItem) -> DeviceInstruction:
    """The composed instruction that repairs (or confirms) one item."""
    if item.current_value == item.design_value:
        return DeviceInstruction(Verdict.NO_FAULT)
    command = REPAIR_COMMAND[item.kind]
    parameter = None
    if command in COMMANDS_WITH_ADDRESS or command in COMMANDS_WITH_SUBNET:
        parameter = int(item.design_value.rsplit("-", 1)[1])
    return DeviceInstruction(Verdict.FAULT_DETECTED, command, parameter)


def repair_with_oracle(state: NetworkState) -> NetworkState:
    """Replay the oracle script through apply_instruction."""
    for item in enumerate_items(state):
        instr = oracle_instruction(item)
        if instr.verdict is Verdict.FAULT_DETECTED:
            state = apply_instruction(state, item, instr)
    return state


# --- serialization ------------------------------------------------------


def state_to_json(state: NetworkState) -> str:
    doc = {
        "schema": STATE_SCHEMA,
        "protocol": state.protocol,
        "faults_remaining": state.faults_remaining,
        "design": state.design,
        "current": state.current,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def state_from_json(text: str) -> NetworkState:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StateParseError(f"invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != STATE_SCHEMA:
        raise StateParseError(f"expected a {STATE_SCHEMA} document")
    protocol = doc.get("protocol")
    if protocol not in PROTOCOLS:
        raise StateParseError(f"unknown protocol token {protocol!r}")
    design = doc.get("design")
    current = doc.get("current")
    if not isinstance(design, dict) or not isinstance(current, dict):
        raise StateParseError("design and current must be token maps")
    if set(design) != set(current):
        raise StateParseError("design and current must share one key set")
    for key in design:
        _parse_key(key)
    remaining = sum(1 for k, v in design.items() if current[k] != v)
    if remaining != doc.get("faults_remaining"):
        raise StateParseError(
            f"faults_remaining={doc.get('faults_remaining')} disagrees with recount {remaining}"
        )
    return NetworkState(design=dict(design), current=dict(current), protocol=protocol, faults_remaining=remaining)
