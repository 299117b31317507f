"""Scenario / run configuration: schema, validation and topology building.

A config file is a YAML mapping. Every accepted key is declared in
:data:`SCHEMA`; unknown keys are errors. Element names inside ``hosts`` refer
to the timing catalog (``timing``), a versioned YAML file of element timings.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import yaml

from .channel import (
    ATTACK_KINDS,
    EVASIONS,
    AttackConfig,
    ElementTiming,
    Evasion,
    ResponderTiming,
    SimTopology,
    Traffic,
)

CATALOG_VERSION = 1
_REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, problems: list[str] | str):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Key:
    type: Any
    default: Any = _REQUIRED
    help: str = ""
    choices: tuple | None = None
    nullable: bool = False


@dataclass(frozen=True)
class Section:
    keys: dict
    help: str = ""
    optional: bool = False   # may be absent / null (then stays None)


@dataclass(frozen=True)
class ListOf:
    item: Section
    help: str = ""


_NUM = (int, float)

EVASION = Section({
    "kind": Key(str, "none", "evasion behaviour", EVASIONS),
    "drop_prob": Key(_NUM, 1.0, "DoS: probability each request is dropped"),
    "spoof_responder": Key(str, None, "Spoof: catalog responder that answers instead", nullable=True),
    "bypass_period": Key(int, 10, "BypassB: schedule period in probes"),
    "bypass_active": Key(int, 1, "BypassB: active probes per period"),
    "replay_rebase": Key(str, "transmit", "Replay: align the recording to the sender's transmit "
                         "times or to request arrivals at the interceptor",
                         ("transmit", "observed")),
}, "evasion used by the interceptor")

ATTACK = Section({
    "kind": Key(str, _REQUIRED, "attack topology", ATTACK_KINDS),
    "interceptor": Key(str, _REQUIRED, "catalog element modelling the interceptor"),
    "position": Key(int, 0, "path index where interception happens"),
    "onset_probe": Key(int, 0, "per-host probe index at which the attack starts"),
    "evasion": EVASION,
}, "man-in-the-middle injected on this host's path", optional=True)

HOST = Section({
    "address": Key(str, _REQUIRED, "host address (identity in logs and profiles)"),
    "sender": Key(str, "host_nic", "catalog element for the probing host"),
    "path": Key(list, ["switch"], "catalog elements between the hosts, sender side first"),
    "responder": Key(str, "host", "catalog responder"),
    "traffic": Key(str, "default", "catalog traffic profile"),
    "warmup_packets": Key(int, None, "frames that pay the warm-up penalty", nullable=True),
    "tx_jitter_s": Key(_NUM, None, "mean sender scheduling jitter (s)", nullable=True),
    "attack": ATTACK,
})

SCHEMA = Section({
    "name": Key(str, "unnamed", "scenario name"),
    "description": Key(str, "", "free text"),
    "mirrors": Key(str, "", "experiment (topology / implementation / evasion) this mirrors"),
    "seed": Key(int, None, "master seed; required by simulate", nullable=True),
    "timing": Key(str, "timing_v1", "timing catalog: bundled name or file path"),
    "probe": Section({
        "m": Key(int, 10, "MLS register count"),
        "n": Key(int, None, "probe length; must equal 2^m - 1", nullable=True),
        "rate_hz": Key(_NUM, None, "fixed f_s instead of calibrating", nullable=True),
        "calibration_pings": Key(int, 50, "isolated 1542-byte pings used to calibrate f_s"),
        "timeout_factor": Key(_NUM, 10.0, "reply timeout in multiples of mu_RTT*"),
        "loss_threshold": Key(_NUM, 0.2, "loss fraction above which a probe is degraded"),
    }),
    "detector": Section({
        "p_thr": Key(_NUM, 1e-4, "tail probability below which a score alerts"),
        "grace_n": Key(int, 100, "training observations before alerts are allowed"),
        "guard_a": Key(int, 5, "no training within this many verdicts of an alert"),
        "learning_rate": Key(_NUM, 0.1, "SGD step size"),
        "hidden": Key(int, 2, "autoencoder bottleneck width"),
        "window": Key(int, 60, "score averaging window (probes)"),
        "grace_rate": Key(_NUM, 5.0, "probe-rate multiplier while a host is in grace"),
        "jitter_refs": Key(int, 5, "stored jitter reference samples per host"),
        "jitter_history": Key(int, 15, "p_jit values averaged into v_jit"),
        "alert_dedup_s": Key(_NUM, 0.0, "suppress repeat alerts for a host within this time"),
    }),
    "run": Section({
        "probes": Key(int, 200, "probe cycles to run (simulate)"),
        "log_dir": Key(str, "runs", "directory for score/alert logs"),
        "profile_dir": Key(str, None, "directory for host profiles (default <log_dir>/profiles)",
                           nullable=True),
    }),
    "hosts": ListOf(HOST, "simulated hosts"),
    "live": Section({
        "subnet": Key(str, None, "CIDR of the protected LAN", nullable=True),
        "local_address": Key(str, None, "this host's address", nullable=True),
        "targets": Key(list, [], "addresses to observe at start-up"),
        "heartbeat_s": Key(_NUM, 30.0, "idle heartbeat interval"),
        "reply_timeout_s": Key(_NUM, 0.05, "receiver linger after the last request"),
        "max_cycles": Key(int, None, "stop after this many cycles", nullable=True),
    }),
})


def _typename(t) -> str:
    if isinstance(t, tuple):
        return "number"
    return {str: "string", int: "integer", list: "list", bool: "bool"}.get(t, t.__name__)


def _check(value, key: Key, where: str, problems: list):
    if value is None:
        if key.nullable:
            return None
        problems.append(f"{where}: must not be null")
        return value
    ok = isinstance(value, key.type) and not (isinstance(value, bool) and key.type is not bool)
    if not ok:
        problems.append(f"{where}: expected {_typename(key.type)}, got {type(value).__name__}")
        return value
    if key.choices is not None and value not in key.choices:
        problems.append(f"{where}: {value!r} not one of {list(key.choices)}")
    if key.type == _NUM:
        value = float(value)
    return value


def _validate(data, spec, where: str, problems: list):
    if isinstance(spec, ListOf):
        if data is None:
            return []
        if not isinstance(data, list):
            problems.append(f"{where}: expected a list")
            return []
        return [_validate(d, spec.item, f"{where}[{i}]", problems) for i, d in enumerate(data)]
    if data is None:
        if spec.optional:
            return None
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{where or 'config'}: expected a mapping")
        return {}
    out = {}
    for k in data:
        if k not in spec.keys:
            problems.append(f"{where + '.' if where else ''}{k}: unknown key")
    for name, sub in spec.keys.items():
        path = f"{where}.{name}" if where else name
        if isinstance(sub, (Section, ListOf)):
            out[name] = _validate(data.get(name), sub, path, problems)
        elif name in data:
            out[name] = _check(data[name], sub, path, problems)
        elif sub.default is _REQUIRED:
            problems.append(f"{path}: required")
        else:
            out[name] = copy.deepcopy(sub.default)
    return out


def validate(data: dict | None) -> dict:
    """Fills defaults and checks types; raises ConfigError listing every problem."""
    problems: list[str] = []
    cfg = _validate(data or {}, SCHEMA, "", problems)
    if not problems:
        m, n = cfg["probe"]["m"], cfg["probe"]["n"]
        if not 2 <= m <= 32:
            problems.append("probe.m: must lie in 2..32")
        elif n is None:
            cfg["probe"]["n"] = 2 ** m - 1
        elif n != 2 ** m - 1:
            problems.append(f"probe.n: {n} != 2^{m} - 1 = {2 ** m - 1}")
        d = cfg["detector"]
        if not 0 < d["p_thr"] < 1:
            problems.append("detector.p_thr: must lie in (0, 1)")
        for k in ("grace_n", "window", "jitter_refs", "jitter_history"):
            if d[k] < 1:
                problems.append(f"detector.{k}: must be >= 1")
        if d["hidden"] < 1 or d["hidden"] >= 3:
            problems.append("detector.hidden: must be 1 or 2 (narrower than the 3 features)")
        if d["grace_rate"] < 1:
            problems.append("detector.grace_rate: must be >= 1")
        addrs = [h["address"] for h in cfg["hosts"]]
        if len(set(addrs)) != len(addrs):
            problems.append("hosts: duplicate address")
    if problems:
        raise ConfigError(problems)
    return cfg


def set_dotted(data: dict, dotted: str, value) -> None:
    # numeric parts index into lists, e.g. hosts.0.attack.kind
    node = data
    parts = dotted.split(".")
    for p in parts[:-1]:
        if isinstance(node, list):
            node = _list_item(node, p, dotted)
        else:
            node = node.setdefault(p, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"{dotted}: cannot descend into a scalar")
    if isinstance(node, list):
        i = _list_index(node, parts[-1], dotted)
        node[i] = value
    else:
        node[parts[-1]] = value


def _list_index(node: list, part: str, dotted: str) -> int:
    try:
        i = int(part)
    except ValueError:
        raise ConfigError(f"{dotted}: '{part}' is not a list index") from None
    if not -len(node) <= i < len(node):
        raise ConfigError(f"{dotted}: index {i} out of range")
    return i


def _list_item(node: list, part: str, dotted: str):
    return node[_list_index(node, part, dotted)]


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> dict:
    data: dict = {}
    if path is not None:
        try:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    for k, v in (overrides or {}).items():
        set_dotted(data, k, v)
    return validate(data)


def _walk_keys(spec, prefix: str):
    if isinstance(spec, ListOf):
        yield from _walk_keys(spec.item, prefix + "[]")
        return
    for name, sub in spec.keys.items():
        path = f"{prefix}.{name}" if prefix else name
        if isinstance(sub, (Section, ListOf)):
            yield from _walk_keys(sub, path)
        else:
            default = "required" if sub.default is _REQUIRED else repr(sub.default)
            choice = f" {{{', '.join(map(str, sub.choices))}}}" if sub.choices else ""
            yield path, f"{sub.help}{choice} [{_typename(sub.type)}, default {default}]"


def describe_keys() -> str:
    rows = list(_walk_keys(SCHEMA, ""))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"  {k.ljust(width)}  {h}" for k, h in rows)


# -- timing catalog and bundled scenarios ----------------------------------

@dataclass
class Catalog:
    elements: dict
    responders: dict
    traffic: dict
    defaults: dict = field(default_factory=dict)


def _data_path(*parts) -> str:
    return str(resources.files("echoscope").joinpath("data", *parts))


def bundled_scenarios() -> list[str]:
    d = _data_path("scenarios")
    return sorted(f[:-5] for f in os.listdir(d) if f.endswith(".yaml"))


def scenario_path(name_or_path: str) -> str:
    if os.path.exists(name_or_path):
        return name_or_path
    p = _data_path("scenarios", f"{name_or_path}.yaml")
    if os.path.exists(p):
        return p
    raise ConfigError(f"no scenario file or bundled scenario named {name_or_path!r}")


def load_catalog(name_or_path: str = "timing_v1") -> Catalog:
    path = name_or_path if os.path.exists(name_or_path) else _data_path(f"{name_or_path}.yaml")
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"timing catalog {name_or_path!r} not found") from exc
    if not isinstance(raw, dict) or raw.get("version") != CATALOG_VERSION:
        raise ConfigError(f"timing catalog {name_or_path!r}: unsupported version")
    try:
        elements = {k: ElementTiming(**(v or {})) for k, v in raw["elements"].items()}
        responders = {
            k: ResponderTiming(ElementTiming(**v["nic"]), float(v["reply_s_per_byte"]))
            for k, v in raw["responders"].items()
        }
        traffic = {k: Traffic(**(v or {})) for k, v in raw["traffic"].items()}
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"timing catalog {name_or_path!r}: {exc}") from exc
    return Catalog(elements, responders, traffic, raw.get("defaults") or {})


def _lookup(table: dict, name: str, what: str, where: str):
    try:
        return table[name]
    except KeyError:
        raise ConfigError(f"{where}: unknown {what} {name!r}; catalog has {sorted(table)}") from None


def build_topology(host: dict, catalog: Catalog, where: str = "host") -> SimTopology:
    el, rs = catalog.elements, catalog.responders
    attack = None
    a = host["attack"]
    if a is not None:
        e = a["evasion"]
        spoof = None
        if e["spoof_responder"] is not None:
            spoof = _lookup(rs, e["spoof_responder"], "responder", f"{where}.attack.evasion")
        try:
            ev = Evasion(e["kind"], e["drop_prob"], spoof, e["bypass_period"], e["bypass_active"],
                         e["replay_rebase"])
            attack = AttackConfig(a["kind"], _lookup(el, a["interceptor"], "element", where),
                                  a["position"], ev, a["onset_probe"])
        except ValueError as exc:
            raise ConfigError(f"{where}.attack: {exc}") from exc
    d = catalog.defaults
    wp = host["warmup_packets"] if host["warmup_packets"] is not None else d.get("warmup_packets", 5)
    tj = host["tx_jitter_s"] if host["tx_jitter_s"] is not None else d.get("tx_jitter_s", 0.0)
    try:
        return SimTopology(
            sender=_lookup(el, host["sender"], "element", where),
            path=tuple(_lookup(el, p, "element", where) for p in host["path"]),
            responder=_lookup(rs, host["responder"], "responder", where),
            attack=attack,
            traffic=_lookup(catalog.traffic, host["traffic"], "traffic profile", where),
            warmup_packets=int(wp),
            tx_jitter_s=float(tj),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_topologies(cfg: dict, catalog: Catalog | None = None) -> dict[str, SimTopology]:
    catalog = catalog or load_catalog(cfg["timing"])
    return {h["address"]: build_topology(h, catalog, f"hosts[{i}]")
            for i, h in enumerate(cfg["hosts"])}
