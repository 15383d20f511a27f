"""YAML files for topologies, transport params, scenarios and experiment matrices.

One schema for everything; durations are ms, sizes are bytes, bandwidth is bytes/s.

    topology:
      preset: three_leg            # optional; remaining keys are preset arguments
      rtt_client: 32.7
    # or an explicit graph
    topology:
      hosts: [{id: client, role: client}, {id: rc, role: relay, zone: cloud}, ...]
      links: [{a: client, b: rc, latency_ms: 16.35, bandwidth: 12.5e6, loss_rate: 0, queue_capacity: 64}, ...]
      pairs: [[client, server]]

    scenario:
      strategy: split              # ideal | e2e | nosplit_relay | split
      file_size: 1000000
      features: Pied Piper         # a ladder name or {early_syn: true, thread_pool: true, ...}
      params: {client: {init_cwnd: 10}, cloud: {...}, server: {...}, e2e: {...}}
      turbo: {init_cwnd: 10000, window: 67108864}
      fork_delay_ms: 0.012
    seed: 0

A matrix file holds `topologies` (a list of topology blocks, optionally with `name`),
`strategies`, `feature_sets`, `sizes`, `repetitions`, `mode`, `seed` and `params`.
"""

from __future__ import annotations

import re
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .core_model import FeatureSet, Host, Link, Topology, TransportParams, three_leg_topology

PRESETS = {"three_leg": three_leg_topology}


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads 1e10 and 1.5e9 as floats (plain YAML 1.1 wants 1.0e+10)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    pass


def _only(d: dict, allowed, what: str) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown {what} keys: {sorted(extra)}")


def topology_from_dict(d: dict) -> Topology:
    d = dict(d)
    d.pop("name", None)
    preset = d.pop("preset", None)
    if preset is not None:
        try:
            return PRESETS[preset](**d)
        except KeyError:
            raise ConfigError(f"unknown topology preset {preset!r}") from None
        except TypeError as exc:
            raise ConfigError(f"preset {preset}: {exc}") from None
    _only(d, ("hosts", "links", "pairs"), "topology")
    try:
        hosts = [Host(**h) for h in d["hosts"]]
        links = [Link(**ln) for ln in d["links"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad topology: {exc}") from None
    return Topology(hosts, links, [tuple(p) for p in d.get("pairs", ())])


def topology_to_dict(t: Topology) -> dict:
    return {
        "hosts": [{"id": h.id, "role": h.role.value, "zone": h.zone.value, "address": h.address} for h in t.hosts.values()],
        "links": [asdict(ln) for ln in t.links],
        "pairs": [list(p) for p in t.pairs],
    }


_PARAM_FIELDS = {f.name for f in fields(TransportParams)}


def params_from_dict(d: dict | None, base: TransportParams | None = None) -> TransportParams:
    d = dict(d or {})
    _only(d, _PARAM_FIELDS, "params")
    merged = asdict(base or TransportParams())
    merged.update(d)
    return TransportParams(**merged)


def features_from(v) -> FeatureSet:
    if isinstance(v, FeatureSet):
        return v
    if v is None:
        return FeatureSet()
    if isinstance(v, str):
        return FeatureSet.from_name(v)
    if isinstance(v, dict):
        _only(v, ("early_syn", "thread_pool", "connection_pool", "turbo_start"), "features")
        return FeatureSet(**{k: bool(x) for k, x in v.items()})
    raise ConfigError(f"cannot read feature set from {v!r}")


def scenario_from_dict(d: dict, topology: Topology | None = None):
    from .pipe_timing import Scenario  # pipe_timing imports netlab; keep this module light

    d = dict(d)
    _only(d, ("strategy", "file_size", "features", "params", "turbo", "fork_delay_ms", "preamble_delay_ms",
              "delta_c_ms", "delta_s_ms", "client", "server", "relays"), "scenario")
    if topology is None:
        raise ConfigError("scenario needs a topology")
    turbo = d.get("turbo") or {}
    try:
        return Scenario(
            topology=topology,
            strategy=d.get("strategy", "split"),
            file_size=int(d["file_size"]),
            features=features_from(d.get("features")),
            params_per_leg={leg: params_from_dict(p) for leg, p in (d.get("params") or {}).items()},
            turbo_params=TransportParams.turbo(**turbo),
            fork_delay=float(d.get("fork_delay_ms", 0.012)),
            preamble_delay=float(d.get("preamble_delay_ms", 0.0)),
            delta_c=float(d.get("delta_c_ms", 0.0)),
            delta_s=float(d.get("delta_s_ms", 0.0)),
            client=d.get("client"),
            server=d.get("server"),
            relays=tuple(d.get("relays") or ()),
        )
    except KeyError as exc:
        raise ConfigError(f"scenario missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from None


def read_yaml(path) -> dict:
    with open(path) as fh:
        doc = yaml.load(fh, Loader=_Loader)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return doc


def load_scenario(path):
    """Returns (Scenario, seed)."""
    doc = read_yaml(path)
    topo = topology_from_dict(doc.get("topology") or {"preset": "three_leg"})
    return scenario_from_dict(doc.get("scenario") or {}, topo), int(doc.get("seed", 0))


def dump_yaml(doc: dict, path=None) -> str:
    text = yaml.safe_dump(doc, sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
