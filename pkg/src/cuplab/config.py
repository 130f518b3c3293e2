"""Strict JSON experiment configuration and environment specs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .cmdp import Cmdp, build_gridworld, build_random_cmdp, build_two_state
from .trainer import CupConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


ENV_KEYS = {
    "two_state": ({"gamma", "b"}, set()),
    "gridworld": ({"width", "height", "hazard_cells", "goal_cell", "gamma", "b"}, {"start_cell"}),
    "random": ({"n_states", "n_actions", "seed"}, {"gamma", "b"}),
}

TOP_KEYS = {"env", "cup", "campaign", "seed", "output_path", "baseline"}


@dataclass(frozen=True)
class CampaignConfig:
    n_cmdps: int = 100
    pairs_per_cmdp: int = 5
    lambdas: tuple = (0.0, 0.5, 0.95)
    state_range: tuple = (1, 6)
    action_range: tuple = (1, 3)
    p: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    env: dict | None = None
    cup: CupConfig = field(default_factory=CupConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    seed: int = 0
    output_path: str | None = None
    baseline: bool = False

    def to_dict(self) -> dict:
        out = asdict(self)
        out["campaign"]["lambdas"] = list(self.campaign.lambdas)
        out["campaign"]["state_range"] = list(self.campaign.state_range)
        out["campaign"]["action_range"] = list(self.campaign.action_range)
        for key in ("env", "output_path"):
            if out[key] is None:
                del out[key]
        return out


def _reject_unknown(section: str, given: dict, allowed) -> None:
    for key in given:
        if key not in allowed:
            raise ConfigError(f"{section}{key}", "unknown key")


def _number(key, value, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, "expected a number")
    if integer and not float(value).is_integer():
        raise ConfigError(key, "expected an integer")
    return int(value) if integer else float(value)


def _range(key, value):
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(key, "expected [low, high]")
    lo, hi = (_number(key, v, integer=True) for v in value)
    if not 1 <= lo <= hi:
        raise ConfigError(key, "need 1 <= low <= high")
    return lo, hi


def parse_env(spec) -> dict:
    if not isinstance(spec, dict):
        raise ConfigError("env", "expected an object")
    kind = spec.get("kind")
    if kind not in ENV_KEYS:
        raise ConfigError("env.kind", f"must be one of {sorted(ENV_KEYS)}")
    required, optional = ENV_KEYS[kind]
    _reject_unknown("env.", spec, required | optional | {"kind"})
    for key in sorted(required):
        if key not in spec:
            raise ConfigError(f"env.{key}", "missing")
    return dict(spec)


def build_env(spec: dict) -> Cmdp:
    spec = parse_env(spec)
    kind = spec.pop("kind")
    try:
        if kind == "two_state":
            return build_two_state(**spec)
        if kind == "gridworld":
            spec["hazard_cells"] = [tuple(h) for h in spec["hazard_cells"]]
            return build_gridworld(**spec)
        return build_random_cmdp(**spec)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"env.{kind}", str(err)) from err


def parse_cup(raw) -> CupConfig:
    if not isinstance(raw, dict):
        raise ConfigError("cup", "expected an object")
    names = {f.name: f for f in fields(CupConfig)}
    _reject_unknown("cup.", raw, names)
    ints = {"horizon_T", "episodes_M", "optimization_epochs", "minibatch", "iterations", "seed"}
    values = {}
    for key, value in raw.items():
        if key == "initial_logits":
            if value is not None and not isinstance(value, list):
                raise ConfigError("cup.initial_logits", "expected a nested list")
            values[key] = value
        elif key == "exact_logging":
            if not isinstance(value, bool):
                raise ConfigError("cup.exact_logging", "expected true or false")
            values[key] = value
        elif value is None and key in ("gamma", "cost_limit"):
            values[key] = None
        else:
            values[key] = _number(f"cup.{key}", value, integer=key in ints)
    try:
        return CupConfig(**values)
    except ValueError as err:
        key = str(err).split()[0]
        raise ConfigError(f"cup.{key}", str(err)) from err


def parse_campaign(raw) -> CampaignConfig:
    if not isinstance(raw, dict):
        raise ConfigError("campaign", "expected an object")
    _reject_unknown("campaign.", raw, {f.name for f in fields(CampaignConfig)})
    values = {}
    for key in ("n_cmdps", "pairs_per_cmdp"):
        if key in raw:
            values[key] = _number(f"campaign.{key}", raw[key], integer=True)
            if values[key] < 1:
                raise ConfigError(f"campaign.{key}", "must be >= 1")
    if "lambdas" in raw:
        lams = raw["lambdas"]
        if not isinstance(lams, list):
            raise ConfigError("campaign.lambdas", "expected a list")
        if not lams:
            raise ConfigError("campaign.lambdas", "empty lambdas")
        lams = tuple(_number("campaign.lambdas", v) for v in lams)
        if any(not 0.0 <= v < 1.0 for v in lams):
            raise ConfigError("campaign.lambdas", "each lambda must lie in [0, 1)")
        values["lambdas"] = lams
    for key in ("state_range", "action_range"):
        if key in raw:
            values[key] = _range(f"campaign.{key}", raw[key])
    if "p" in raw:
        values["p"] = _number("campaign.p", raw["p"], integer=True)
        if values["p"] not in (1, 2):
            raise ConfigError("campaign.p", "must be 1 or 2")
    return CampaignConfig(**values)


def parse_config(doc, require_env: bool = True) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    _reject_unknown("", doc, TOP_KEYS)
    if require_env and "env" not in doc:
        raise ConfigError("env", "missing")
    values = {}
    if "env" in doc:
        values["env"] = parse_env(doc["env"])
    if "cup" in doc:
        values["cup"] = parse_cup(doc["cup"])
    if "campaign" in doc:
        values["campaign"] = parse_campaign(doc["campaign"])
    if "seed" in doc:
        values["seed"] = _number("seed", doc["seed"], integer=True)
    if "output_path" in doc:
        if not isinstance(doc["output_path"], str):
            raise ConfigError("output_path", "expected a string")
        values["output_path"] = doc["output_path"]
    if "baseline" in doc:
        if not isinstance(doc["baseline"], bool):
            raise ConfigError("baseline", "expected true or false")
        values["baseline"] = doc["baseline"]
    return ExperimentConfig(**values)


def _reject_constant(token):
    raise ValueError(f"non-standard JSON constant {token}")


def load_config(path, require_env: bool = True) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh, parse_constant=_reject_constant)
    except OSError as err:
        raise ConfigError("<file>", str(err)) from err
    except ValueError as err:
        raise ConfigError("<json>", str(err)) from err
    return parse_config(doc, require_env=require_env)
