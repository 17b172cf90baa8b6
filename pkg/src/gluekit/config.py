"""Experiment configuration: schema validation, presets, overrides, hashing.

One JSON document per experiment.  Top-level keys are fixed (kind, seed,
parallelism, output_dir, params); the params block is validated per kind and
unknown fields are rejected everywhere, so a typo fails fast instead of
silently running a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "load_preset",
           "list_presets", "apply_overrides", "config_hash", "KINDS"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


KINDS = ("glue", "simcap", "synth-sweep", "theory-curve", "cover-check", "train2l", "one-step")

_TOP_KEYS = {"kind", "seed", "parallelism", "output_dir", "params"}


def _require(d: dict, key: str, types, ctx: str):
    if key not in d:
        raise ConfigError(f"{ctx}: missing required field {key!r}")
    val = d[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError(f"{ctx}: field {key!r} has type {type(val).__name__}, expected {types}")
    return val


def _check_keys(d: dict, allowed, ctx: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{ctx}: unknown fields {sorted(unknown)} (allowed: {sorted(allowed)})")


def _num_list(d, key, ctx, required=True):
    if key not in d:
        if required:
            raise ConfigError(f"{ctx}: missing required field {key!r}")
        return None
    vals = d[key]
    if not isinstance(vals, list) or not vals or not all(isinstance(v, (int, float)) for v in vals):
        raise ConfigError(f"{ctx}: {key!r} must be a non-empty list of numbers")
    return vals


_LABEL_KEYS = {"name", "gain", "p"}


def _check_label(d, ctx):
    if not isinstance(d, dict):
        raise ConfigError(f"{ctx}: label block must be an object")
    _check_keys(d, _LABEL_KEYS, ctx)
    name = _require(d, "name", str, ctx)
    if name not in ("logistic", "constant"):
        raise ConfigError(f"{ctx}: label name must be 'logistic' or 'constant'")


def _check_source(d, ctx):
    if not isinstance(d, dict):
        raise ConfigError(f"{ctx}: source block must be an object")
    if "activations" in d:
        _check_keys(d, {"activations", "format", "labels"}, ctx)
        _require(d, "format", str, ctx)
        _require(d, "labels", str, ctx)
    elif "synth" in d:
        _check_keys(d, {"synth", "correlations", "split"}, ctx)
        synth = _require(d, "synth", dict, ctx)
        _check_keys(synth, {"P", "M", "D", "R", "d", "noise_eps"}, f"{ctx}.synth")
        for k in ("P", "M", "D", "d"):
            _require(synth, k, int, f"{ctx}.synth")
        _require(synth, "R", (int, float), f"{ctx}.synth")
        if "correlations" in d:
            corr = d["correlations"]
            _check_keys(corr, {"rho_center", "rho_axis", "psi_center_axis"}, f"{ctx}.correlations")
    else:
        raise ConfigError(f"{ctx}: source needs either 'activations' or 'synth'")


def _validate_params(kind: str, p: dict):
    ctx = f"params[{kind}]"
    if not isinstance(p, dict):
        raise ConfigError(f"{ctx}: params must be an object")
    if kind == "cover-check":
        _check_keys(p, {"N", "P_grid", "m", "sim_points"}, ctx)
        _require(p, "N", int, ctx)
        _num_list(p, "P_grid", ctx)
        _require(p, "m", int, ctx)
    elif kind == "glue":
        _check_keys(p, {"source", "n_draws", "absolute_alignments"}, ctx)
        _check_source(_require(p, "source", dict, ctx), f"{ctx}.source")
        _require(p, "n_draws", int, ctx)
    elif kind == "simcap":
        _check_keys(p, {"source", "m", "method"}, ctx)
        _check_source(_require(p, "source", dict, ctx), f"{ctx}.source")
        if p.get("method", "binary_search") not in ("binary_search", "sum_form"):
            raise ConfigError(f"{ctx}: method must be binary_search or sum_form")
    elif kind == "synth-sweep":
        _check_keys(p, {"base", "sweeps", "n_draws", "seeds", "absolute_alignments"}, ctx)
        base = _require(p, "base", dict, ctx)
        _check_keys(base, {"P", "M", "D", "R", "d", "noise_eps"}, f"{ctx}.base")
        sweeps = _require(p, "sweeps", list, ctx)
        for i, sw in enumerate(sweeps):
            _check_keys(sw, {"param", "values"}, f"{ctx}.sweeps[{i}]")
            if _require(sw, "param", str, f"{ctx}.sweeps[{i}]") not in ("D", "R", "rho_center", "rho_axis", "psi_center_axis"):
                raise ConfigError(f"{ctx}.sweeps[{i}]: unknown sweep param")
            _num_list(sw, "values", f"{ctx}.sweeps[{i}]")
        _require(p, "n_draws", int, ctx)
        _require(p, "seeds", int, ctx)
    elif kind == "theory-curve":
        _check_keys(p, {"psi1", "psi2", "eta_grid", "label", "activation", "quadrature_order"}, ctx)
        _require(p, "psi1", (int, float), ctx)
        _require(p, "psi2", (int, float), ctx)
        _num_list(p, "eta_grid", ctx)
        _check_label(_require(p, "label", dict, ctx), f"{ctx}.label")
        _require(p, "activation", str, ctx)
    elif kind == "one-step":
        _check_keys(p, {"d", "psi1", "psi2", "eta_grid", "replicates", "label", "activation", "n_test"}, ctx)
        _require(p, "d", int, ctx)
        _num_list(p, "eta_grid", ctx)
        _require(p, "replicates", int, ctx)
        _check_label(_require(p, "label", dict, ctx), f"{ctx}.label")
        _require(p, "activation", str, ctx)
    elif kind == "train2l":
        _check_keys(p, {"d", "N", "P", "M", "K", "R", "intrinsic_dim", "data", "eta",
                        "eta_bar_grid", "loss", "readout_lr_factor", "epochs", "seeds",
                        "checkpoints", "glue_draws", "glue_draws_final", "activation"}, ctx)
        for k in ("d", "N", "P", "M", "K", "epochs", "seeds"):
            _require(p, k, int, ctx)
        _require(p, "eta", (int, float), ctx)
        _num_list(p, "eta_bar_grid", ctx)
        if p.get("data", "gaussian") not in ("gaussian", "spherical"):
            raise ConfigError(f"{ctx}: data must be 'gaussian' or 'spherical'")
        if p.get("checkpoints", "endpoints") not in ("endpoints", "log50"):
            raise ConfigError(f"{ctx}: checkpoints must be 'endpoints' or 'log50'")
    else:
        raise ConfigError(f"unknown experiment kind {kind!r} (known: {KINDS})")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    params: dict
    output_dir: str = "results"
    parallelism: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r} (known: {KINDS})")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.parallelism is not None and (not isinstance(self.parallelism, int) or self.parallelism < 1):
            raise ConfigError("parallelism must be a positive integer or null")
        _validate_params(self.kind, self.params)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "output_dir": self.output_dir,
            "params": self.params,
        }


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    kind = _require(doc, "kind", str, "config")
    seed = _require(doc, "seed", int, "config")
    return ExperimentConfig(
        kind=kind,
        seed=seed,
        params=_require(doc, "params", dict, "config"),
        output_dir=doc.get("output_dir", "results"),
        parallelism=doc.get("parallelism"),
    )


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


def list_presets() -> list:
    root = resources.files("gluekit").joinpath("presets")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    ref = resources.files("gluekit").joinpath("presets").joinpath(f"{name}.json")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}; available: {list_presets()}") from None
    return config_from_dict(json.loads(text))


def apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply 'dotted.path=json-value' overrides and re-validate."""
    doc = json.loads(json.dumps(config.to_dict()))
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return config_from_dict(doc)


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
