"""Run configuration: TOML loading, dotted-path overrides, schema validation.

The schema mirrors the model's hyperparameter surface (component count K,
latent size, layer width lists, coordinate-encoding m/sigma, flow depth T,
optimizer settings). Unknown keys anywhere are rejected; every field has
an explicit domain.
"""

import copy
import os
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import SYNTHESIZERS
from .likelihoods import LIKELIHOOD_FAMILIES

__all__ = ["ConfigError", "load_config", "parse_override", "validate_config"]

CATEGORICAL_MODES = ("expectation", "sample")


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and not isinstance(v, bool)


def _check(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _block(cfg: dict, name: str, allowed: Sequence[str], required: Sequence[str]) -> dict:
    _check(name in cfg, name, "missing section")
    block = cfg[name]
    _check(isinstance(block, dict), name, "must be a table")
    unknown = set(block) - set(allowed)
    _check(not unknown, name, f"unknown keys {sorted(unknown)}")
    for key in required:
        _check(key in block, f"{name}.{key}", "missing required key")
    return block


def _pos_int(block: dict, key: str, path: str, minimum: int = 1) -> int:
    v = block[key]
    _check(_is_int(v) and v >= minimum, f"{path}.{key}", f"must be an integer >= {minimum}, got {v!r}")
    return v


def _int_list(block: dict, key: str, path: str) -> list:
    v = block[key]
    _check(
        isinstance(v, list) and len(v) >= 1 and all(_is_int(x) and x >= 1 for x in v),
        f"{path}.{key}",
        f"must be a non-empty list of integers >= 1, got {v!r}",
    )
    return v


def validate_config(raw: dict) -> dict:
    """Return a fully-defaulted copy of `raw`, or raise ConfigError."""
    _check(isinstance(raw, dict), "config", "must be a table")
    unknown = set(raw) - {"model", "encoder", "flow", "train", "data", "io", "sampling"}
    _check(not unknown, "config", f"unknown sections {sorted(unknown)}")
    cfg = copy.deepcopy(raw)

    model = _block(
        cfg, "model",
        allowed=["K", "dim_z", "likelihood", "generator_layers", "hypernet_layers",
                 "categorical_layers", "rff"],
        required=["K", "dim_z", "likelihood", "generator_layers", "hypernet_layers",
                  "categorical_layers", "rff"],
    )
    _pos_int(model, "K", "model")
    _pos_int(model, "dim_z", "model")
    _check(model["likelihood"] in LIKELIHOOD_FAMILIES, "model.likelihood",
           f"must be one of {LIKELIHOOD_FAMILIES}, got {model['likelihood']!r}")
    _int_list(model, "generator_layers", "model")
    _int_list(model, "hypernet_layers", "model")
    _int_list(model, "categorical_layers", "model")
    rff = model["rff"]
    _check(isinstance(rff, dict) and set(rff) <= {"m", "sigma"} and {"m", "sigma"} <= set(rff),
           "model.rff", "must be a table with keys m and sigma")
    _pos_int(rff, "m", "model.rff")
    _check(_is_num(rff["sigma"]) and rff["sigma"] > 0, "model.rff.sigma",
           f"must be a positive number, got {rff['sigma']!r}")
    rff["sigma"] = float(rff["sigma"])

    enc = _block(cfg, "encoder", allowed=["layers"], required=["layers"])
    layers = enc["layers"]
    _check(isinstance(layers, list) and len(layers) >= 1, "encoder.layers",
           "must be a non-empty list of layer tables")
    for i, layer in enumerate(layers):
        path = f"encoder.layers[{i}]"
        _check(isinstance(layer, dict), path, "must be a table")
        unknown = set(layer) - {"centroids", "neighbors", "h_weights", "out_channels"}
        _check(not unknown, path, f"unknown keys {sorted(unknown)}")
        for key in ("centroids", "neighbors", "h_weights", "out_channels"):
            _check(key in layer, f"{path}.{key}", "missing required key")
        _pos_int(layer, "centroids", path)
        _pos_int(layer, "neighbors", path)
        _pos_int(layer, "out_channels", path)
        _int_list(layer, "h_weights", path)
        if i > 0:
            prev = layers[i - 1]["centroids"]
            _check(max(layer["centroids"], layer["neighbors"]) <= prev, path,
                   f"centroids/neighbors must not exceed the previous layer's "
                   f"{prev} centroids")

    flow = _block(cfg, "flow", allowed=["T", "warmup_epochs", "init_scale"], required=["T"])
    _pos_int(flow, "T", "flow", minimum=0)
    if "warmup_epochs" in flow:
        _pos_int(flow, "warmup_epochs", "flow", minimum=0)
    flow.setdefault("init_scale", 1e-3)
    _check(_is_num(flow["init_scale"]) and flow["init_scale"] > 0, "flow.init_scale",
           f"must be a positive number, got {flow['init_scale']!r}")
    flow["init_scale"] = float(flow["init_scale"])

    train = _block(
        cfg, "train",
        allowed=["epochs", "bs", "lr", "alpha", "seed", "mc_samples", "gradient_clip_norm"],
        required=["epochs", "bs", "lr", "alpha", "seed"],
    )
    _pos_int(train, "epochs", "train", minimum=0)
    _pos_int(train, "bs", "train")
    _check(_is_num(train["lr"]) and train["lr"] >= 0, "train.lr",
           f"must be a number >= 0, got {train['lr']!r}")
    train["lr"] = float(train["lr"])
    _check(_is_num(train["alpha"]) and 0.0 <= train["alpha"] < 1.0, "train.alpha",
           f"must lie in [0, 1), got {train['alpha']!r}")
    train["alpha"] = float(train["alpha"])
    _pos_int(train, "seed", "train", minimum=0)
    train.setdefault("mc_samples", 1)
    _pos_int(train, "mc_samples", "train")
    train.setdefault("gradient_clip_norm", 10.0)
    _check(_is_num(train["gradient_clip_norm"]) and train["gradient_clip_norm"] > 0,
           "train.gradient_clip_norm",
           f"must be a positive number, got {train['gradient_clip_norm']!r}")
    train["gradient_clip_norm"] = float(train["gradient_clip_norm"])
    # Warm-up defaults to the first tenth of the run.
    flow.setdefault("warmup_epochs", train["epochs"] // 10)

    data = _block(
        cfg, "data",
        allowed=["synthesizer", "path", "n_samples", "grid_shape", "split"],
        required=[],
    )
    has_synth = "synthesizer" in data
    has_path = "path" in data
    _check(has_synth != has_path, "data", "give exactly one of `synthesizer` or `path`")
    if has_synth:
        _check(data["synthesizer"] in SYNTHESIZERS, "data.synthesizer",
               f"must be one of {SYNTHESIZERS}, got {data['synthesizer']!r}")
        _check("n_samples" in data, "data.n_samples", "required with a synthesizer")
        _pos_int(data, "n_samples", "data")
        _check("grid_shape" in data, "data.grid_shape", "required with a synthesizer")
        _int_list(data, "grid_shape", "data")
    else:
        _check(isinstance(data["path"], str) and data["path"], "data.path",
               "must be a non-empty string")
    data.setdefault("split", [0.9, 0.1])
    split = data["split"]
    _check(isinstance(split, list) and len(split) == 2 and all(_is_num(f) for f in split),
           "data.split", f"must be [train_fraction, test_fraction], got {split!r}")
    split = [float(f) for f in split]
    _check(all(0.0 < f < 1.0 for f in split) and abs(sum(split) - 1.0) < 1e-9,
           "data.split", f"fractions must lie in (0, 1) and sum to 1, got {split!r}")
    data["split"] = split

    io_block = _block(cfg, "io", allowed=["output_dir", "checkpoint_interval"],
                      required=["output_dir"])
    _check(isinstance(io_block["output_dir"], str) and io_block["output_dir"],
           "io.output_dir", "must be a non-empty string")
    io_block.setdefault("checkpoint_interval", 0)
    _pos_int(io_block, "checkpoint_interval", "io", minimum=0)

    sampling = cfg.setdefault("sampling", {})
    _check(isinstance(sampling, dict) and set(sampling) <= {"categorical_mode"},
           "sampling", "only key `categorical_mode` is allowed")
    sampling.setdefault("categorical_mode", "expectation")
    _check(sampling["categorical_mode"] in CATEGORICAL_MODES, "sampling.categorical_mode",
           f"must be one of {CATEGORICAL_MODES}, got {sampling['categorical_mode']!r}")
    return cfg


def parse_override(spec: str):
    """Split "a.b.c=value" into a key path and a TOML-parsed value."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    path, raw = spec.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {spec!r} has an empty key path")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return keys, value


def _apply_override(cfg: dict, keys, value):
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {'.'.join(keys)} crosses a non-table value")
    node[keys[-1]] = value


def load_config(path, overrides: Sequence[str] = ()) -> dict:
    """Read a TOML file, apply overrides, validate, honor the output-dir env var."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}")
    for spec in overrides:
        keys, value = parse_override(spec)
        _apply_override(raw, keys, value)
    env_dir = os.environ.get("FUNCMIX_OUTPUT_DIR")
    if env_dir:
        raw.setdefault("io", {})["output_dir"] = env_dir
    return validate_config(raw)
