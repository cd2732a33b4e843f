"""Typed run configuration: defaults < config file < command-line overrides."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .backend.matching import MatchParams
from .backend.pnp import RansacParams
from .backend.tracker import TrackerConfig
from .dataset_io import read_kv
from .exceptions import ConfigError
from .sensors import DepthNoiseModel, DescriptorNoiseModel, MaskNoiseModel, NoiseConfig


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _int(text) -> int:
    if text is None or isinstance(text, bool):
        raise ValueError("expected an integer")
    if isinstance(text, int):
        return text
    f = float(text)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(f)


def _float(text) -> float:
    if text is None or isinstance(text, bool):
        raise ValueError("expected a number")
    f = float(text)
    if not math.isfinite(f):
        raise ValueError(f"expected a finite number, got {text!r}")
    return f


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return _float(text)


def _opt_int(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return _int(text)


def _int_list(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(_int(x) for x in text)
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    return tuple(_int(p) for p in parts)


@dataclass(frozen=True)
class Key:
    parse: callable
    default: object
    check: callable = lambda v: True
    message: str = ""


_pos = lambda v: v > 0
_nonneg = lambda v: v >= 0
_prob = lambda v: 0 <= v < 1

KEYS: dict[str, Key] = {
    # front end
    "budget": Key(_int, 1000, lambda v: v >= 1, "must be >= 1"),
    "dilation_radius_px": Key(_opt_int, None, lambda v: v is None or v >= 0, "must be >= 0"),
    "d_min": Key(_float, 0.3, _pos, "must be > 0"),
    "d_max": Key(_float, 7.5, _pos, "must be > 0"),
    "grid_x": Key(_int, 8, lambda v: v >= 1, "must be >= 1"),
    "grid_y": Key(_int, 8, lambda v: v >= 1, "must be >= 1"),
    "masking": Key(_bool, True),
    "dynamic_classes": Key(_int_list, (1,), lambda v: all(0 < c < 65536 for c in v), "ids in 1..65535"),
    # back end
    "sigma_d_rel": Key(_float, 0.05, _pos, "must be > 0"),
    "sigma_d_abs": Key(_opt_float, None, lambda v: v is None or v > 0, "must be > 0"),
    "huber_delta_px": Key(_float, 2.45, _pos, "must be > 0"),
    "ransac_max_iterations": Key(_int, 300, lambda v: v >= 1, "must be >= 1"),
    "ransac_reproj_threshold_px": Key(_float, 2.0, _pos, "must be > 0"),
    "ransac_min_inliers": Key(_int, 15, lambda v: v >= 4, "must be >= 4"),
    "ransac_confidence": Key(_float, 0.99, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "ba_window": Key(_int, 5, lambda v: v >= 2, "must be >= 2"),
    "ba_max_iters": Key(_int, 20, _nonneg, "must be >= 0"),
    "keyframe_min_ratio": Key(_float, 0.8, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "keyframe_max_gap": Key(_int, 10, lambda v: v >= 1, "must be >= 1"),
    "depth_prior": Key(_bool, True),
    # sensor noise
    "depth_scale_cv": Key(_float, 0.0, _nonneg, "must be >= 0"),
    "depth_ar1_phi": Key(_float, 0.0, lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "depth_additive_sigma": Key(_float, 0.0, _nonneg, "must be >= 0"),
    "depth_rel_sigma": Key(_float, 0.0, _nonneg, "must be >= 0"),
    "depth_dropout_rate": Key(_float, 0.0, _prob, "must lie in [0, 1)"),
    "depth_distance_bias_gain": Key(_float, 0.0, _nonneg, "must be >= 0"),
    "descriptor_flip_prob": Key(_float, 0.0, lambda v: 0 <= v < 0.5, "must lie in [0, 0.5)"),
    "mask_boundary_jitter_px": Key(_int, 0),
    "mask_miss_rate": Key(_float, 0.0, lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "seed": Key(_int, 0, _nonneg, "must be >= 0"),
}


class RunConfig:
    """Validated settings for one pipeline run."""

    def __init__(self, values: dict | None = None):
        self.values = {name: key.default for name, key in KEYS.items()}
        if values:
            self.update(values)

    def update(self, values: dict, source: str = "") -> "RunConfig":
        where = f"{source}: " if source else ""
        for name, raw in values.items():
            if name not in KEYS:
                raise ConfigError(f"{where}unknown key {name!r}")
            key = KEYS[name]
            try:
                value = key.parse(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}bad value for {name}: {exc}") from None
            if not key.check(value):
                raise ConfigError(f"{where}{name} {key.message} (got {raw!r})")
            self.values[name] = value
        if not self.values["d_min"] < self.values["d_max"]:
            raise ConfigError("d_min must be smaller than d_max")
        return self

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            cfg.update(read_kv(path), source=str(path))
        if overrides:
            cfg.update(overrides, source="command line")
        return cfg

    def __getitem__(self, name):
        return self.values[name]

    def frontend_kwargs(self) -> dict:
        v = self.values
        return {n: v[n] for n in ("budget", "dilation_radius_px", "d_min", "d_max", "grid_x", "grid_y",
                                  "masking", "dynamic_classes")}

    def tracker_config(self) -> TrackerConfig:
        v = self.values
        ransac = RansacParams(v["ransac_max_iterations"], v["ransac_reproj_threshold_px"],
                              v["ransac_min_inliers"], v["ransac_confidence"])
        return TrackerConfig(ransac=ransac, match=MatchParams(), sigma_d_rel=v["sigma_d_rel"],
                             sigma_d_abs=v["sigma_d_abs"], huber_delta_px=v["huber_delta_px"],
                             ba_window=v["ba_window"], ba_max_iters=v["ba_max_iters"],
                             keyframe_min_ratio=v["keyframe_min_ratio"],
                             keyframe_max_gap=v["keyframe_max_gap"], depth_prior=v["depth_prior"],
                             seed=v["seed"])

    def noise_config(self) -> NoiseConfig:
        v = self.values
        depth = DepthNoiseModel(v["depth_scale_cv"], v["depth_ar1_phi"], v["depth_additive_sigma"],
                                v["depth_rel_sigma"], v["depth_dropout_rate"],
                                v["depth_distance_bias_gain"])
        return NoiseConfig(depth, DescriptorNoiseModel(v["descriptor_flip_prob"]),
                           MaskNoiseModel(v["mask_boundary_jitter_px"], v["mask_miss_rate"]))

    def has_noise(self) -> bool:
        n = self.noise_config()
        return not (n.depth.is_zero and n.descriptors.flip_prob == 0
                    and n.masks.miss_rate == 0 and n.masks.boundary_jitter_px == 0)
