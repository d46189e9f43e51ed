"""Flat key-value configuration shared by the CLI commands.

File format: one `key = value` per line, `#` comments, blank lines ignored.
Vector values are whitespace-separated, class lists accept commas too. Every
key has a default, so an empty (or absent) file is a valid configuration.
The environment variable POINTPASTE_CONFIG supplies a default file path when
the --config flag is not given.
"""

from __future__ import annotations

import dataclasses
import os
from typing import Optional

from .cloud import RangeImageConfig, SearchArea
from .ground import GroundDetectorParams
from .insertion import InsertionConfig
from .losses import LossWeights, SwapPolicy
from .pool import DbscanParams

CONFIG_ENV = "POINTPASTE_CONFIG"


class ConfigError(ValueError):
    """Unknown key, malformed line or unparseable value."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_vec3(text: str) -> tuple:
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError(f"expected 3 numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_ints(text: str) -> tuple:
    parts = text.replace(",", " ").split()
    return tuple(int(p) for p in parts)


@dataclasses.dataclass
class ToolkitConfig:
    seed: int = 0
    workers: int = 1
    num_classes: int = 8
    classes_of_interest: tuple = ()

    voxel_size: float = 0.5
    search_lo: tuple = (-40.0, -40.0, -3.0)
    search_hi: tuple = (40.0, 40.0, 2.0)
    n_objects: int = 1
    max_attempts: int = 16

    rv_height: int = 64
    rv_width: int = 1024
    rv_fov_up: float = 0.26179938779914941
    rv_fov_down: float = -0.26179938779914941
    rv_max_range: float = 80.0

    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 10
    per_class_cap: int = 1000

    ground_cell_size: float = 2.0
    ground_sectors: int = 16
    ground_ransac_iters: int = 50
    ground_inlier_threshold: float = 0.15
    ground_max_slope: float = 0.3490658503988659
    ground_seed_margin: float = 0.3

    refine_k: int = 5
    refine_radius: float = 2.0

    w_xm_source: float = 1.0
    w_xm_target: float = 1.0
    w_insert_ce: float = 0.1
    w_mask_consistency: float = 0.01
    literal_entropy_sign: bool = False

    swap_probability: float = 0.7
    swap_per_point: bool = False
    ema_alpha: float = 0.99
    pseudo_threshold: float = 0.9
    mask_area_cap: float = 0.1

    # dotted builders for the library-level parameter objects

    def range_view(self) -> RangeImageConfig:
        return RangeImageConfig(height=self.rv_height, width=self.rv_width,
                                fov_up=self.rv_fov_up, fov_down=self.rv_fov_down,
                                max_range=self.rv_max_range)

    def area(self) -> SearchArea:
        return SearchArea(corner_lo=self.search_lo, corner_hi=self.search_hi)

    def insertion(self) -> InsertionConfig:
        return InsertionConfig(area=self.area(), range_view=self.range_view(),
                               voxel_size=self.voxel_size, n_objects=self.n_objects,
                               max_attempts=self.max_attempts, refine_k=self.refine_k,
                               refine_radius=self.refine_radius)

    def detector(self) -> GroundDetectorParams:
        return GroundDetectorParams(cell_size=self.ground_cell_size,
                                    sectors=self.ground_sectors,
                                    ransac_iters=self.ground_ransac_iters,
                                    inlier_threshold=self.ground_inlier_threshold,
                                    max_slope=self.ground_max_slope,
                                    seed_height_margin=self.ground_seed_margin)

    def dbscan(self) -> DbscanParams:
        return DbscanParams(eps=self.dbscan_eps, min_pts=self.dbscan_min_pts)

    def weights(self) -> LossWeights:
        return LossWeights(xm_source=self.w_xm_source, xm_target=self.w_xm_target,
                           insert_ce=self.w_insert_ce,
                           mask_consistency=self.w_mask_consistency)

    def swap_policy(self) -> SwapPolicy:
        return SwapPolicy(probability=self.swap_probability,
                          per_point=self.swap_per_point)

    def set_key(self, key: str, raw: str) -> None:
        """Assign one key from its textual form. Raises ConfigError."""
        if not hasattr(self, key) or key.startswith("_") or callable(getattr(self, key)):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                value = _parse_bool(raw)
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            elif key == "classes_of_interest":
                value = _parse_ints(raw)
            elif isinstance(current, tuple):
                value = _parse_vec3(raw)
            else:
                value = raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
        setattr(self, key, value)


def load_config(path) -> ToolkitConfig:
    cfg = ToolkitConfig()
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for ln, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, _, raw = text.partition("=")
            cfg.set_key(key.strip(), raw.strip())
    return cfg


def save_config(cfg: ToolkitConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = " ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def resolve_config(path: Optional[str], overrides=()) -> ToolkitConfig:
    """Load --config, else $POINTPASTE_CONFIG, else defaults; apply --set pairs."""
    chosen = path or os.environ.get(CONFIG_ENV) or None
    cfg = load_config(chosen) if chosen else ToolkitConfig()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg.set_key(key.strip(), raw.strip())
    return cfg
