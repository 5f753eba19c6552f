"""Flat run configuration: one dataclass holding every tunable parameter,
parsed from key=value files, overridable by CLI flags (flags > file >
defaults), and hashable for reproducibility records."""

import hashlib
from dataclasses import dataclass, fields

from .fusion import FusionConfig
from .raycast import PredictionParams
from .registration import RegistrationConfig


@dataclass
class RunConfig:
    # dataset / run
    input: str = ""                   # sequence root; empty means synthetic
    format: str = "synthetic"         # tum | synthetic
    scene: str = "room"               # synthetic scene name
    max_frames: int = 0               # 0 means all
    noise_sigma: float = 0.0          # depth units at the depth scale
    predictor: str = "hrbf"           # hrbf | splat
    seed: int = 0
    width: int = 320                  # synthetic render size
    height: int = 240
    output_traj: str = ""
    output_ply: str = ""
    report: str = ""

    # preprocessing
    bilateral_sigma_s: float = 4.5
    bilateral_sigma_r: float = 0.03
    bilateral_radius: int = 3
    support_k: int = 8
    support_window: int = 7
    support_r_min: float = 0.002
    support_r_max: float = 0.5

    # implicit field / confidence
    eta: float = 1.0e6
    conf_epsilon: float = 0.02
    conf_sigma: float = 0.6

    # prediction
    gap_min: float = 0.1
    gap_factor: float = 2.0
    n_probe: int = 8
    bisect_tol: float = 1e-5
    bisect_max_iter: int = 32
    kappa_clamp: float = 300.0
    t_min: float = 0.05

    # registration
    window: int = 5
    w_geom: float = 10.0
    mu_d: float = 1.0 / 3.0
    mu_a: float = 1.0 / 3.0
    mu_c: float = 1.0 / 3.0
    max_iterations: int = 20
    prune_distance: float = 0.1
    prune_angle_deg: float = 20.0
    kappa_ref: float = 20.0
    z_ref: float = 1.0
    weight_floor: float = 0.5
    huber_delta: float = 0.1
    photo_depth_gap: float = 0.3
    use_photometric: bool = True
    min_correspondences: int = 6

    # fusion
    delta_merge: float = 0.01
    theta_merge_deg: float = 20.0
    c_stable: float = 10.0
    t_unstable: int = 20
    supersample: int = 4

    def prediction_params(self):
        return PredictionParams(
            eta=self.eta, gap_min=self.gap_min, gap_factor=self.gap_factor,
            n_probe=self.n_probe, bisect_tol=self.bisect_tol,
            bisect_max_iter=self.bisect_max_iter,
            kappa_clamp=self.kappa_clamp, t_min=self.t_min)

    def registration_config(self):
        return RegistrationConfig(
            window=self.window, mu_d=self.mu_d, mu_a=self.mu_a,
            mu_c=self.mu_c, w_geom=self.w_geom,
            max_iterations=self.max_iterations,
            prune_distance=self.prune_distance,
            prune_angle_deg=self.prune_angle_deg, kappa_ref=self.kappa_ref,
            z_ref=self.z_ref, weight_floor=self.weight_floor,
            huber_delta=self.huber_delta,
            photo_depth_gap=self.photo_depth_gap,
            use_photometric=self.use_photometric,
            min_correspondences=self.min_correspondences)

    def fusion_config(self):
        return FusionConfig(
            delta_merge=self.delta_merge,
            theta_merge_deg=self.theta_merge_deg, c_stable=self.c_stable,
            t_unstable=self.t_unstable, supersample=self.supersample,
            t_min=self.t_min)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool" or kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key '{key}': expected a boolean, got '{raw}'")
    if kind == "int" or kind is int:
        return int(raw)
    if kind == "float" or kind is float:
        return float(raw)
    return raw


def parse_config_file(path):
    """key=value lines with # comments; returns {field: coerced value}.
    Unknown keys are an error."""
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{ln}: unknown config key '{key}'")
            out[key] = _coerce(key, raw)
    return out


def build_config(file_path=None, overrides=None):
    """Layered config: defaults, then file values, then explicit overrides."""
    values = {}
    if file_path:
        values.update(parse_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key '{key}'")
        values[key] = val
    return RunConfig(**values)


def config_hash(cfg):
    """Stable short digest of every field, for run metadata."""
    payload = ";".join(f"{f.name}={getattr(cfg, f.name)!r}"
                       for f in fields(RunConfig))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
