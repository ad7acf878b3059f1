"""Pipeline configuration: the full default table, named presets, and a JSON
config-file schema.

A config file is a JSON object; an optional "preset" key applies one of the
named presets first, then the remaining keys override individual fields:

    {"preset": "abdomen-like", "k": 8, "k_proj": 6}
"""

import json
from dataclasses import asdict, dataclass

from .bandslice import BandSliceConfig
from .encoder import SliceEncoderSpec
from .errors import ParameterError
from .grid import NORMALIZERS
from .mask import MaskConfig
from .mind import MindConfig


@dataclass
class PipelineConfig:
    # per-axis PCA channels and second-stage output channels
    k: int = 24
    k_proj: int = 24
    # coarse fitting grid
    grid_sp: int = 4
    eps: float = 1e-6
    # encoded-slice stride
    stride: int = 3
    # foreground masking
    tau: float = 0.99
    mask_radius: int = 2
    mask_dilation: int = 2
    mask_enabled: bool = True
    # hybrid descriptor stage
    hybrid_radius: int = 1
    hybrid_dilation: int = 2
    # per-role intensity normalization
    normalize_fixed: str = "mr"
    normalize_moving: str = "ct"
    # slice alignment search
    eta: float = 0.99
    sigma_min: float = 0.8
    sigma_max: float = 1.25
    sigma_steps: int = 41
    delta_step: float = 1.0
    rho: float = 0.5
    rounds: int = 3
    # label transfer
    knn_k: int = 7
    # encoder geometry
    encoder_kind: str = "synthetic"
    encoder_channels: int = 12
    encoder_patch: int = 4
    encoder_scale: float = 1.0
    encoder_seed: int = 0

    def validate(self):
        if self.k < 1 or self.k_proj < 1:
            raise ParameterError("k and k_proj must be >= 1")
        if self.k_proj > 3 * self.k:
            raise ParameterError(
                f"k_proj={self.k_proj} exceeds the 3k={3 * self.k} concatenated channels"
            )
        if self.grid_sp < 1:
            raise ParameterError(f"grid_sp must be >= 1, got {self.grid_sp}")
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")
        for role, name in (
            ("normalize_fixed", self.normalize_fixed),
            ("normalize_moving", self.normalize_moving),
        ):
            if name not in NORMALIZERS:
                raise ParameterError(
                    f"{role} must be one of {sorted(NORMALIZERS)}, got {name!r}"
                )
        if self.knn_k < 1:
            raise ParameterError(f"knn_k must be >= 1, got {self.knn_k}")
        self.mask_config().validate()
        self.hybrid_mind_config().validate()
        self.bandslice_config().validate()
        # the feature source is supplied per invocation, not by the config;
        # a placeholder keeps kind="precomputed" validatable here
        self.encoder_spec(source="-").validate()

    def mask_config(self):
        return MaskConfig(
            self.tau, MindConfig(self.mask_radius, self.mask_dilation)
        )

    def hybrid_mind_config(self):
        return MindConfig(self.hybrid_radius, self.hybrid_dilation)

    def bandslice_config(self):
        return BandSliceConfig(
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
            sigma_steps=self.sigma_steps,
            delta_step=self.delta_step,
            rho=self.rho,
            eta=self.eta,
            rounds=self.rounds,
        )

    def encoder_spec(self, sign=1, source=""):
        return SliceEncoderSpec(
            kind=self.encoder_kind,
            channels=self.encoder_channels,
            patch=self.encoder_patch,
            scale=self.encoder_scale,
            seed=self.encoder_seed,
            sign=sign,
            source=source,
        )

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "abdomen-like": {
        "normalize_fixed": "mr",
        "normalize_moving": "ct",
        "eta": 0.99,
        "encoder_patch": 16,
        "encoder_scale": 6.0,
    },
    "hcp-like": {
        "normalize_fixed": "p99",
        "normalize_moving": "p99",
        "eta": 0.1,
        "encoder_patch": 16,
        "encoder_scale": 4.0,
    },
}


def config_from_dict(d):
    d = dict(d)
    fields = set(PipelineConfig.__dataclass_fields__)
    preset = d.pop("preset", None)
    base = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ParameterError(
                f"unknown preset {preset!r}, choose from {sorted(PRESETS)}"
            )
        base.update(PRESETS[preset])
    unknown = set(d) - fields
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    base.update(d)
    cfg = PipelineConfig(**base)
    cfg.validate()
    return cfg


def load_config(path):
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ParameterError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(d, dict):
        raise ParameterError(f"{path}: config must be a JSON object")
    return config_from_dict(d)


def save_config(path, cfg):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
