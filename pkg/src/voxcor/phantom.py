"""Synthetic two-modality phantoms.

Modality A is a sum of compactly supported polynomial bumps with distinct
intensity levels on a constant background (so the descriptor-based mask sees
exact background).  Modality B applies a monotone intensity remap plus
optional additive noise; for encoder tests B can instead request a
feature-level sign flip, in which case the returned `sign_b` is -1 and the
B volume equals A (the flip is applied by the slice encoder, not to the
intensities).

Subjects are realized by seeding: structure centers and radii are jittered
per seed around a fixed canonical layout, so two seeds give plausibly
corresponding anatomy for cross-subject transfer.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .grid import LabelVolume, Mask, Volume

# canonical structure centers in unit-cube coordinates
_CANONICAL = np.array(
    [
        [0.32, 0.32, 0.34],
        [0.68, 0.66, 0.32],
        [0.34, 0.68, 0.68],
        [0.66, 0.34, 0.66],
        [0.50, 0.50, 0.50],
        [0.28, 0.58, 0.46],
        [0.60, 0.28, 0.44],
        [0.52, 0.62, 0.26],
    ]
)


@dataclass
class PhantomSpec:
    dims: tuple = (32, 32, 32)
    seed: int = 0
    n_structures: int = 4
    spacing: tuple = (1.0, 1.0, 1.0)
    remap: str = "gamma"       # modality-B intensity map: "gamma" or "none"
    gamma: float = 0.6
    noise: float = 0.0         # additive iid noise std on modality B
    flip: bool = False         # modality-B features sign-flipped at encode time

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ParameterError(f"dims must be 3 axes of >= 8 voxels, got {self.dims}")
        if not 1 <= self.n_structures <= len(_CANONICAL):
            raise ParameterError(
                f"n_structures must be in [1, {len(_CANONICAL)}], got {self.n_structures}"
            )
        if self.remap not in ("gamma", "none"):
            raise ParameterError(f"remap must be gamma or none, got {self.remap!r}")
        if self.gamma <= 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.noise < 0:
            raise ParameterError(f"noise must be >= 0, got {self.noise}")


@dataclass
class PhantomPair:
    modality_a: Volume
    modality_b: Volume
    labels: LabelVolume
    roi: Mask
    sign_b: int


def generate_phantom(spec):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dims = tuple(int(d) for d in spec.dims)
    scale = float(min(dims))

    n = spec.n_structures
    centers = _CANONICAL[:n] * np.asarray(dims, dtype=np.float64)
    centers = centers + rng.normal(0.0, 0.02 * scale, size=(n, 3))
    radii = (0.17 + 0.02 * (np.arange(n) % 3)) * scale
    radii = radii * rng.uniform(0.9, 1.1, size=n)
    levels = 0.4 + 0.6 * (np.arange(n) + 1) / n

    zz, yy, xx = np.meshgrid(
        *(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"
    )
    vol = np.zeros(dims, dtype=np.float64)
    membership = np.zeros((n,) + dims, dtype=np.float64)
    for i in range(n):
        r2 = (
            (zz - centers[i, 0]) ** 2
            + (yy - centers[i, 1]) ** 2
            + (xx - centers[i, 2]) ** 2
        ) / radii[i] ** 2
        bump = np.clip(1.0 - r2, 0.0, None) ** 2  # compact support, C1 smooth
        membership[i] = bump
        vol += levels[i] * bump

    best = membership.max(axis=0)
    labels = np.where(best > 0.25, membership.argmax(axis=0) + 1, 0)

    roi = np.zeros(dims, dtype=bool)
    for i in range(n):
        r2 = (
            (zz - centers[i, 0]) ** 2
            + (yy - centers[i, 1]) ** 2
            + (xx - centers[i, 2]) ** 2
        )
        roi |= r2 <= (1.3 * radii[i]) ** 2

    a = np.clip(vol, 0.0, 1.0)
    if spec.flip:
        b = a.copy()
    else:
        b = a**spec.gamma if spec.remap == "gamma" else a.copy()
        if spec.noise > 0:
            b = b + rng.normal(0.0, spec.noise, size=dims)

    return PhantomPair(
        Volume(a.astype(np.float32), spec.spacing),
        Volume(b.astype(np.float32), spec.spacing),
        LabelVolume(labels.astype(np.int32), spec.spacing),
        Mask(roi, spec.spacing),
        -1 if spec.flip else 1,
    )
