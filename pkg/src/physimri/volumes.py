"""Grid-aligned volume types: quantitative maps, simulated images,
soft segmentations and label maps.

All types are immutable after construction (arrays are marked read-only)
and safe to share across threads. Channel order for soft segmentations is
fixed: (background, CSF, GM, WM).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .grids import VoxelGrid3D
from .validation import check_same_grid

CLASS_NAMES = ("background", "csf", "gm", "wm")
N_CLASSES = len(CLASS_NAMES)

PROB_SUM_TOL = 1e-6


def _as_field(arr, grid, name, n_channels=None):
    arr = np.asarray(arr, dtype=np.float64)
    expected = grid.dims if n_channels is None else (*grid.dims, n_channels)
    if arr.shape != expected:
        raise ValidationError(f"{name} shape {arr.shape} does not match grid {expected}")
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MultiParametricMap:
    """Quantitative multi-parametric map stack on a shared grid.

    Channels: t1 (ms), t2s (ms), pd (a.u. >= 0) and optionally mt (p.u.).
    Voxels where pd > 0 but t1 <= 0 or t2s <= 0, and voxels that were
    non-finite on load, are flagged in ``invalid_mask`` and excluded from
    simulation.
    """

    grid: VoxelGrid3D
    t1: np.ndarray
    t2s: np.ndarray | None
    pd: np.ndarray
    mt: np.ndarray | None = None
    subject_id: str = ""
    invalid_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        t1 = _as_field(self.t1, self.grid, "t1")
        t2s = None if self.t2s is None else _as_field(self.t2s, self.grid, "t2s")
        pd = _as_field(self.pd, self.grid, "pd")
        mt = None if self.mt is None else _as_field(self.mt, self.grid, "mt")
        for name, arr in (("t1", t1), ("t2s", t2s), ("pd", pd), ("mt", mt)):
            if arr is not None and not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains non-finite values; use load_mpm to sanitize")
        broken = (pd > 0) & (t1 <= 0)
        if t2s is not None:
            broken |= (pd > 0) & (t2s <= 0)
        if self.invalid_mask is None:
            invalid = broken
        else:
            invalid = np.asarray(self.invalid_mask, dtype=bool)
            if invalid.shape != self.grid.dims:
                raise ValidationError("invalid_mask shape does not match grid")
            invalid = invalid | broken
        invalid = np.array(invalid, copy=True)
        invalid.flags.writeable = False
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2s", t2s)
        object.__setattr__(self, "pd", pd)
        object.__setattr__(self, "mt", mt)
        object.__setattr__(self, "invalid_mask", invalid)

    @property
    def n_invalid(self):
        return int(self.invalid_mask.sum())

    def channel(self, name):
        """Fetch a channel array by name ('t1', 't2s', 'pd', 'mt')."""
        if name not in ("t1", "t2s", "pd", "mt"):
            raise ValidationError(f"unknown channel {name!r}")
        arr = getattr(self, name)
        if arr is None:
            raise ValidationError(f"channel {name!r} is not present in this map")
        return arr

    def _patched(self, grid, slices):
        return MultiParametricMap(
            grid=grid,
            t1=self.t1[slices],
            t2s=None if self.t2s is None else self.t2s[slices],
            pd=self.pd[slices],
            mt=None if self.mt is None else self.mt[slices],
            subject_id=self.subject_id,
            invalid_mask=self.invalid_mask[slices],
        )


@dataclass(frozen=True)
class Provenance:
    """Where a simulated volume came from: subject, acquisition parameters,
    optional sampling seed, and the simulator version that produced it."""

    subject_id: str
    params: "object"
    rng_seed: int | None
    simulator_version: str

    def to_dict(self):
        from .sequences import params_to_dict

        return {
            "subject_id": self.subject_id,
            "params": params_to_dict(self.params),
            "rng_seed": self.rng_seed,
            "simulator_version": self.simulator_version,
        }


@dataclass(frozen=True)
class SimulatedVolume:
    """A synthetic MR intensity volume with full provenance."""

    grid: VoxelGrid3D
    intensity: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        intensity = _as_field(self.intensity, self.grid, "intensity")
        if not np.isfinite(intensity).all():
            raise ValidationError("simulated intensity contains non-finite values")
        if self.provenance is None or not self.provenance.simulator_version:
            raise ValidationError("provenance must be fully populated")
        object.__setattr__(self, "intensity", intensity)

    @property
    def data(self):
        return self.intensity

    def _patched(self, grid, slices):
        return replace(self, grid=grid, intensity=self.intensity[slices])


@dataclass(frozen=True)
class SoftSegmentation:
    """Per-voxel class probabilities over (background, CSF, GM, WM)."""

    grid: VoxelGrid3D
    probs: np.ndarray

    def __post_init__(self):
        probs = _as_field(self.probs, self.grid, "probs", n_channels=N_CLASSES)
        if probs.min() < -PROB_SUM_TOL or probs.max() > 1 + PROB_SUM_TOL:
            raise ValidationError("probabilities must lie in [0, 1]")
        sums = probs.sum(axis=-1)
        worst = float(np.abs(sums - 1.0).max())
        if worst > PROB_SUM_TOL:
            raise ValidationError(
                f"per-voxel probability sums deviate from 1 by up to {worst:.3g}"
            )
        object.__setattr__(self, "probs", probs)

    @property
    def data(self):
        return self.probs

    def class_prob(self, name):
        return self.probs[..., CLASS_NAMES.index(name)]

    def argmax_labels(self):
        """Collapse to a LabelMap; ties resolve to the lowest class index."""
        labels = np.argmax(self.probs, axis=-1).astype(np.uint8)
        return LabelMap(self.grid, labels)

    def _patched(self, grid, slices):
        return replace(self, grid=grid, probs=self.probs[slices])


@dataclass(frozen=True)
class LabelMap:
    """Hard per-voxel class indices into CLASS_NAMES."""

    grid: VoxelGrid3D
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.grid.dims:
            raise ValidationError(f"labels shape {labels.shape} does not match grid {self.grid.dims}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValidationError("labels must be integers")
        labels = labels.astype(np.uint8)
        if labels.max(initial=0) >= N_CLASSES:
            raise ValidationError(f"labels must be < {N_CLASSES}")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def data(self):
        return self.labels

    def class_mask(self, class_id):
        return self.labels == class_id

    def _patched(self, grid, slices):
        return replace(self, grid=grid, labels=self.labels[slices])


def check_grids_match(fields, context=""):
    """Validate that a collection of volume objects share one grid."""
    fields = list(fields)
    for other in fields[1:]:
        check_same_grid(fields[0].grid, other.grid, context=context)
    return fields[0].grid
