"""Reference losses and uncertainty analysis for segmentation outputs.

This module is the numeric oracle for training code, not a training
framework: operations return values (and, for the attenuated loss, a
reference gradient) with no autodiff graph attached.

Loss attenuation
----------------
The heteroscedastic classification loss perturbs the per-voxel logits
with Gaussian noise of predicted scale sigma and averages softmax
probabilities over T stochastic passes:

    x_hat[t] = f + eps[t],  eps[t] ~ N(0, sigma^2)  (per class)
    L_i = -log( (1/T) * sum_t softmax(x_hat[t])[y_i] )

computed throughout in log-sum-exp form. Note this follows the standard
stochastic loss-attenuation formulation; the printed form of the loss in
some derivations garbles the placement of the class indicator and the
outer log, and is not what anyone trains with.

Noise draws are ordered (voxel, pass, class) on a counter-based stream,
so results do not depend on thread counts or batching.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .grids import VoxelGrid3D
from .volumes import CLASS_NAMES, LabelMap, check_grids_match

EPISTEMIC = "epistemic"
ALEATORIC = "aleatoric"

_SAMPLE_FILE_RE = re.compile(r"^sample_.*\.nii(\.gz)?$")


def _as_class_field(arr, name):
    arr = np.asarray(getattr(arr, "data", arr), dtype=np.float64)
    if arr.ndim < 2:
        raise ValidationError(f"{name} must have a trailing class axis")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class LogitField:
    """Per-voxel per-class raw network outputs."""

    grid: VoxelGrid3D
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.shape[:3] != self.grid.dims:
            raise ValidationError("logits shape does not match grid")
        if not np.isfinite(logits).all():
            raise ValidationError("logits must be finite")
        logits = np.array(logits, copy=True)
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def data(self):
        return self.logits


@dataclass(frozen=True)
class SigmaField:
    """Per-voxel per-class aleatoric noise scales (>= 0)."""

    grid: VoxelGrid3D
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape[:3] != self.grid.dims:
            raise ValidationError("sigma shape does not match grid")
        if not np.isfinite(sigma).all() or (sigma < 0).any():
            raise ValidationError("sigma must be finite and >= 0")
        sigma = np.array(sigma, copy=True)
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)

    @property
    def data(self):
        return self.sigma


def _loss_inputs(logits, sigma, target):
    logits = _as_class_field(logits, "logits")
    sigma = _as_class_field(sigma, "sigma")
    target = np.asarray(getattr(target, "data", target))
    if sigma.shape != logits.shape:
        raise ValidationError(f"sigma shape {sigma.shape} != logits shape {logits.shape}")
    if (sigma < 0).any():
        raise ValidationError("sigma must be >= 0")
    if target.shape != logits.shape[:-1]:
        raise ValidationError(
            f"target shape {target.shape} != logit field shape {logits.shape[:-1]}"
        )
    if not np.issubdtype(target.dtype, np.integer):
        raise ValidationError("target must be integer class indices")
    n_classes = logits.shape[-1]
    if target.min(initial=0) < 0 or target.max(initial=0) >= n_classes:
        raise ValidationError(f"target labels must be in [0, {n_classes})")
    return logits, sigma, target


def _noise(shape, rng):
    from .augment import RngStream

    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.standard_normal(shape)


def _noisy_logprob_passes(logits, sigma, target, t_passes, rng):
    """log softmax(f + eps_t)[y] for every pass; shape (*voxels, T).

    Also returns the per-pass noisy logits for gradient work.
    """
    t_passes = int(t_passes)
    if t_passes < 1:
        raise ValidationError(f"t_passes must be >= 1, got {t_passes}")
    vox_shape = logits.shape[:-1]
    n_classes = logits.shape[-1]
    eps = _noise((*vox_shape, t_passes, n_classes), rng)
    xhat = logits[..., None, :] + sigma[..., None, :] * eps
    # log softmax along classes, max-shifted
    peak = np.max(xhat, axis=-1, keepdims=True)
    log_norm = peak[..., 0] + np.log(np.sum(np.exp(xhat - peak), axis=-1))
    picked = np.take_along_axis(
        xhat, target[..., None, None].astype(np.int64), axis=-1
    )[..., 0]
    return picked - log_norm, xhat, log_norm


def attenuated_ce_loss(logits, sigma, target, t_passes, rng):
    """Stochastic loss attenuation over T passes.

    Returns (total_loss, per_voxel_loss). With sigma identically zero the
    per-voxel loss equals the plain cross-entropy of the softmaxed logits
    exactly, for any T. Deterministic for a fixed rng stream.
    """
    logits, sigma, target = _loss_inputs(logits, sigma, target)
    logp, _, _ = _noisy_logprob_passes(logits, sigma, target, t_passes, rng)
    # mean over passes in log space: arranged so the sigma=0 case is exact
    peak = np.max(logp, axis=-1)
    avg = np.mean(np.exp(logp - peak[..., None]), axis=-1)
    per_voxel = -(peak + np.log(avg))
    if not np.isfinite(per_voxel).all():
        raise ValidationError("non-finite loss value; this is a defect, please report")
    return float(np.sum(per_voxel)), per_voxel


def attenuated_ce_grad(logits, sigma, target, t_passes, rng):
    """Reference gradient of attenuated_ce_loss w.r.t. the logits.

    Uses the same noise stream as the loss (common random numbers), so a
    finite-difference check against the loss at the same (seed, stream)
    is exact up to FD truncation error.
    """
    logits, sigma, target = _loss_inputs(logits, sigma, target)
    logp, xhat, log_norm = _noisy_logprob_passes(logits, sigma, target, t_passes, rng)
    # pass weights w_t = softmax over passes of logp_t
    w_peak = np.max(logp, axis=-1, keepdims=True)
    w = np.exp(logp - w_peak)
    w /= np.sum(w, axis=-1, keepdims=True)
    probs = np.exp(xhat - log_norm[..., None])
    grad = np.sum(w[..., None] * probs, axis=-2)
    onehot_idx = target[..., None].astype(np.int64)
    np.put_along_axis(grad, onehot_idx, np.take_along_axis(grad, onehot_idx, -1) - 1.0, -1)
    return grad


def aleatoric_segmentation_samples(logits, sigma, s_samples, rng):
    """Segmentations sampled from the additive logit-noise model.

    One Gaussian field per sample is added to the logits and the argmax
    taken (ties resolve to the lowest class index). Draws are ordered
    (sample, voxel, class). Returns a list of LabelMap.
    """
    s_samples = int(s_samples)
    if s_samples < 1:
        raise ValidationError(f"s_samples must be >= 1, got {s_samples}")
    grid = getattr(logits, "grid", None)
    logits_arr = _as_class_field(logits, "logits")
    sigma_arr = _as_class_field(sigma, "sigma")
    if sigma_arr.shape != logits_arr.shape:
        raise ValidationError("sigma shape does not match logits")
    if grid is None:
        grid = VoxelGrid3D(logits_arr.shape[:3])
    from .augment import RngStream

    gen = rng.generator() if isinstance(rng, RngStream) else rng
    out = []
    for _ in range(s_samples):
        noisy = logits_arr + sigma_arr * gen.standard_normal(logits_arr.shape)
        labels = np.argmax(noisy, axis=-1).astype(np.uint8)
        out.append(LabelMap(grid, labels))
    return out


@dataclass(frozen=True)
class VolumeSampleSet:
    """Per-class tissue volumes (mL) across stochastic segmentation samples."""

    volumes_ml: np.ndarray  # (n_samples, n_classes)
    class_names: tuple[str, ...]
    source: str
    sample_ids: tuple[str, ...] = ()

    def __post_init__(self):
        volumes = np.asarray(self.volumes_ml, dtype=np.float64)
        if volumes.ndim != 2:
            raise ValidationError("volumes_ml must be (n_samples, n_classes)")
        if volumes.shape[0] < 1:
            raise ValidationError("need at least one sample")
        if volumes.shape[1] != len(self.class_names):
            raise ValidationError("class_names length does not match volumes")
        if not np.isfinite(volumes).all() or (volumes < 0).any():
            raise ValidationError("volumes must be finite and >= 0")
        if self.source not in (ALEATORIC, EPISTEMIC):
            raise ValidationError(f"source must be '{ALEATORIC}' or '{EPISTEMIC}'")
        ids = tuple(self.sample_ids) or tuple(str(i) for i in range(volumes.shape[0]))
        if len(ids) != volumes.shape[0]:
            raise ValidationError("sample_ids length does not match sample count")
        volumes = np.array(volumes, copy=True)
        volumes.flags.writeable = False
        object.__setattr__(self, "volumes_ml", volumes)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self):
        return self.volumes_ml.shape[0]

    def class_volumes(self, name):
        return self.volumes_ml[:, self.class_names.index(name)]


def volumes_from_labelmaps(samples, grid=None, source=ALEATORIC, sample_ids=()):
    """Per-class volumes in mL for each label map (1000 mm^3 = 1 mL)."""
    samples = list(samples)
    if not samples:
        raise ValidationError("need at least one label map")
    shared = check_grids_match(samples, context="volume samples")
    if grid is not None:
        from .validation import check_same_grid

        check_same_grid(grid, shared, context="requested grid vs samples")
    mm3_per_voxel = shared.voxel_volume_mm3
    rows = []
    for lm in samples:
        counts = np.bincount(lm.labels.ravel(), minlength=len(CLASS_NAMES))
        rows.append(counts * mm3_per_voxel / 1000.0)
    return VolumeSampleSet(
        volumes_ml=np.array(rows),
        class_names=CLASS_NAMES,
        source=source,
        sample_ids=tuple(sample_ids),
    )


def stratification_feature_loss(batch):
    """Batch feature-consistency loss: mean per-element variance.

    ``batch`` is an array (B, ...) or a sequence of B equally-shaped
    feature maps, B >= 2. Equals the mean over elements of the population
    variance across the batch; identically zero iff all maps are equal,
    and equal to the pairwise form sum_{j,k} mean((F_j - F_k)^2) / (2 B^2).
    """
    if not isinstance(batch, np.ndarray):
        batch = np.stack([np.asarray(b, dtype=np.float64) for b in batch])
    # canonical layout: reductions must not depend on input memory order
    batch = np.ascontiguousarray(np.asarray(batch, dtype=np.float64))
    if batch.ndim < 2:
        raise ValidationError("batch must be (B, ...) with at least one feature axis")
    if batch.shape[0] < 2:
        raise ValidationError("stratification loss needs a batch of at least 2")
    if not np.isfinite(batch).all():
        raise ValidationError("feature maps must be finite")
    # center on the first item (variance is shift-invariant); this makes
    # the all-identical case exactly zero
    centered = batch - batch[0]
    return float(np.mean(np.var(centered, axis=0)))


def percentile_bounds(values, lo_pct=25.0, hi_pct=75.0):
    """Hazen-convention percentile bounds of a 1D sample.

    Hazen: rank h = n*p/100 + 0.5, linear interpolation between order
    statistics, clamped at the extremes. Returns (lo, median, hi, iqr).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise ValidationError("need a 1D sample of size >= 2")
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ValidationError(f"need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    lo, med, hi = np.percentile(values, [lo_pct, 50.0, hi_pct], method="hazen")
    return float(lo), float(med), float(hi), float(hi - lo)


@dataclass(frozen=True)
class VolumeBounds:
    lo_ml: float
    median_ml: float
    hi_ml: float
    iqr_ml: float


def calibrated_volume_bounds(samples, lo_pct=25.0, hi_pct=75.0):
    """Calibrated volumetric bounds per class from a sample set.

    Percentiles use the Hazen convention (documented in
    :func:`percentile_bounds`); iqr = hi - lo >= 0. Needs >= 2 samples.
    """
    if samples.n_samples < 2:
        raise ValidationError("calibrated bounds need at least 2 samples")
    out = {}
    for name in samples.class_names:
        lo, med, hi, iqr = percentile_bounds(
            samples.class_volumes(name), lo_pct, hi_pct
        )
        out[name] = VolumeBounds(lo, med, hi, iqr)
    return out


def ingest_epistemic_samples(path):
    """Load externally produced stochastic segmentation samples.

    ``path`` is either a directory of label maps named ``sample_*.nii`` /
    ``sample_*.nii.gz`` or a CSV volume table with header
    ``sample_id,csf_ml,gm_ml,wm_ml[,background_ml]``.
    """
    path = Path(path)
    if path.is_dir():
        from .io import load_labelmap

        files = sorted(p for p in path.iterdir() if _SAMPLE_FILE_RE.match(p.name))
        if not files:
            raise ValidationError(f"{path}: no sample_*.nii[.gz] files found")
        maps = [load_labelmap(p) for p in files]
        return volumes_from_labelmaps(
            maps, source=EPISTEMIC, sample_ids=tuple(p.name for p in files)
        )

    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = ["sample_id", "csf_ml", "gm_ml", "wm_ml"]
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing CSV columns {missing}")
        has_bg = "background_ml" in header
        names = ("background", "csf", "gm", "wm") if has_bg else ("csf", "gm", "wm")
        rows, ids = [], []
        for record in reader:
            try:
                vol = [float(record[f"{n}_ml"]) for n in names]
            except (TypeError, KeyError, ValueError):
                raise ValidationError(f"{path}: malformed row {record!r}")
            if any(not np.isfinite(v) or v < 0 for v in vol):
                raise ValidationError(
                    f"{path}: sample {record['sample_id']!r} has a negative or "
                    "non-finite volume"
                )
            rows.append(vol)
            ids.append(record["sample_id"])
    if not rows:
        raise ValidationError(f"{path}: CSV contains no samples")
    return VolumeSampleSet(
        volumes_ml=np.array(rows),
        class_names=names,
        source=EPISTEMIC,
        sample_ids=tuple(ids),
    )
