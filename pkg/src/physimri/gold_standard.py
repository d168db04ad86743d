"""Physics gold-standard soft segmentation.

A fixed Gaussian mixture over quantitative tissue parameters (no EM
fitting: means, covariances and weights come from a literature-value
config) is evaluated on the map channels of every foreground voxel; the
posterior responsibilities become the CSF/GM/WM probabilities. Because it
only looks at the quantitative maps, the result is independent of any
simulated acquisition, which is what makes it usable as a gold standard.

Background is handled by proton-density thresholding: voxels with
pd < background_pd_threshold (default: 5% of the volume's 99th-percentile
PD) get background probability 1. Voxels flagged invalid at load time are
also assigned to background, since their channels carry no usable
information.

All likelihood work happens in log space with a log-sum-exp
normalization, so responsibilities stay NaN-free even when every class
log-likelihood is far below the underflow threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .volumes import CLASS_NAMES, MultiParametricMap, SoftSegmentation

TISSUE_NAMES = ("csf", "gm", "wm")
DEFAULT_CHANNELS = ("t1", "t2s", "pd")

# auto background rule: threshold = this fraction of the 99th-percentile PD
_AUTO_PD_FRACTION = 0.05
_AUTO_PD_PERCENTILE = 99.0

_LOG_2PI = float(np.log(2.0 * np.pi))


def _channel_unit_suffix(channel):
    return "_ms" if channel in ("t1", "t2s") else ""


@dataclass(frozen=True)
class ClassPrior:
    """One mixture component: mean vector, covariance, mixing weight."""

    name: str
    mean: np.ndarray
    cov: np.ndarray
    weight: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (mean.size, mean.size):
            raise ValidationError(
                f"class {self.name!r}: covariance shape {cov.shape} does not "
                f"match mean length {mean.size}"
            )
        if not np.isfinite(mean).all() or not np.isfinite(cov).all():
            raise ValidationError(f"class {self.name!r}: non-finite prior values")
        if np.any(np.diag(cov) <= 0):
            raise ValidationError(f"class {self.name!r}: covariance diagonal must be > 0")
        if not np.allclose(cov, cov.T):
            raise ValidationError(f"class {self.name!r}: covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError(f"class {self.name!r}: covariance not positive definite")
        if not (0.0 < float(self.weight) <= 1.0):
            raise ValidationError(f"class {self.name!r}: weight must be in (0, 1]")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def is_diagonal(self):
        return np.count_nonzero(self.cov - np.diag(np.diag(self.cov))) == 0


@dataclass(frozen=True)
class TissueGmmPrior:
    """Fixed GMM over (CSF, GM, WM) on a subset of map channels.

    Weights are normalized to sum to 1 at construction (posteriors are
    invariant to their overall scale anyway). ``background_pd_threshold``
    of None selects the automatic PD rule.
    """

    classes: tuple[ClassPrior, ...]
    channel_selection: tuple[str, ...] = DEFAULT_CHANNELS
    background_pd_threshold: float | None = None

    def __post_init__(self):
        channels = tuple(self.channel_selection)
        if not channels:
            raise ValidationError("channel_selection must not be empty")
        for ch in channels:
            if ch not in ("t1", "t2s", "pd", "mt"):
                raise ValidationError(f"unknown channel {ch!r} in channel_selection")
        classes = tuple(self.classes)
        names = [c.name.lower() for c in classes]
        if sorted(names) != sorted(TISSUE_NAMES):
            raise ValidationError(
                f"prior must define exactly the classes {TISSUE_NAMES}, got {names}"
            )
        for c in classes:
            if c.mean.size != len(channels):
                raise ValidationError(
                    f"class {c.name!r}: mean length {c.mean.size} does not match "
                    f"channel selection {channels}"
                )
        total = sum(c.weight for c in classes)
        if total <= 0:
            raise ValidationError("class weights must sum to a positive value")
        if abs(total - 1.0) > 1e-12:
            classes = tuple(
                ClassPrior(c.name, c.mean, c.cov, c.weight / total) for c in classes
            )
        thr = self.background_pd_threshold
        if thr is not None:
            thr = float(thr)
            if not np.isfinite(thr) or thr < 0:
                raise ValidationError("background_pd_threshold must be >= 0 or null")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "channel_selection", channels)
        object.__setattr__(self, "background_pd_threshold", thr)

    def class_names(self):
        return tuple(c.name.lower() for c in self.classes)

    def resolve_pd_threshold(self, pd):
        if self.background_pd_threshold is not None:
            return self.background_pd_threshold
        return _AUTO_PD_FRACTION * float(np.percentile(pd, _AUTO_PD_PERCENTILE))


def gmm_log_likelihoods(features, classes):
    """Per-class Gaussian log-densities for a (M, k) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValidationError("features must be a (n_voxels, n_channels) matrix")
    m, k = features.shape
    out = np.empty((m, len(classes)), dtype=np.float64)
    for j, cls in enumerate(classes):
        if cls.mean.size != k:
            raise ValidationError(
                f"class {cls.name!r} dimensionality {cls.mean.size} != features {k}"
            )
        delta = features - cls.mean
        chol = np.linalg.cholesky(cls.cov)
        solved = np.linalg.solve(chol, delta.T)
        maha = np.sum(solved * solved, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -0.5 * (k * _LOG_2PI + logdet + maha)
    return out


def gmm_responsibilities(features, classes):
    """Posterior responsibilities p(class | feature) of a fixed mixture.

    Evaluated in log space; each row is explicitly normalized to sum to 1.
    Raises if a voxel has -inf log-likelihood under every class.
    """
    log_lik = gmm_log_likelihoods(features, classes)
    log_w = np.log([c.weight for c in classes])
    a = log_lik + log_w
    peak = np.max(a, axis=1, keepdims=True)
    if not np.isfinite(peak).all():
        raise ValidationError("a voxel has -inf log-likelihood under every class")
    resp = np.exp(a - peak)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def pgs_segment(mpm, prior):
    """Gold-standard soft segmentation of a multi-parametric map.

    Returns a SoftSegmentation in the canonical channel order
    (background, CSF, GM, WM); prior classes are matched by name, so the
    order they were declared in does not matter.
    """
    if not isinstance(mpm, MultiParametricMap):
        raise ValidationError("pgs_segment needs a MultiParametricMap")
    channel_data = [mpm.channel(ch) for ch in prior.channel_selection]

    threshold = prior.resolve_pd_threshold(mpm.pd)
    foreground = (mpm.pd >= threshold) & ~mpm.invalid_mask

    probs = np.zeros((*mpm.grid.dims, len(CLASS_NAMES)), dtype=np.float64)
    probs[..., 0] = 1.0

    if foreground.any():
        features = np.stack([ch[foreground] for ch in channel_data], axis=1)
        resp = gmm_responsibilities(features, prior.classes)
        probs[foreground, 0] = 0.0
        for j, name in enumerate(prior.class_names()):
            probs[foreground, CLASS_NAMES.index(name)] = resp[:, j]
    return SoftSegmentation(mpm.grid, probs)


# -- config file round-trip -------------------------------------------------

def _class_from_config(entry, channels, default_weight):
    name = str(entry.get("name", "")).lower()
    mean = []
    var = []
    full_cov = entry.get("covariance")
    for ch in channels:
        suffix = _channel_unit_suffix(ch)
        mean_key = f"mean_{ch}{suffix}"
        if mean_key not in entry:
            raise ValidationError(f"class {name!r}: missing {mean_key}")
        mean.append(float(entry[mean_key]))
        if full_cov is None:
            var_key = f"var_{ch}{suffix}"
            if var_key not in entry:
                raise ValidationError(f"class {name!r}: missing {var_key}")
            value = float(entry[var_key])
            if value <= 0:
                raise ValidationError(f"class {name!r}: {var_key} must be > 0")
            var.append(value)
    cov = np.array(full_cov, dtype=np.float64) if full_cov is not None else np.diag(var)
    weight = float(entry["weight"]) if "weight" in entry else default_weight
    return ClassPrior(name, np.array(mean), cov, weight)


def load_prior(path):
    """Build a TissueGmmPrior from a literature-values JSON config.

    Omitted weights default to uniform (all classes must omit or all must
    state them).
    """
    path = Path(path)
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}")
    if "classes" not in config or not isinstance(config["classes"], list):
        raise ValidationError(f"{path}: config needs a 'classes' list")
    channels = tuple(config.get("channels", DEFAULT_CHANNELS))
    entries = config["classes"]
    with_weight = [e for e in entries if "weight" in e]
    if with_weight and len(with_weight) != len(entries):
        raise ValidationError(f"{path}: give 'weight' for every class or for none")
    default_weight = 1.0 / len(entries) if entries else 0.0
    classes = tuple(
        _class_from_config(e, channels, default_weight) for e in entries
    )
    return TissueGmmPrior(
        classes=classes,
        channel_selection=channels,
        background_pd_threshold=config.get("background_pd_threshold"),
    )


def save_prior(prior, path):
    """Write a prior back out in the config schema (inverse of load_prior)."""
    entries = []
    for cls in prior.classes:
        entry = {"name": cls.name}
        for i, ch in enumerate(prior.channel_selection):
            suffix = _channel_unit_suffix(ch)
            entry[f"mean_{ch}{suffix}"] = float(cls.mean[i])
        if cls.is_diagonal:
            for i, ch in enumerate(prior.channel_selection):
                suffix = _channel_unit_suffix(ch)
                entry[f"var_{ch}{suffix}"] = float(cls.cov[i, i])
        else:
            entry["covariance"] = cls.cov.tolist()
        entry["weight"] = cls.weight
        entries.append(entry)
    config = {
        "channels": list(prior.channel_selection),
        "background_pd_threshold": prior.background_pd_threshold,
        "classes": entries,
    }
    Path(path).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
