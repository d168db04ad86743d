"""Acquisition-parameter sampling and subject-stratified batch generation.

A batch is built from a single subject at a single patch location: the
same anatomy rendered under n independently sampled acquisition parameter
sets, sharing one gold-standard target. Sampling runs on counter-based
Philox streams keyed by (seed, stream_id), so every draw is reproducible
across platforms and independent of any parallelism.

Draw order is fixed and documented: one uniform draw per parameter in
canonical order (MPRAGE: ti; SPGR: tr, te, fa), and in
make_stratified_batch the patch origin (3 integer draws, when random)
precedes the per-item parameter draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .grids import PatchSpec, extract_patch
from .sequences import MprageParams, SpgrParams
from .simulate import SimOptions, simulate_volume
from .validation import check_interval, check_same_grid, check_seed

TAG_IN_DISTRIBUTION = "iod"
TAG_OUT_OF_DISTRIBUTION = "ood"
_TAGS = (TAG_IN_DISTRIBUTION, TAG_OUT_OF_DISTRIBUTION)

# one-hot sequence code, alphabetical: index 0 = mprage, index 1 = spgr
SEQUENCE_ONE_HOT_ORDER = ("mprage", "spgr")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream: (seed, stream_id) fully determine
    every draw, in order, on every platform."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", check_seed(self.seed, "seed"))
        object.__setattr__(self, "stream_id", check_seed(self.stream_id, "stream_id"))

    def generator(self):
        """Fresh numpy Generator positioned at draw 0 of this stream."""
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        return np.random.Generator(bitgen)


@dataclass(frozen=True)
class MprageRange:
    """Closed TI sampling interval (ms); td/tau are fixed configuration."""

    ti_ms: tuple[float, float]
    tag: str = TAG_IN_DISTRIBUTION
    td_ms: float = 0.0
    tau_ms: float = 1000.0

    seq = "mprage"

    def __post_init__(self):
        object.__setattr__(self, "ti_ms", check_interval(self.ti_ms, "ti_ms"))
        if self.tag not in _TAGS:
            raise ValidationError(f"tag must be one of {_TAGS}, got {self.tag!r}")

    def parameter_names(self):
        return ("ti_ms",)

    def interval(self, name):
        return {"ti_ms": self.ti_ms}[name]


@dataclass(frozen=True)
class SpgrRange:
    """Closed TR/TE/FA sampling intervals (ms, ms, degrees)."""

    tr_ms: tuple[float, float]
    te_ms: tuple[float, float]
    fa_deg: tuple[float, float]
    tag: str = TAG_IN_DISTRIBUTION

    seq = "spgr"

    def __post_init__(self):
        object.__setattr__(self, "tr_ms", check_interval(self.tr_ms, "tr_ms"))
        object.__setattr__(self, "te_ms", check_interval(self.te_ms, "te_ms"))
        object.__setattr__(self, "fa_deg", check_interval(self.fa_deg, "fa_deg"))
        if self.tag not in _TAGS:
            raise ValidationError(f"tag must be one of {_TAGS}, got {self.tag!r}")

    def parameter_names(self):
        return ("tr_ms", "te_ms", "fa_deg")

    def interval(self, name):
        return {"tr_ms": self.tr_ms, "te_ms": self.te_ms, "fa_deg": self.fa_deg}[name]


ParamRange = MprageRange | SpgrRange

# Training-time and extended evaluation ranges.
PRESETS = {
    "mprage-iod": MprageRange(ti_ms=(600.0, 1200.0), tag=TAG_IN_DISTRIBUTION),
    "mprage-ood": MprageRange(ti_ms=(100.0, 2000.0), tag=TAG_OUT_OF_DISTRIBUTION),
    "spgr-iod": SpgrRange(
        tr_ms=(15.0, 100.0), te_ms=(4.0, 10.0), fa_deg=(15.0, 75.0),
        tag=TAG_IN_DISTRIBUTION,
    ),
    "spgr-ood": SpgrRange(
        tr_ms=(10.0, 200.0), te_ms=(2.0, 20.0), fa_deg=(5.0, 90.0),
        tag=TAG_OUT_OF_DISTRIBUTION,
    ),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


def iod_counterpart(range_):
    """The in-distribution preset of the same sequence, used to normalize
    physics vectors for out-of-distribution samples."""
    if range_.tag == TAG_IN_DISTRIBUTION:
        return range_
    return PRESETS[f"{range_.seq}-{TAG_IN_DISTRIBUTION}"]


def range_to_dict(range_):
    if isinstance(range_, MprageRange):
        return {
            "seq": "mprage",
            "ti_ms": list(range_.ti_ms),
            "tag": range_.tag,
            "td_ms": range_.td_ms,
            "tau_ms": range_.tau_ms,
        }
    if isinstance(range_, SpgrRange):
        return {
            "seq": "spgr",
            "tr_ms": list(range_.tr_ms),
            "te_ms": list(range_.te_ms),
            "fa_deg": list(range_.fa_deg),
            "tag": range_.tag,
        }
    raise ValidationError(f"not a parameter range: {range_!r}")


def range_from_dict(obj):
    try:
        seq = obj["seq"]
    except (TypeError, KeyError):
        raise ValidationError("parameter range needs a 'seq' field")
    tag = obj.get("tag", TAG_IN_DISTRIBUTION)
    if seq == "mprage":
        return MprageRange(
            ti_ms=tuple(obj["ti_ms"]),
            tag=tag,
            td_ms=obj.get("td_ms", 0.0),
            tau_ms=obj.get("tau_ms", 1000.0),
        )
    if seq == "spgr":
        return SpgrRange(
            tr_ms=tuple(obj["tr_ms"]),
            te_ms=tuple(obj["te_ms"]),
            fa_deg=tuple(obj["fa_deg"]),
            tag=tag,
        )
    raise ValidationError(f"unknown sequence {seq!r}")


def load_range(path_or_preset):
    """Resolve a preset name or a JSON range file."""
    if path_or_preset in PRESETS:
        return PRESETS[path_or_preset]
    path = Path(path_or_preset)
    if not path.exists():
        raise ValidationError(
            f"{path_or_preset!r} is neither a preset ({sorted(PRESETS)}) nor a file"
        )
    return range_from_dict(json.loads(path.read_text()))


def sample_params(range_, rng):
    """Draw one parameter set, each parameter uniform over its interval.

    ``rng`` may be an RngStream (a fresh generator is opened) or an
    already-open numpy Generator (the stream advances).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    draws = {name: gen.uniform(*range_.interval(name)) for name in range_.parameter_names()}
    if isinstance(range_, MprageRange):
        return MprageParams(
            ti_ms=draws["ti_ms"], td_ms=range_.td_ms, tau_ms=range_.tau_ms, gain=1.0
        )
    return SpgrParams(
        tr_ms=draws["tr_ms"], te_ms=draws["te_ms"], fa_deg=draws["fa_deg"], gain=1.0
    )


def normalize_physics_vector(params, iod_range):
    """Map a parameter set to the network-facing physics vector.

    Layout: one-hot sequence code over ``SEQUENCE_ONE_HOT_ORDER`` followed
    by each parameter affinely mapped so the in-distribution interval
    becomes [0, 1]. Out-of-distribution values land outside [0, 1] by
    design; that is the extrapolation signal.
    """
    if params.seq != iod_range.seq:
        raise ValidationError(
            f"params are {params.seq!r} but the range is {iod_range.seq!r}"
        )
    one_hot = [1.0 if params.seq == s else 0.0 for s in SEQUENCE_ONE_HOT_ORDER]
    coords = []
    for name in iod_range.parameter_names():
        lo, hi = iod_range.interval(name)
        coords.append((getattr(params, name) - lo) / (hi - lo))
    return np.array(one_hot + coords, dtype=np.float64)


@dataclass(frozen=True)
class BatchItem:
    """One realisation: parameters, simulated patch, physics vector."""

    params: object
    intensity: np.ndarray
    physics: np.ndarray


@dataclass(frozen=True)
class StratifiedBatch:
    """n realisations of one subject at one patch location plus the shared
    gold-standard target patch."""

    subject_id: str
    patch: PatchSpec
    items: tuple[BatchItem, ...]
    target: object  # SoftSegmentation on the patch grid

    def __len__(self):
        return len(self.items)

    def intensity_stack(self):
        return np.stack([item.intensity for item in self.items])

    def physics_matrix(self):
        return np.stack([item.physics for item in self.items])


def sample_patch_origin(dims, size, gen):
    """Uniform draw over valid patch origins (3 integer draws, x, y, z)."""
    origin = []
    for d, s in zip(dims, size):
        if s > d:
            raise ValidationError(f"patch size {size} exceeds volume dims {dims}")
        origin.append(int(gen.integers(0, d - s + 1)))
    return tuple(origin)


def make_stratified_batch(
    mpm,
    pgs,
    range_,
    n,
    patch=None,
    rng=None,
    patch_size=None,
    sim_options=None,
    normalization_range=None,
):
    """Build one subject-stratified batch.

    Parameters
    ----------
    mpm : MultiParametricMap
    pgs : SoftSegmentation
        Gold-standard segmentation on the same grid as ``mpm``.
    range_ : MprageRange or SpgrRange
        Sampling intervals for the acquisition parameters.
    n : int
        Batch size (>= 1).
    patch : PatchSpec, optional
        Fixed patch; when None an origin is drawn uniformly over valid
        origins (size ``patch_size``, default 128^3 clipped to the volume).
    rng : RngStream
    sim_options : SimOptions, optional
    normalization_range : ParamRange, optional
        Interval set used for the physics vectors. Defaults to ``range_``
        if in-distribution, else to its in-distribution preset.

    Every batch item is bit-identical to
    ``extract_patch(simulate_volume(mpm, params_i), patch)``: the signal
    equations are strictly elementwise, so simulating the extracted map
    patch is the same computation.
    """
    if n < 1:
        raise ValidationError(f"batch size must be >= 1, got {n}")
    if rng is None:
        rng = RngStream(0)
    check_same_grid(mpm.grid, pgs.grid, context="mpm vs gold standard")
    gen = rng.generator() if isinstance(rng, RngStream) else rng

    if patch is None:
        size = tuple(
            min(p, d) for p, d in zip(patch_size or (128, 128, 128), mpm.grid.dims)
        )
        patch = PatchSpec(sample_patch_origin(mpm.grid.dims, size, gen), size)
    patch.check_bounds(mpm.grid.dims)

    norm_range = normalization_range or iod_counterpart(range_)
    opts = sim_options or SimOptions()

    mpm_patch = extract_patch(mpm, patch)
    target = extract_patch(pgs, patch)

    items = []
    for _ in range(int(n)):
        params = sample_params(range_, gen)
        sim = simulate_volume(mpm_patch, params, opts, rng_seed=rng.seed if isinstance(rng, RngStream) else None)
        items.append(
            BatchItem(
                params=params,
                intensity=sim.intensity,
                physics=normalize_physics_vector(params, norm_range),
            )
        )
    return StratifiedBatch(
        subject_id=mpm.subject_id, patch=patch, items=tuple(items), target=target
    )
