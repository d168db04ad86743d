"""physimri: static-equation MR contrast synthesis from quantitative maps,
gold-standard tissue segmentation, stratified physics augmentation, and
acquisition-invariance evaluation statistics."""

from ._version import __version__
from .augment import (
    MprageRange,
    PRESETS,
    RngStream,
    SpgrRange,
    StratifiedBatch,
    get_preset,
    load_range,
    make_stratified_batch,
    normalize_physics_vector,
    sample_params,
)
from .errors import (
    GridMismatchError,
    NiftiFormatError,
    PhysimriError,
    SequenceChannelError,
    ValidationError,
)
from .gold_standard import ClassPrior, TissueGmmPrior, load_prior, pgs_segment, save_prior
from .grids import PatchSpec, VoxelGrid3D, extract_patch
from .io import (
    load_intensity,
    load_labelmap,
    load_mpm,
    load_soft_segmentation,
    save_volume,
)
from .metrics import (
    CovResult,
    DiceResult,
    RunRecord,
    WilcoxonResult,
    annealing_report,
    cov,
    dice,
    run_records_from_csv,
    run_records_to_csv,
    sweep_curve,
    sweep_to_csv,
    wilcoxon_signed_rank,
)
from .sequences import (
    MprageParams,
    SpgrParams,
    params_from_json,
    params_to_dict,
    params_to_json,
)
from .simulate import SimOptions, ernst_angle, mprage_signal, simulate_volume, spgr_signal
from .uncertainty import (
    LogitField,
    SigmaField,
    VolumeSampleSet,
    aleatoric_segmentation_samples,
    attenuated_ce_grad,
    attenuated_ce_loss,
    calibrated_volume_bounds,
    ingest_epistemic_samples,
    percentile_bounds,
    stratification_feature_loss,
    volumes_from_labelmaps,
)
from .volumes import (
    CLASS_NAMES,
    LabelMap,
    MultiParametricMap,
    Provenance,
    SimulatedVolume,
    SoftSegmentation,
)

_ESTIMATOR_NAMES = {
    "SpgrSimulator",
    "MprageSimulator",
    "GmmTissueClassifier",
    "example_prior_path",
}


def __getattr__(name):
    # estimators pull in sklearn; import lazily so the CLI stays snappy
    if name in _ESTIMATOR_NAMES:
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
