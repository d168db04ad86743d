"""sklearn-style estimators wrapping the core algorithms.

The simulators are stateless transformers (X is a MultiParametricMap, the
output a SimulatedVolume); the tissue classifier carries a fixed GMM
prior resolved in ``fit``. All classes derive from
:class:`sklearn.base.BaseEstimator`, so ``get_params`` / ``set_params``,
``clone`` and pipeline composition behave the way the rest of the
ecosystem expects.
"""

from __future__ import annotations

from importlib import resources

from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ValidationError
from .gold_standard import TissueGmmPrior, load_prior, pgs_segment
from .sequences import MprageParams, SpgrParams
from .simulate import SimOptions, simulate_volume
from .volumes import MultiParametricMap


def _check_mpm(X):
    if not isinstance(X, MultiParametricMap):
        raise ValidationError(
            f"X must be a MultiParametricMap, got {type(X).__name__}"
        )
    return X


class _SequenceSimulator(TransformerMixin, BaseEstimator):
    """Shared fit/transform machinery of the two sequence simulators."""

    def fit(self, X=None, y=None):
        """Validate parameters; no state is learned from data."""
        self.params_ = self._build_params()
        self.options_ = SimOptions(
            magnitude=self.magnitude,
            normalize=self.normalize,
            percentile=self.percentile,
            invalid_voxel_value=self.invalid_voxel_value,
        )
        return self

    def transform(self, X):
        """Simulate one volume from a MultiParametricMap."""
        if not hasattr(self, "params_"):
            self.fit()
        return simulate_volume(_check_mpm(X), self.params_, self.options_, threads=self.threads)


class SpgrSimulator(_SequenceSimulator):
    """Spoiled gradient-recalled echo simulator (times in ms, angle in degrees)."""

    def __init__(
        self,
        tr_ms=50.0,
        te_ms=5.0,
        fa_deg=30.0,
        gain=1.0,
        magnitude=True,
        normalize=None,
        percentile=None,
        invalid_voxel_value=0.0,
        threads=1,
    ):
        self.tr_ms = tr_ms
        self.te_ms = te_ms
        self.fa_deg = fa_deg
        self.gain = gain
        self.magnitude = magnitude
        self.normalize = normalize
        self.percentile = percentile
        self.invalid_voxel_value = invalid_voxel_value
        self.threads = threads

    def _build_params(self):
        return SpgrParams(self.tr_ms, self.te_ms, self.fa_deg, self.gain)


class MprageSimulator(_SequenceSimulator):
    """Magnetization-prepared rapid gradient echo simulator (times in ms)."""

    def __init__(
        self,
        ti_ms=900.0,
        td_ms=0.0,
        tau_ms=1000.0,
        gain=1.0,
        magnitude=True,
        normalize=None,
        percentile=None,
        invalid_voxel_value=0.0,
        threads=1,
    ):
        self.ti_ms = ti_ms
        self.td_ms = td_ms
        self.tau_ms = tau_ms
        self.gain = gain
        self.magnitude = magnitude
        self.normalize = normalize
        self.percentile = percentile
        self.invalid_voxel_value = invalid_voxel_value
        self.threads = threads

    def _build_params(self):
        return MprageParams(self.ti_ms, self.td_ms, self.tau_ms, self.gain)


def example_prior_path():
    """Path of the packaged placeholder prior config.

    The values are illustrative only and must be replaced with the user's
    own literature tissue parameters for real use.
    """
    return resources.files("physimri") / "data" / "pgs_example.json"


class GmmTissueClassifier(BaseEstimator):
    """Gold-standard tissue classifier over a fixed GMM prior.

    ``prior`` may be a TissueGmmPrior, a config path, or None for the
    packaged placeholder config (illustrative values, not ground truth).
    """

    def __init__(self, prior=None):
        self.prior = prior

    def fit(self, X=None, y=None):
        """Resolve and validate the prior; nothing is learned from data."""
        if isinstance(self.prior, TissueGmmPrior):
            self.prior_ = self.prior
        elif self.prior is None:
            self.prior_ = load_prior(example_prior_path())
        else:
            self.prior_ = load_prior(self.prior)
        return self

    def predict_proba(self, X):
        """Soft segmentation of a MultiParametricMap."""
        if not hasattr(self, "prior_"):
            self.fit()
        return pgs_segment(_check_mpm(X), self.prior_)

    def predict(self, X):
        """Hard label map (argmax of predict_proba, ties to lowest index)."""
        return self.predict_proba(X).argmax_labels()
