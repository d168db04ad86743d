"""Acquisition parameter sets for the supported pulse sequences.

Times are milliseconds, flip angles degrees, gain dimensionless. The JSON
wire format is flat::

    {"seq": "spgr", "tr_ms": 50, "te_ms": 5, "fa_deg": 30, "gain": 1.0}
    {"seq": "mprage", "ti_ms": 900, "td_ms": 0, "tau_ms": 1000, "gain": 1.0}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ValidationError
from .validation import check_in_range, check_positive


@dataclass(frozen=True)
class SpgrParams:
    """Spoiled gradient-recalled echo: repetition time, echo time, flip angle.

    te_ms = 0 is allowed as the exact no-decay limit.
    """

    tr_ms: float
    te_ms: float
    fa_deg: float
    gain: float = 1.0

    seq = "spgr"

    def __post_init__(self):
        object.__setattr__(self, "tr_ms", check_positive(self.tr_ms, "tr_ms"))
        object.__setattr__(self, "te_ms", check_positive(self.te_ms, "te_ms", strict=False))
        object.__setattr__(self, "fa_deg", check_in_range(self.fa_deg, "fa_deg", 0.0, 180.0))
        object.__setattr__(self, "gain", check_positive(self.gain, "gain"))


@dataclass(frozen=True)
class MprageParams:
    """Magnetization-prepared rapid gradient echo: inversion time, delay
    time, slice imaging time."""

    ti_ms: float
    td_ms: float = 0.0
    tau_ms: float = 1000.0
    gain: float = 1.0

    seq = "mprage"

    def __post_init__(self):
        object.__setattr__(self, "ti_ms", check_positive(self.ti_ms, "ti_ms"))
        object.__setattr__(self, "td_ms", check_positive(self.td_ms, "td_ms", strict=False))
        object.__setattr__(self, "tau_ms", check_positive(self.tau_ms, "tau_ms"))
        object.__setattr__(self, "gain", check_positive(self.gain, "gain"))


SequenceParams = SpgrParams | MprageParams


def params_to_dict(params):
    if params is None:
        return None
    if isinstance(params, SpgrParams):
        return {
            "seq": "spgr",
            "tr_ms": params.tr_ms,
            "te_ms": params.te_ms,
            "fa_deg": params.fa_deg,
            "gain": params.gain,
        }
    if isinstance(params, MprageParams):
        return {
            "seq": "mprage",
            "ti_ms": params.ti_ms,
            "td_ms": params.td_ms,
            "tau_ms": params.tau_ms,
            "gain": params.gain,
        }
    raise ValidationError(f"not a sequence parameter set: {params!r}")


def params_from_dict(obj):
    try:
        seq = obj["seq"]
    except (TypeError, KeyError):
        raise ValidationError("sequence params need a 'seq' field ('spgr' or 'mprage')")
    gain = obj.get("gain", 1.0)
    if seq == "spgr":
        return SpgrParams(obj["tr_ms"], obj["te_ms"], obj["fa_deg"], gain)
    if seq == "mprage":
        return MprageParams(
            obj["ti_ms"], obj.get("td_ms", 0.0), obj.get("tau_ms", 1000.0), gain
        )
    raise ValidationError(f"unknown sequence {seq!r}")


def params_to_json(params):
    return json.dumps(params_to_dict(params), sort_keys=True)


def params_from_json(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid params JSON: {exc}")
    return params_from_dict(obj)
