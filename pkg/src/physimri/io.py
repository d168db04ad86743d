"""Loading and saving of the package's volume types.

Multi-parametric maps arrive either as one 4D NIfTI (channel order fixed:
T1, T2*, PD, optionally MT) or as a JSON manifest pointing at per-channel
3D files::

    {"subject_id": "sub-01", "t1": "t1.nii.gz", "t2s": "t2s.nii.gz",
     "pd": "pd.nii.gz", "mt": null}

Relative manifest paths resolve against the manifest's directory. T1/T2*
are expected in ms; no unit conversion is performed (R1/R2* maps must be
inverted upstream).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .errors import GridMismatchError, ValidationError
from .grids import VoxelGrid3D
from .nifti import read_nifti, write_nifti
from .volumes import LabelMap, MultiParametricMap, SimulatedVolume, SoftSegmentation

log = logging.getLogger(__name__)

_MANIFEST_KEYS = ("t1", "t2s", "pd")

_DEFAULT_SAVE_DTYPES = {
    SimulatedVolume: np.float32,
    SoftSegmentation: np.float32,
    LabelMap: np.uint8,
    MultiParametricMap: np.float32,
}
_FLOAT_DTYPES = (np.float32, np.float64)
_LABEL_DTYPES = (np.uint8, np.int16, np.int32)


def grid_from_file(affine, voxel_size, dims):
    return VoxelGrid3D(tuple(dims), tuple(voxel_size), affine)


def _read_channel(path):
    data, affine, voxel_size = read_nifti(path)
    if data.ndim != 3:
        raise ValidationError(f"{path}: expected a 3D channel file, got {data.ndim}D")
    grid = grid_from_file(affine, voxel_size, data.shape)
    return np.asarray(data, dtype=np.float64), grid


def load_mpm(path, subject_id=None, max_nonfinite_fraction=0.0):
    """Load and validate a multi-parametric map.

    Parameters
    ----------
    path : str or Path
        Either a 4D NIfTI file (channels T1, T2*, PD[, MT]) or a JSON
        manifest of per-channel 3D files.
    subject_id : str, optional
        Overrides the manifest's subject id (required for 4D files if an
        id is wanted at all).
    max_nonfinite_fraction : float
        Largest tolerated fraction of voxels that carry a non-finite value
        where pd > 0. The default 0 makes any such voxel an error.
        Non-finite values that survive the check are zeroed and the voxel
        is flagged invalid, so the returned map contains no NaN/Inf.

    Returns
    -------
    MultiParametricMap
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")

    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        missing = [k for k in _MANIFEST_KEYS if not manifest.get(k)]
        if missing:
            raise ValidationError(f"manifest {path} missing channel paths: {missing}")
        base = path.parent
        channels = {}
        grids = {}
        for key in ("t1", "t2s", "pd", "mt"):
            rel = manifest.get(key)
            if rel is None:
                continue
            channels[key], grids[key] = _read_channel(base / rel)
        if subject_id is None:
            subject_id = manifest.get("subject_id", "")
        ref_key = "t1"
        ref_grid = grids[ref_key]
        for key, grid in grids.items():
            if not ref_grid.is_same(grid):
                raise GridMismatchError(
                    f"channel {key!r} grid does not match {ref_key!r} in {path}"
                )
    else:
        data, affine, voxel_size = read_nifti(path)
        if data.ndim != 4 or data.shape[3] not in (3, 4):
            raise ValidationError(
                f"{path}: 4D map stack must have 3 or 4 channels (T1, T2*, PD[, MT])"
            )
        data = np.asarray(data, dtype=np.float64)
        ref_grid = grid_from_file(affine, voxel_size, data.shape[:3])
        channels = {"t1": data[..., 0], "t2s": data[..., 1], "pd": data[..., 2]}
        if data.shape[3] == 4:
            channels["mt"] = data[..., 3]
        if subject_id is None:
            subject_id = ""

    finite = np.ones(ref_grid.dims, dtype=bool)
    for arr in channels.values():
        finite &= np.isfinite(arr)
    nonfinite = ~finite

    pd = channels["pd"]
    pd_defined = np.isfinite(pd)
    harmful = nonfinite & (~pd_defined | (pd_defined & (pd > 0)))
    frac = harmful.sum() / ref_grid.n_voxels
    if frac > max_nonfinite_fraction:
        raise ValidationError(
            f"{path}: {int(harmful.sum())} voxels ({frac:.2e} of volume) carry "
            f"non-finite values where pd > 0 (allowed fraction {max_nonfinite_fraction})"
        )

    sanitized = {}
    for key, arr in channels.items():
        arr = arr.copy()
        arr[~np.isfinite(arr)] = 0.0
        sanitized[key] = arr

    mpm = MultiParametricMap(
        grid=ref_grid,
        t1=sanitized["t1"],
        t2s=sanitized["t2s"],
        pd=sanitized["pd"],
        mt=sanitized.get("mt"),
        subject_id=subject_id or "",
        invalid_mask=nonfinite,
    )
    if mpm.n_invalid:
        log.info("%s: %d invalid voxels flagged", path, mpm.n_invalid)
    return mpm


def save_volume(vol, path, dtype=None, descrip=""):
    """Write a volume object as NIfTI-1 (gzip when the path ends in .gz).

    ``dtype`` defaults to float32 for intensity/probability data and uint8
    for label maps; float64 keeps the full internal precision.
    """
    kind = type(vol)
    if kind not in _DEFAULT_SAVE_DTYPES:
        raise ValidationError(f"cannot save objects of type {kind.__name__}")
    dtype = np.dtype(dtype if dtype is not None else _DEFAULT_SAVE_DTYPES[kind])

    if kind is LabelMap:
        if dtype.type not in _LABEL_DTYPES:
            raise ValidationError(f"unsupported dtype for label maps: {dtype}")
        data = vol.labels.astype(dtype)
    else:
        if dtype.type not in _FLOAT_DTYPES:
            raise ValidationError(f"unsupported dtype for {kind.__name__}: {dtype}")
        if kind is MultiParametricMap:
            stack = [vol.t1, vol.t2s, vol.pd] + ([vol.mt] if vol.mt is not None else [])
            data = np.stack(stack, axis=-1).astype(dtype)
        else:
            data = vol.data.astype(dtype)

    write_nifti(path, data, vol.grid.affine, vol.grid.voxel_size, descrip=descrip)


def load_intensity(path):
    """Read an intensity file back as (grid, float64 array)."""
    data, affine, voxel_size = read_nifti(path)
    if data.ndim != 3:
        raise ValidationError(f"{path}: expected a 3D intensity volume")
    grid = grid_from_file(affine, voxel_size, data.shape)
    return grid, np.asarray(data, dtype=np.float64)


def load_soft_segmentation(path):
    data, affine, voxel_size = read_nifti(path)
    if data.ndim != 4:
        raise ValidationError(f"{path}: soft segmentations are 4D (classes last)")
    grid = grid_from_file(affine, voxel_size, data.shape[:3])
    return SoftSegmentation(grid, np.asarray(data, dtype=np.float64))


def load_labelmap(path):
    data, affine, voxel_size = read_nifti(path)
    if data.ndim != 3:
        raise ValidationError(f"{path}: label maps are 3D")
    grid = grid_from_file(affine, voxel_size, data.shape)
    return LabelMap(grid, data)
