"""Minimal NIfTI-1 reader/writer.

Supports the subset this package needs: single-file ``.nii`` / ``.nii.gz``,
3D or 4D arrays, uint8 / int16 / int32 / float32 / float64 data, spacing
from ``pixdim`` and the affine from the sform rows. Files are written
little-endian with ``vox_offset`` 352 and no extensions; gzip output is
deterministic (no timestamp), so identical arrays produce identical bytes.

Data is stored x-fastest on disk, matching the package's ``data[ix, iy, iz]``
indexing (Fortran-order reshape on read, ``order="F"`` serialization on
write).
"""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from .errors import NiftiFormatError, ValidationError

_HEADER_SIZE = 348

_HEADER_DTD = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

_DTYPE_TO_CODE = {
    np.dtype(np.uint8): (2, 8),
    np.dtype(np.int16): (4, 16),
    np.dtype(np.int32): (8, 32),
    np.dtype(np.float32): (16, 32),
    np.dtype(np.float64): (64, 64),
}
_CODE_TO_DTYPE = {code: dt for dt, (code, _) in _DTYPE_TO_CODE.items()}

# mm spatial units
_UNITS_MM = 2


def _open_for_read(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_nifti(path):
    """Read a NIfTI-1 file.

    Returns
    -------
    data : ndarray
        Array in the on-disk dtype, indexed ``[ix, iy, iz(, t)]``.
    affine : (4, 4) float64 ndarray
    voxel_size : (dx, dy, dz) floats, mm
    """
    raw = _open_for_read(path)
    if len(raw) < _HEADER_SIZE:
        raise NiftiFormatError(f"{path}: file shorter than a NIfTI-1 header")
    hdr_dtype = np.dtype(_HEADER_DTD)
    swapped = False
    hdr = np.frombuffer(raw[:_HEADER_SIZE], dtype=hdr_dtype)[0]
    if hdr["sizeof_hdr"] != _HEADER_SIZE:
        swapped = True
        hdr = np.frombuffer(raw[:_HEADER_SIZE], dtype=hdr_dtype.newbyteorder())[0]
        if hdr["sizeof_hdr"] != _HEADER_SIZE:
            raise NiftiFormatError(f"{path}: sizeof_hdr is not 348; not NIfTI-1")
    magic = bytes(hdr["magic"]).rstrip(b"\x00")
    if magic == b"ni1":
        raise NiftiFormatError(f"{path}: detached .hdr/.img pairs are not supported")
    if magic != b"n+1":
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")

    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise NiftiFormatError(f"{path}: only 3D/4D volumes supported, got dim[0]={ndim}")
    shape = tuple(int(d) for d in hdr["dim"][1 : 1 + ndim])
    if any(d < 1 for d in shape):
        raise NiftiFormatError(f"{path}: non-positive dimension in {shape}")

    code = int(hdr["datatype"])
    if code not in _CODE_TO_DTYPE:
        raise NiftiFormatError(f"{path}: unsupported datatype code {code}")
    dtype = _CODE_TO_DTYPE[code]
    if swapped:
        dtype = dtype.newbyteorder()

    offset = int(hdr["vox_offset"])
    n_items = int(np.prod(shape))
    end = offset + n_items * dtype.itemsize
    if len(raw) < end:
        raise NiftiFormatError(f"{path}: truncated data section")
    flat = np.frombuffer(raw[offset:end], dtype=dtype)
    data = flat.reshape(shape, order="F")
    data = np.asarray(data, dtype=dtype.newbyteorder("="))

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    scaled = (np.isfinite(slope) and slope not in (0.0, 1.0)) or (
        np.isfinite(inter) and inter != 0.0
    )
    if scaled:
        data = data.astype(np.float64) * (slope if slope != 0.0 else 1.0) + inter

    voxel_size = tuple(abs(float(v)) for v in hdr["pixdim"][1:4])
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0, :] = hdr["srow_x"]
        affine[1, :] = hdr["srow_y"]
        affine[2, :] = hdr["srow_z"]
    else:
        # no sform: fall back to a pixdim-scaled diagonal affine
        affine = np.diag((*voxel_size, 1.0))
    return data, affine.astype(np.float64), voxel_size


def write_nifti(path, data, affine, voxel_size, descrip=""):
    """Write a 3D/4D array as a single-file NIfTI-1.

    ``data.dtype`` decides the on-disk datatype and must be one of uint8,
    int16, int32, float32, float64. Gzip compression is used when the path
    ends in ``.gz`` and is timestamp-free so outputs are reproducible.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise ValidationError(f"only 3D/4D arrays can be written, got ndim={data.ndim}")
    dtype = data.dtype.newbyteorder("=")
    if np.dtype(dtype) not in _DTYPE_TO_CODE:
        raise ValidationError(f"unsupported dtype for NIfTI output: {data.dtype}")
    code, bitpix = _DTYPE_TO_CODE[np.dtype(dtype)]
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise ValidationError("affine must be 4x4")

    hdr = np.zeros((), dtype=np.dtype(_HEADER_DTD))
    hdr["sizeof_hdr"] = _HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1 : 1 + data.ndim] = data.shape
    hdr["dim"] = dim
    hdr["datatype"] = code
    hdr["bitpix"] = bitpix
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = voxel_size
    if data.ndim == 4:
        pixdim[4] = 1.0
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = _HEADER_SIZE + 4
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = _UNITS_MM
    hdr["descrip"] = descrip.encode("ascii", "replace")[:79]
    hdr["sform_code"] = 2  # aligned
    hdr["qform_code"] = 0
    hdr["srow_x"] = affine[0, :]
    hdr["srow_y"] = affine[1, :]
    hdr["srow_z"] = affine[2, :]
    hdr["magic"] = b"n+1"

    payload = hdr.tobytes() + b"\x00\x00\x00\x00" + np.ascontiguousarray(data, dtype=dtype).tobytes(order="F")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        with open(path, "wb") as f:
            with gzip.GzipFile(filename="", mode="wb", fileobj=f, mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)
