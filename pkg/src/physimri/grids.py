"""Voxel grids and co-located patch extraction.

Data ordering contract
----------------------
All volumetric arrays in this package are indexed ``data[ix, iy, iz]``
(channel last for multi-channel fields), and the x index is the
fastest-varying axis in the on-disk layout. The affine maps homogeneous
voxel indices ``(ix, iy, iz, 1)`` to mm coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_PATCH_SIZE = (128, 128, 128)


def _freeze(arr):
    """Return a read-only float64 copy of ``arr``."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class VoxelGrid3D:
    """A 3D voxel grid: shape, spacing and index-to-mm affine.

    Parameters
    ----------
    dims : tuple of int
        (nx, ny, nz), all >= 1.
    voxel_size : tuple of float
        (dx, dy, dz) in mm, all > 0.
    affine : (4, 4) array, optional
        Voxel-index to mm transform. Defaults to a diagonal scaling by
        ``voxel_size``. The last row must be (0, 0, 0, 1).
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default=None)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValidationError(f"dims must be 3 positive integers, got {self.dims}")
        vox = tuple(float(v) for v in self.voxel_size)
        if len(vox) != 3 or any(not np.isfinite(v) or v <= 0 for v in vox):
            raise ValidationError(f"voxel_size must be 3 positive mm values, got {self.voxel_size}")
        if self.affine is None:
            affine = np.diag((*vox, 1.0))
        else:
            affine = np.array(self.affine, dtype=np.float64, copy=True)
        if affine.shape != (4, 4) or not np.isfinite(affine).all():
            raise ValidationError("affine must be a finite 4x4 matrix")
        if not np.array_equal(affine[3], (0.0, 0.0, 0.0, 1.0)):
            raise ValidationError("affine last row must be (0, 0, 0, 1)")
        affine.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vox)
        object.__setattr__(self, "affine", affine)

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_volume_mm3(self):
        dx, dy, dz = self.voxel_size
        return dx * dy * dz

    def index_to_mm(self, index):
        """Map a voxel index triple to mm coordinates."""
        hom = np.array([*index, 1.0], dtype=np.float64)
        return self.affine @ hom

    def shifted(self, origin):
        """Grid of the same spacing whose voxel (0,0,0) sits at ``origin``
        of this grid, used when cutting patches. mm coordinates of retained
        voxels are unchanged."""
        new_affine = self.affine.copy()
        new_affine[:3, 3] = self.index_to_mm(origin)[:3]
        return VoxelGrid3D(self.dims, self.voxel_size, new_affine)

    def with_dims(self, dims):
        return VoxelGrid3D(tuple(dims), self.voxel_size, self.affine)

    def is_same(self, other, atol=1e-6):
        return self.dims == other.dims and np.allclose(
            self.affine, other.affine, atol=atol, rtol=0.0
        )


@dataclass(frozen=True)
class PatchSpec:
    """An axis-aligned sub-volume: voxel ``origin`` and ``size``.

    The default size is (128, 128, 128).
    """

    origin: tuple[int, int, int]
    size: tuple[int, int, int] = DEFAULT_PATCH_SIZE

    def __post_init__(self):
        origin = tuple(int(v) for v in self.origin)
        size = tuple(int(v) for v in self.size)
        if len(origin) != 3 or any(v < 0 for v in origin):
            raise ValidationError(f"patch origin must be 3 non-negative ints, got {self.origin}")
        if len(size) != 3 or any(v < 1 for v in size):
            raise ValidationError(f"patch size must be 3 positive ints, got {self.size}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "size", size)

    def check_bounds(self, dims):
        for o, s, d, axis in zip(self.origin, self.size, dims, "xyz"):
            if o + s > d:
                raise ValidationError(
                    f"patch exceeds volume along {axis}: origin {o} + size {s} > dim {d}"
                )

    def slices(self):
        return tuple(slice(o, o + s) for o, s in zip(self.origin, self.size))

    @classmethod
    def full(cls, dims):
        """The identity patch covering a whole volume of shape ``dims``."""
        return cls((0, 0, 0), tuple(dims))


def extract_patch(obj, spec: PatchSpec):
    """Cut a patch out of any grid-aligned field, keeping mm coordinates.

    Works on the volume types of this package (anything exposing ``grid``
    and a ``_patched(grid, slices)`` constructor hook) and returns the same
    kind of object on the sub-grid. The patch affine is translated so the
    mm coordinates of retained voxels are unchanged.
    """
    grid = obj.grid
    spec.check_bounds(grid.dims)
    new_grid = grid.shifted(spec.origin).with_dims(spec.size)
    return obj._patched(new_grid, spec.slices())
