"""Dense light-field containers, batching, and epipolar-plane slicing.

Layout convention used everywhere in this package:

* a light field is a 5D array indexed ``(c, s, t, y, x)`` -- channel,
  two angular coordinates, two spatial coordinates;
* batched activations are 6D arrays indexed ``(n, c, s, t, y, x)``.

Arrays are C-ordered with ``x`` fastest, so the spatial inner loops of the
4D kernels stay cache-friendly. All indexing helpers here are explicitly
bounds-checked: negative or too-large indices raise instead of wrapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LightField",
    "FeatureTensor",
    "Epi",
    "pack_batch",
    "unpack_batch",
    "extract_epi",
    "for_each_view",
]


def _check_index(name, value, extent):
    if not 0 <= value < extent:
        raise IndexError(f"{name}={value} out of range [0, {extent})")


def _as_float_array(data, what):
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if arr.size == 0:
        raise ValueError(f"{what} must have positive extents, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LightField:
    """One light field: dense samples L(x, y, s, t) per channel.

    ``data`` is indexed (c, s, t, y, x). Image-valued fields nominally sit
    in [0, 1]; feature-valued fields are unrestricted.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, "LightField")
        if arr.ndim != 5:
            raise ValueError(f"LightField data must be 5D (c,s,t,y,x), got ndim={arr.ndim}")
        object.__setattr__(self, "data", arr)

    @property
    def c(self):
        return self.data.shape[0]

    @property
    def S(self):
        return self.data.shape[1]

    @property
    def T(self):
        return self.data.shape[2]

    @property
    def Y(self):
        return self.data.shape[3]

    @property
    def X(self):
        return self.data.shape[4]

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def value(self, c, s, t, y, x):
        """Bounds-checked scalar access."""
        for name, idx, extent in zip("cstyx", (c, s, t, y, x), self.shape):
            _check_index(name, idx, extent)
        return self.data[c, s, t, y, x]

    def view(self, s, t):
        """Sub-aperture image at angular position (s, t), shape (c, Y, X)."""
        _check_index("s", s, self.S)
        _check_index("t", t, self.T)
        return self.data[:, s, t]

    def astype(self, dtype):
        return LightField(self.data.astype(dtype))

    @classmethod
    def zeros(cls, c, S, T, Y, X, dtype=np.float64):
        return cls(np.zeros((c, S, T, Y, X), dtype=dtype))


@dataclass(frozen=True)
class FeatureTensor:
    """Batched 6D activation block indexed (n, c, s, t, y, x)."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, "FeatureTensor")
        if arr.ndim != 6:
            raise ValueError(f"FeatureTensor data must be 6D (n,c,s,t,y,x), got ndim={arr.ndim}")
        object.__setattr__(self, "data", arr)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def S(self):
        return self.data.shape[2]

    @property
    def T(self):
        return self.data.shape[3]

    @property
    def Y(self):
        return self.data.shape[4]

    @property
    def X(self):
        return self.data.shape[5]

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype):
        return FeatureTensor(self.data.astype(dtype))


@dataclass(frozen=True)
class Epi:
    """Epipolar-plane image: one angular axis against one spatial axis.

    ``horizontal`` slices fix (y, t) and vary (s, x): shape (S, X).
    ``vertical`` slices fix (x, s) and vary (t, y): shape (T, Y).
    Elements are exact copies of the light-field samples, no resampling.
    """

    data: np.ndarray
    orientation: str

    def __post_init__(self):
        if self.orientation not in ("horizontal", "vertical"):
            raise ValueError(f"unknown EPI orientation {self.orientation!r}")
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError("Epi data must be 2D (angular, spatial)")
        object.__setattr__(self, "data", arr)


def pack_batch(fields):
    """Stack same-shaped light fields into one (n,c,s,t,y,x) tensor."""
    if not fields:
        raise ValueError("pack_batch needs at least one field")
    shape = fields[0].shape
    for i, f in enumerate(fields):
        if f.shape != shape:
            raise ValueError(
                f"pack_batch shape mismatch: field 0 has {shape}, field {i} has {f.shape}"
            )
    return FeatureTensor(np.stack([f.data for f in fields], axis=0))


def unpack_batch(tensor):
    """Inverse of :func:`pack_batch`; round-trips bit-exactly."""
    return [LightField(tensor.data[i].copy()) for i in range(tensor.n)]


def extract_epi(field, orientation, fixed_spatial, fixed_angular, channel=0):
    """Copy one EPI slab out of a light field.

    For ``horizontal`` the fixed coordinates are (y0=fixed_spatial,
    t0=fixed_angular); for ``vertical`` they are (x0, s0).
    """
    _check_index("channel", channel, field.c)
    if orientation == "horizontal":
        _check_index("y", fixed_spatial, field.Y)
        _check_index("t", fixed_angular, field.T)
        return Epi(field.data[channel, :, fixed_angular, fixed_spatial, :].copy(), "horizontal")
    if orientation == "vertical":
        _check_index("x", fixed_spatial, field.X)
        _check_index("s", fixed_angular, field.S)
        return Epi(field.data[channel, fixed_angular, :, :, fixed_spatial].copy(), "vertical")
    raise ValueError(f"unknown EPI orientation {orientation!r}")


def for_each_view(field, fn):
    """Apply ``fn(s, t, view)`` to every sub-aperture image, row-major in (s, t).

    Returns the list of results in iteration order. ``view`` is the
    (c, Y, X) slab for that aperture.
    """
    results = []
    for s in range(field.S):
        for t in range(field.T):
            results.append(fn(s, t, field.data[:, s, t]))
    return results
