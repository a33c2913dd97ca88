"""Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Only what volumetric segmentation needs: 3D/4D arrays, the common scalar
datatypes, scl_slope/scl_inter scaling and sform/qform/pixdim affines.
"""

from __future__ import annotations

import gzip
import os

import numpy as np

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"), ("data_type", "S10"), ("db_name", "S18"), ("extents", "i4"),
    ("session_error", "i2"), ("regular", "S1"), ("dim_info", "u1"), ("dim", "i2", (8,)),
    ("intent_p1", "f4"), ("intent_p2", "f4"), ("intent_p3", "f4"), ("intent_code", "i2"),
    ("datatype", "i2"), ("bitpix", "i2"), ("slice_start", "i2"), ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"), ("scl_slope", "f4"), ("scl_inter", "f4"), ("slice_end", "i2"),
    ("slice_code", "u1"), ("xyzt_units", "u1"), ("cal_max", "f4"), ("cal_min", "f4"),
    ("slice_duration", "f4"), ("toffset", "f4"), ("glmax", "i4"), ("glmin", "i4"),
    ("descrip", "S80"), ("aux_file", "S24"), ("qform_code", "i2"), ("sform_code", "i2"),
    ("quatern_b", "f4"), ("quatern_c", "f4"), ("quatern_d", "f4"),
    ("qoffset_x", "f4"), ("qoffset_y", "f4"), ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)), ("srow_y", "f4", (4,)), ("srow_z", "f4", (4,)),
    ("intent_name", "S16"), ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == 348

# NIfTI datatype code -> numpy dtype
DATATYPES = {
    2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64,
    256: np.int8, 512: np.uint16, 768: np.uint32, 1024: np.int64, 1280: np.uint64,
}
_CODES = {np.dtype(v): k for k, v in DATATYPES.items()}


def _open(path, mode):
    path = os.fspath(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def _qform_affine(hdr) -> np.ndarray:
    b, c, d = (float(hdr[k]) for k in ("quatern_b", "quatern_c", "quatern_d"))
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    pixdim = hdr["pixdim"].astype(np.float64)
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    zooms = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * zooms
    affine[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return affine


def header_affine(hdr) -> np.ndarray:
    """Voxel-to-world affine, preferring sform, then qform, then pixdim scaling."""
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0], affine[1], affine[2] = hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]
        return affine
    if int(hdr["qform_code"]) > 0:
        return _qform_affine(hdr)
    return np.diag([*np.abs(hdr["pixdim"][1:4].astype(np.float64)), 1.0])


def read_nifti(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(data, affine, header)``; data keeps its on-disk dtype unless scaled."""
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 348:
        raise OSError(f"{path}: file too short for a NIfTI-1 header")
    hdr = np.frombuffer(raw[:348], dtype=HEADER_DTYPE)[0]
    if hdr["sizeof_hdr"] != 348:
        hdr = np.frombuffer(raw[:348], dtype=HEADER_DTYPE.newbyteorder(">"))[0]
        if hdr["sizeof_hdr"] != 348:
            raise OSError(f"{path}: not a NIfTI-1 file")
    if hdr["magic"] not in (b"n+1", b"ni1"):
        raise OSError(f"{path}: bad NIfTI magic {hdr['magic']!r}")
    if hdr["magic"] == b"ni1":
        raise OSError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise OSError(f"{path}: unsupported NIfTI datatype {code}")
    ndim = int(hdr["dim"][0])
    if not 1 <= ndim <= 7:
        raise OSError(f"{path}: invalid dim[0]={ndim}")
    shape = tuple(int(n) for n in hdr["dim"][1:ndim + 1])
    dtype = np.dtype(DATATYPES[code]).newbyteorder(hdr.dtype["sizeof_hdr"].byteorder)
    offset = int(hdr["vox_offset"])
    count = int(np.prod(shape))
    if len(raw) < offset + count * dtype.itemsize:
        raise OSError(f"{path}: truncated voxel data")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape, order="F")
    data = data.astype(dtype.newbyteorder("="))
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        if np.isfinite(slope) and np.isfinite(inter) and slope != 0.0:
            data = data * np.float32(slope) + np.float32(inter)
    return data, header_affine(hdr), hdr


def write_nifti(path, data: np.ndarray, affine: np.ndarray, description: str = "") -> None:
    """Write a single-file NIfTI-1 image with sform (and matching pixdim) set from ``affine``."""
    data = np.asarray(data)
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if data.dtype not in _CODES:
        raise TypeError(f"cannot store dtype {data.dtype} in NIfTI")
    affine = np.asarray(affine, dtype=np.float64)
    hdr = np.zeros((), dtype=HEADER_DTYPE)
    hdr["sizeof_hdr"] = 348
    hdr["regular"] = b"r"
    hdr["dim"][0] = data.ndim
    hdr["dim"][1:data.ndim + 1] = data.shape
    hdr["dim"][data.ndim + 1:] = 1
    hdr["datatype"] = _CODES[data.dtype]
    hdr["bitpix"] = data.dtype.itemsize * 8
    hdr["pixdim"][:] = 1.0
    hdr["pixdim"][1:4] = np.linalg.norm(affine[:3, :3], axis=0)
    hdr["vox_offset"] = 352
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2 | 8  # mm, seconds
    hdr["descrip"] = description.encode("ascii", "replace")[:79]
    hdr["sform_code"] = 1  # scanner
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = affine[0], affine[1], affine[2]
    hdr["magic"] = b"n+1"
    payload = hdr.tobytes() + b"\x00" * 4 + data.astype(data.dtype.newbyteorder("<")).tobytes(order="F")
    path = os.fspath(path)
    # mtime=0 keeps .nii.gz output byte-identical across runs
    if path.endswith(".gz"):
        with open(path, "wb") as raw_fh, gzip.GzipFile(fileobj=raw_fh, mode="wb", mtime=0, filename="") as fh:
            fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)
