"""Minimal NIfTI-1 reader/writer for single-file .nii / .nii.gz volumes.

Only the header fields this package relies on are interpreted: dimensions,
datatype, pixdim, scl_slope/scl_inter and the sform/qform affines.  Written
files populate both sform and qform with the same transform.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import LabelMap, VoxelGrid

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI datatype code -> numpy dtype
_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    256: np.dtype(np.int8),
    512: np.dtype(np.uint16),
}
_CODES = {v: k for k, v in _DTYPES.items()}


class NiftiError(Exception):
    """Base class for NIfTI read/write failures."""


class NiftiParseError(NiftiError):
    """Malformed or unsupported NIfTI content; message names the field."""


@dataclass
class NiftiMeta:
    datatype: int
    dim: tuple[int, int, int]
    pixdim: tuple[float, float, float]
    affine: np.ndarray
    scl_slope: float
    scl_inter: float


def _read_bytes(path: Path) -> bytes:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _quaternion_affine(hdr: dict) -> np.ndarray:
    b, c, d = hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]
    a = max(0.0, 1.0 - (b * b + c * c + d * d)) ** 0.5
    qfac = -1.0 if hdr["pixdim0"] < 0 else 1.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    sp = np.array([hdr["pixdim"][0], hdr["pixdim"][1], qfac * hdr["pixdim"][2]])
    aff = np.eye(4)
    aff[:3, :3] = rot * sp
    aff[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return aff


def _affine_to_quaternion(affine: np.ndarray, spacing) -> tuple[float, float, float, float]:
    """Best-effort qform quaternion: orthonormalized rotation part, qfac folded in."""
    rot = affine[:3, :3] / np.asarray(spacing)
    # Gram-Schmidt; shear (if any) is dropped from the qform only
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    qfac = 1.0
    if np.linalg.det(r) < 0:
        r = r @ np.diag([1, 1, -1])
        qfac = -1.0
    t = np.trace(r)
    if t > 0:
        s = 0.5 / np.sqrt(t + 1.0)
        a = 0.25 / s
        b = (r[2, 1] - r[1, 2]) * s
        c = (r[0, 2] - r[2, 0]) * s
        d = (r[1, 0] - r[0, 1]) * s
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(max(1e-12, 1.0 + r[i, i] - r[j, j] - r[k, k]))
        q = [0.0, 0.0, 0.0]
        q[i] = 0.25 * s
        q[j] = (r[j, i] + r[i, j]) / s
        q[k] = (r[k, i] + r[i, k]) / s
        a = (r[k, j] - r[j, k]) / s
        b, c, d = q
    if a < 0:
        a, b, c, d = -a, -b, -c, -d
    return qfac, b, c, d


def read_nifti(path) -> tuple[VoxelGrid, NiftiMeta]:
    """Read a .nii or .nii.gz file into a VoxelGrid plus header metadata."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiParseError(f"truncated header: {len(raw)} bytes < {HEADER_SIZE} (sizeof_hdr)")
    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack(order + "i", raw[:4])
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise NiftiParseError(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiParseError(f"bad magic {magic!r}")
    dim = struct.unpack(order + "8h", raw[40:56])
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiParseError(f"dim[0] is {ndim}, expected 1..7")
    shape = tuple(max(1, d) for d in dim[1:4])
    datatype, bitpix = struct.unpack(order + "2h", raw[70:74])
    if datatype not in _DTYPES:
        raise NiftiParseError(f"unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(order)
    pixdim_all = struct.unpack(order + "8f", raw[76:108])
    (vox_offset,) = struct.unpack(order + "f", raw[108:112])
    scl_slope, scl_inter = struct.unpack(order + "2f", raw[112:120])
    qform_code, sform_code = struct.unpack(order + "2h", raw[252:256])
    quatern = struct.unpack(order + "6f", raw[256:280])
    srow = struct.unpack(order + "12f", raw[280:328])

    pixdim = tuple(abs(p) if p != 0 else 1.0 for p in pixdim_all[1:4])
    if sform_code > 0:
        affine = np.vstack([np.array(srow).reshape(3, 4), [0, 0, 0, 1]])
    elif qform_code > 0:
        hdr = {
            "quatern_b": quatern[0],
            "quatern_c": quatern[1],
            "quatern_d": quatern[2],
            "qoffset_x": quatern[3],
            "qoffset_y": quatern[4],
            "qoffset_z": quatern[5],
            "pixdim": pixdim,
            "pixdim0": pixdim_all[0],
        }
        affine = _quaternion_affine(hdr)
    else:
        affine = np.diag([*pixdim, 1.0])

    n = int(np.prod(shape))
    start = int(vox_offset) if vox_offset else VOX_OFFSET
    payload = raw[start : start + n * dtype.itemsize]
    if len(payload) < n * dtype.itemsize:
        raise NiftiParseError(
            f"truncated payload: {len(payload)} bytes, need {n * dtype.itemsize} for dim {shape}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data.astype(np.float64) * slope + scl_inter
    meta = NiftiMeta(
        datatype=datatype,
        dim=shape,
        pixdim=pixdim,
        affine=affine,
        scl_slope=scl_slope,
        scl_inter=scl_inter,
    )
    return VoxelGrid(data=np.asarray(data), spacing=pixdim, affine=affine), meta


def write_nifti(v: VoxelGrid | LabelMap, path, integer_labels: bool = False) -> None:
    """Write a volume as NIfTI-1; labels as uint8, images as float32.

    Gzip compression is applied when the path ends in .gz (with a fixed
    mtime so identical volumes produce byte-identical files).
    """
    if isinstance(v, LabelMap):
        v = v.grid
        integer_labels = True
    path = Path(path)
    if integer_labels:
        data = v.data.astype(np.uint8)
    else:
        data = v.data.astype(np.float32)
    code = _CODES[data.dtype]
    dtype = data.dtype.newbyteorder("<")
    shape = v.shape

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, dtype.itemsize * 8)
    qfac, qb, qc, qd = _affine_to_quaternion(v.affine, v.spacing)
    struct.pack_into("<8f", hdr, 76, qfac, *v.spacing, 1, 1, 1, 1)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<2h", hdr, 252, 1, 1)  # qform_code, sform_code
    struct.pack_into(
        "<6f", hdr, 256, qb, qc, qd, v.affine[0, 3], v.affine[1, 3], v.affine[2, 3]
    )
    struct.pack_into("<12f", hdr, 280, *v.affine[:3, :4].ravel())
    hdr[344:348] = MAGIC

    payload = bytes(hdr) + b"\x00" * (VOX_OFFSET - HEADER_SIZE)
    payload += data.astype(dtype).tobytes(order="F")
    try:
        if str(path).endswith(".gz"):
            with open(path, "wb") as f:
                # fixed mtime and no embedded name: identical volumes give
                # byte-identical files
                with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0) as gz:
                    gz.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as e:
        raise NiftiError(f"failed to write {path}: {e}") from e
