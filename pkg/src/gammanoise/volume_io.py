"""4D volume container, minimal NIfTI-1 reader/writer, raw sidecar format and reports.

Only the header fields needed to place the voxel data are interpreted (dim,
datatype, pixdim, vox_offset, scl_slope/scl_inter, magic); the rest of the
348-byte header is carried along untouched and echoed on write.
"""

from dataclasses import dataclass, field
import csv
import gzip
import io
import json
import logging
import os
from pathlib import Path
import struct

import numpy as np

__all__ = [
    "Volume4D",
    "VolumeLoadError",
    "read_volume",
    "write_volume",
    "write_report",
    "read_report",
    "REPORT_COLUMNS",
]

log = logging.getLogger(__name__)

HEADER_SIZE = 348
REPORT_COLUMNS = ("slice_index", "sigma", "n_dof", "voxel_count", "converged", "method")

# NIfTI datatype code -> (name, numpy dtype)
_DATATYPES = {
    2: ("u8", np.uint8),
    4: ("i16", np.int16),
    8: ("i32", np.int32),
    16: ("f32", np.float32),
    64: ("f64", np.float64),
    256: ("i8", np.int8),
    512: ("u16", np.uint16),
}
_CODES = {name: code for code, (name, _) in _DATATYPES.items()}


class VolumeLoadError(ValueError):
    """A volume file could not be interpreted; ``field`` names the offending part."""

    def __init__(self, message, field=None, path=None):
        self.field = field
        self.path = path
        where = f"{path}: " if path else ""
        what = f"[{field}] " if field else ""
        super().__init__(f"{where}{what}{message}")


@dataclass
class Volume4D:
    """X x Y x Z x K magnitude samples in double precision.

    ``header`` holds the raw NIfTI header bytes when the volume came from a
    NIfTI file so orientation fields survive a read/write cycle.
    """

    data: np.ndarray
    voxel_dims: tuple = (1.0, 1.0, 1.0)
    dtype_origin: str = "f64"
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    header: bytes = field(default=None, repr=False)
    negatives_clamped: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., np.newaxis]
        if data.ndim != 4 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D or 4D array, got shape {data.shape}")
        self.data = data
        self.voxel_dims = tuple(float(v) for v in self.voxel_dims)

    @property
    def shape(self):
        return self.data.shape

    @property
    def spatial_shape(self):
        return self.data.shape[:3]

    @property
    def k_volumes(self):
        return self.data.shape[3]


def _as_volume(obj):
    if isinstance(obj, Volume4D):
        return obj
    return Volume4D(np.asarray(obj))


# -- NIfTI-1 -----------------------------------------------------------------

def _open_bytes(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise VolumeLoadError("file does not exist", path=str(path)) from None
    except OSError as exc:
        raise VolumeLoadError(f"cannot read file: {exc}", path=str(path)) from None
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except OSError as exc:
            raise VolumeLoadError(f"corrupt gzip stream: {exc}", field="gzip",
                                  path=str(path)) from None
    return raw


def _detect_endian(header, path):
    for endian in ("<", ">"):
        (sizeof_hdr,) = struct.unpack(endian + "i", header[0:4])
        (dim0,) = struct.unpack(endian + "h", header[40:42])
        if sizeof_hdr == HEADER_SIZE and 1 <= dim0 <= 7:
            return endian
    raise VolumeLoadError("dim[0] outside [1, 7] in both byte orders", field="dim",
                          path=path)


def _read_nifti(raw, path, base_dir=None):
    if len(raw) < HEADER_SIZE:
        raise VolumeLoadError(f"header truncated ({len(raw)} < 348 bytes)",
                              field="header", path=path)
    header = raw[:HEADER_SIZE]
    magic = header[344:348]
    if magic not in (b"n+1\0", b"ni1\0"):
        raise VolumeLoadError(f"bad magic {magic!r}", field="magic", path=path)
    e = _detect_endian(header, path)
    dims = struct.unpack(e + "8h", header[40:56])
    ndim = dims[0]
    shape = tuple(int(d) for d in dims[1:1 + ndim])
    if any(d < 1 for d in shape):
        raise VolumeLoadError(f"non-positive dimension in {shape}", field="dim", path=path)
    if ndim > 4 and any(d != 1 for d in shape[4:]):
        raise VolumeLoadError(f"dimensions beyond the 4th are not supported: {shape}",
                              field="dim", path=path)
    shape = (shape + (1, 1, 1, 1))[:4]
    (datatype,) = struct.unpack(e + "h", header[70:72])
    if datatype not in _DATATYPES:
        raise VolumeLoadError(f"unsupported datatype code {datatype}", field="datatype",
                              path=path)
    name, np_dtype = _DATATYPES[datatype]
    pixdim = struct.unpack(e + "8f", header[76:108])
    (vox_offset,) = struct.unpack(e + "f", header[108:112])
    slope, inter = struct.unpack(e + "2f", header[112:120])

    count = int(np.prod(shape))
    itemsize = np.dtype(np_dtype).itemsize
    if magic == b"ni1\0":
        img_path = Path(path).with_suffix(".img")
        try:
            payload = img_path.read_bytes()
        except OSError:
            raise VolumeLoadError("companion .img file missing", field="payload",
                                  path=path) from None
        offset = int(vox_offset)
    else:
        payload = raw
        offset = int(vox_offset) if vox_offset >= HEADER_SIZE else 352
    needed = offset + count * itemsize
    if len(payload) < needed:
        raise VolumeLoadError(
            f"payload truncated: need {count} elements ({needed} bytes), file has "
            f"{len(payload)} bytes", field="payload", path=path)
    arr = np.frombuffer(payload, dtype=np.dtype(np_dtype).newbyteorder(e),
                        count=count, offset=offset)
    # NIfTI stores the first index fastest
    data = arr.reshape(shape, order="F").astype(np.float64)
    if slope != 0.0 and np.isfinite(slope) and not (slope == 1.0 and inter == 0.0):
        data = data * float(slope) + float(inter)
    else:
        slope, inter = 1.0, 0.0
    if e == ">":
        header = _swap_header(header)
    return Volume4D(data, voxel_dims=tuple(pixdim[1:4]), dtype_origin=name,
                    scl_slope=float(slope), scl_inter=float(inter), header=header)


# (offset, struct format) of every numeric header field, for byte swapping
_HEADER_LAYOUT = (
    (0, "i"), (32, "i"), (36, "h"), (40, "8h"), (56, "3f"), (68, "h"), (70, "h"),
    (72, "h"), (74, "h"), (76, "8f"), (108, "f"), (112, "2f"), (120, "h"),
    (124, "2f"), (132, "f"), (136, "f"), (140, "2i"), (252, "2h"), (256, "6f"),
    (280, "12f"),
)


def _swap_header(header, to_big=False):
    src, dst = (">", "<") if not to_big else ("<", ">")
    out = bytearray(header)
    for off, fmt in _HEADER_LAYOUT:
        size = struct.calcsize(fmt)
        vals = struct.unpack(src + fmt, header[off:off + size])
        out[off:off + size] = struct.pack(dst + fmt, *vals)
    return bytes(out)


def _build_header(volume, datatype, template=None, big_endian=False):
    hdr = bytearray(template if template is not None else bytes(HEADER_SIZE))
    x, y, z, k = volume.shape
    ndim = 4 if k > 1 else 3
    dims = (ndim, x, y, z, k, 1, 1, 1)
    itemsize = np.dtype(_DATATYPES[datatype][1]).itemsize
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, *dims)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, itemsize * 8)
    pixdim = list(struct.unpack("<8f", hdr[76:108]))
    pixdim[0] = pixdim[0] if pixdim[0] in (-1.0, 1.0) else 1.0
    pixdim[1:4] = volume.voxel_dims
    pixdim[4] = pixdim[4] or 1.0
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\0"
    hdr = bytes(hdr)
    if big_endian:
        hdr = _swap_header(hdr, to_big=True)
    return hdr


def write_volume(volume, path, dtype="f32", big_endian=False):
    """Write ``volume`` as NIfTI-1 (``.nii`` / ``.nii.gz``) or raw f32 with a JSON sidecar.

    Values are stored without scaling; integer dtypes are rounded and must fit
    the target range.

    Parameters
    ----------
    volume : Volume4D or array_like
    path : str or Path
        ``.raw`` writes the raw+sidecar format, anything else NIfTI.
    dtype : {"f32", "f64", "i16", "u8"}
    """
    volume = _as_volume(volume)
    path = Path(path)
    if path.suffix == ".raw":
        _write_raw(volume, path)
        return
    if dtype not in _CODES:
        raise ValueError(f"unsupported output dtype {dtype!r}")
    code = _CODES[dtype]
    np_dtype = np.dtype(_DATATYPES[code][1])
    data = volume.data
    if np_dtype.kind in "iu":
        info = np.iinfo(np_dtype)
        data = np.rint(data)
        if data.min() < info.min or data.max() > info.max:
            raise ValueError(f"values out of range for {dtype}")
    header = _build_header(volume, code, template=_template_header(volume.header),
                           big_endian=big_endian)
    order = ">" if big_endian else "<"
    payload = np.asarray(data, dtype=np_dtype.newbyteorder(order))
    body = header + b"\0\0\0\0" + payload.tobytes(order="F")
    if path.name.endswith(".gz"):
        body = gzip.compress(body, mtime=0)
    try:
        path.write_bytes(body)
    except OSError as exc:
        raise OSError(f"cannot write volume to {path}: {exc}") from exc


def _template_header(header):
    if header is None or len(header) != HEADER_SIZE:
        return None
    return header


# -- raw + sidecar -------------------------------------------------------------

def _sidecar_path(path):
    return Path(str(path) + ".json") if not str(path).endswith(".json") else Path(path)


def _write_raw(volume, path):
    side = {"shape": list(volume.shape), "voxel_dims": list(volume.voxel_dims),
            "dtype": "f32"}
    path.write_bytes(volume.data.astype("<f4").tobytes(order="C"))
    _sidecar_path(path).write_text(json.dumps(side, indent=2))


def _read_raw(path):
    side_path = _sidecar_path(path)
    if not side_path.exists():
        side_path = Path(path).with_suffix(".json")
    try:
        side = json.loads(side_path.read_text())
    except FileNotFoundError:
        raise VolumeLoadError("JSON sidecar missing", field="sidecar",
                              path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise VolumeLoadError(f"sidecar is not JSON: {exc}", field="sidecar",
                              path=str(path)) from None
    if "shape" not in side:
        raise VolumeLoadError("sidecar lacks 'shape'", field="shape", path=str(path))
    shape = tuple(int(s) for s in side["shape"])
    if len(shape) not in (3, 4) or min(shape) < 1:
        raise VolumeLoadError(f"invalid shape {shape}", field="shape", path=str(path))
    payload = Path(path).read_bytes()
    count = int(np.prod(shape))
    if len(payload) < 4 * count:
        raise VolumeLoadError(f"payload truncated: need {count} f32 elements, file has "
                              f"{len(payload) // 4}", field="payload", path=str(path))
    data = np.frombuffer(payload, dtype="<f4", count=count).reshape(shape).astype(np.float64)
    return Volume4D(data, voxel_dims=tuple(side.get("voxel_dims", (1.0, 1.0, 1.0))),
                    dtype_origin="f32")


def read_volume(path):
    """Load a 3D or 4D volume; 3D inputs come back with K = 1.

    Accepts ``.nii``, ``.nii.gz``, ``.hdr/.img`` pairs and ``.raw`` with a
    JSON sidecar. Non-finite voxels are rejected, negative values are clamped
    to 0 and counted in ``negatives_clamped``.

    Raises
    ------
    VolumeLoadError
    """
    path = Path(path)
    if path.suffix == ".raw":
        if not path.exists():
            raise VolumeLoadError("file does not exist", path=str(path))
        vol = _read_raw(path)
    else:
        vol = _read_nifti(_open_bytes(path), str(path))
    if not np.all(np.isfinite(vol.data)):
        bad = int(np.count_nonzero(~np.isfinite(vol.data)))
        raise VolumeLoadError(f"{bad} non-finite voxels", field="data", path=str(path))
    negative = vol.data < 0
    n_neg = int(np.count_nonzero(negative))
    if n_neg:
        log.warning("%s: clamped %d negative voxels to 0", path, n_neg)
        vol.data = np.where(negative, 0.0, vol.data)
        vol.negatives_clamped = n_neg
    return vol


# -- reports ---------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str, bool)):
        return obj.value
    return obj


def write_report(records, path, format=None, metadata=None):
    """Write result records as JSON ``{metadata, results}`` or CSV.

    Parameters
    ----------
    records : list of dict
        Each needs at least the :data:`REPORT_COLUMNS` keys for CSV output.
    format : {"json", "csv"}, optional
        Inferred from the file extension when omitted.
    """
    records = list(records)
    if not records:
        raise ValueError("report needs at least one record")
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "json"
    if format == "json":
        doc = {"metadata": _jsonable(metadata or {}), "results": _jsonable(records)}
        text = json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"
    elif format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rec in records:
            row = []
            for col in REPORT_COLUMNS:
                val = _jsonable(rec.get(col))
                row.append("" if val is None else repr(val) if isinstance(val, float) else val)
            writer.writerow(row)
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {format!r}")
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def read_report(path):
    """Read a report written by :func:`write_report`; returns ``(metadata, records)``."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        out = []
        for row in rows:
            out.append({
                "slice_index": int(row["slice_index"]),
                "sigma": float(row["sigma"]) if row["sigma"] else None,
                "n_dof": float(row["n_dof"]) if row["n_dof"] else None,
                "voxel_count": int(row["voxel_count"]) if row["voxel_count"] else 0,
                "converged": row["converged"] == "True",
                "method": row["method"],
            })
        return {}, out
    doc = json.loads(text)
    return doc.get("metadata", {}), doc.get("results", [])
