"""Field files, PGM/PPM export and result tables.

Field file layout::

    PNPRR-FIELD 1
    dims: <d> <n1> <n2> [<n3>]
    kind: scalar | vector <d>
    dtype: f32le
    <empty line>
    <row-major little-endian float32 payload; vector components back to back>

Fields are stored as float32 and loaded as float64.
"""
import csv
import os

import numpy as np

from .errors import DimensionError, FieldFormatError

MAGIC = "PNPRR-FIELD 1"

RESULT_COLUMNS = (
    "seed", "method", "denoiser", "lambda1", "lambda2", "dice", "ssd_final",
    "psnr_denoised", "min_jac_det", "outer_iters", "wall_seconds",
)

COLORS = {
    "magenta": (255, 0, 255),
    "blue": (0, 0, 255),
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
}


# ---------------------------------------------------------------------------
# field files
# ---------------------------------------------------------------------------

def encode_field(field, kind=None):
    """Serialise a scalar field (shape ``dims``) or vector field (``(d, *dims)``)."""
    f = np.asarray(field)
    if kind is None:
        kind = "vector" if f.ndim >= 3 and f.shape[0] == f.ndim - 1 else "scalar"
    if kind == "vector":
        dims = f.shape[1:]
        if f.shape[0] != len(dims):
            raise DimensionError(f"vector field shape {f.shape} is not (d, *dims)")
        kind_line = f"kind: vector {len(dims)}"
    elif kind == "scalar":
        dims = f.shape
        kind_line = "kind: scalar"
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    if len(dims) not in (2, 3):
        raise DimensionError(f"fields must be 2-D or 3-D, got dims {dims}")
    header = "\n".join([
        MAGIC,
        "dims: " + " ".join(str(n) for n in (len(dims),) + tuple(dims)),
        kind_line,
        "dtype: f32le",
        "",
        "",
    ])
    payload = np.ascontiguousarray(f, dtype="<f4").tobytes()
    return header.encode("ascii") + payload


def _header_line(buf, pos, lineno):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FieldFormatError(f"line {lineno}: unexpected end of header")
    try:
        return buf[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise FieldFormatError(f"line {lineno}: header is not ASCII") from None


def decode_field(buf):
    """Inverse of :func:`encode_field`; returns a float64 array."""
    buf = bytes(buf)
    line, pos = _header_line(buf, 0, 1)
    if line != MAGIC:
        raise FieldFormatError(f"line 1: bad magic {line!r}, expected {MAGIC!r}")
    line, pos = _header_line(buf, pos, 2)
    parts = line.split()
    try:
        if parts[0] != "dims:":
            raise ValueError
        nums = [int(x) for x in parts[1:]]
        d, dims = nums[0], tuple(nums[1:])
        if d not in (2, 3) or len(dims) != d or min(dims) < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise FieldFormatError(f"line 2: malformed dims line {line!r}") from None
    line, pos = _header_line(buf, pos, 3)
    parts = line.split()
    if parts == ["kind:", "scalar"]:
        shape = dims
    elif len(parts) == 3 and parts[:2] == ["kind:", "vector"] and parts[2] == str(d):
        shape = (d,) + dims
    else:
        raise FieldFormatError(f"line 3: unknown kind {line!r}")
    line, pos = _header_line(buf, pos, 4)
    if line != "dtype: f32le":
        raise FieldFormatError(f"line 4: unsupported dtype line {line!r}")
    line, pos = _header_line(buf, pos, 5)
    if line != "":
        raise FieldFormatError(f"line 5: expected an empty line, got {line!r}")
    expected = 4 * int(np.prod(shape))
    got = len(buf) - pos
    if got != expected:
        raise FieldFormatError(f"payload length {got} bytes, expected {expected} for {shape}")
    return np.frombuffer(buf, dtype="<f4", offset=pos).reshape(shape).astype(np.float64)


def save_field(path, field, kind=None):
    with open(path, "wb") as fh:
        fh.write(encode_field(field, kind))


def load_field(path):
    with open(path, "rb") as fh:
        return decode_field(fh.read())


def load_nifti(path):
    """Placeholder for volumetric scans.

    A reader would go here: load the volume, scale intensities to [0, 1] and
    return it as a scalar field (voxel spacing is not used by the solver).
    """
    raise NotImplementedError("NIfTI input is not supported; convert to a field file first")


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _check_2d(field, slice_index=None):
    f = np.asarray(field, dtype=np.float64)
    if f.ndim == 3 and slice_index is not None:
        f = f[slice_index]
    if f.ndim != 2:
        raise DimensionError(f"image export needs a 2-D field (use a slice for 3-D), got {f.shape}")
    return f


def to_gray(field, slice_index=None):
    """Map ``[min, max]`` to 0..255; a constant field maps to 128."""
    f = _check_2d(field, slice_index)
    lo, hi = float(f.min()), float(f.max())
    if hi == lo:
        return np.full(f.shape, 128, dtype=np.uint8)
    return np.round((f - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_pgm(field, path, slice_index=None):
    g = to_gray(field, slice_index)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        fh.write(g.tobytes())


def mask_boundary(mask):
    """Mask voxels with a 4-connected neighbour outside the mask or the frame."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def render_overlay(image, contours, path, slice_index=None):
    """Write a P6 pixmap of ``image`` with each ``(mask, color)`` contour drawn
    on top; ``color`` is a name from :data:`COLORS` or an RGB triple."""
    g = to_gray(image, slice_index)
    rgb = np.repeat(g[..., None], 3, axis=2)
    for mask, color in contours:
        mask = _check_2d(mask, slice_index)
        if mask.shape != g.shape:
            raise DimensionError(f"contour mask {mask.shape} does not match image {g.shape}")
        rgb[mask_boundary(mask)] = COLORS.get(color, color) if isinstance(color, str) else color
    with open(path, "wb") as fh:
        fh.write(f"P6\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.astype(np.uint8).tobytes())


def read_pnm(path):
    """Minimal P5/P6 reader (for checking exported files)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    channels = 3 if magic == "P6" else 1
    arr = np.frombuffer(data, dtype=np.uint8, offset=pos)
    if arr.size != w * h * channels:
        raise FieldFormatError(f"{path}: expected {w * h * channels} pixel bytes, got {arr.size}")
    return magic, arr.reshape((h, w, 3) if channels == 3 else (h, w))


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def format_value(value):
    """Render numbers with 9 significant digits and no padding zeros."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "nan"
        return f"{float(value):.9g}"
    return str(value)


def write_csv(records, path, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([format_value(rec.get(col)) for col in columns])


def write_results_csv(records, path, extra_columns=()):
    """One row per record with the standard result columns (plus extras)."""
    columns = list(RESULT_COLUMNS) + [c for c in extra_columns if c not in RESULT_COLUMNS]
    write_csv(records, path, columns)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, seeds, files=None):
    """Seed list (one row per case) for a synthetic data directory."""
    rows = []
    for i, seed in enumerate(seeds):
        row = {"seed": int(seed)}
        if files is not None:
            row.update(files[i])
        rows.append(row)
    columns = ["seed"] + (sorted(files[0]) if files else [])
    write_csv(rows, path, columns)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
