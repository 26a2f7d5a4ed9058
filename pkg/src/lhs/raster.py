"""Grayscale image I/O, geometric preprocessing and 3x3 neighborhood sampling.

Images are plain 2-D ``float64`` numpy arrays of shape ``(height, width)``
holding intensities on the [0, 255] scale. Nothing is ever truncated back
to 8 bits.
"""

import enum
import os

import numpy as np

# clockwise from the top-left neighbor, as (row, col) offsets
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
DIAGONAL_SLOTS = (0, 2, 4, 6)
AXIAL_SLOTS = (1, 3, 5, 7)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class SamplingMode(str, enum.Enum):
    RECTANGULAR = "rectangular"
    CIRCULAR = "circular"


def as_mode(mode):
    """Coerce a string or ``SamplingMode`` to ``SamplingMode``."""
    try:
        return SamplingMode(mode)
    except ValueError:
        raise ValueError(f"unknown sampling mode {mode!r}; expected 'rectangular' or 'circular'") from None


class NetpbmError(ValueError):
    pass


class UnsupportedFormatError(NetpbmError):
    pass


class MalformedHeaderError(NetpbmError):
    pass


class TruncatedDataError(NetpbmError):
    pass


def _header_tokens(buf, count, start):
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset just past the last token.
    """
    tokens = []
    pos = start
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeaderError("unexpected end of file inside header")
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        end = pos
        while end < n and not buf[end:end + 1].isspace() and buf[end:end + 1] != b"#":
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    return tokens, pos


def parse_netpbm(buf):
    """Decode PGM (P2/P5) or PPM (P3/P6) bytes to a gray image on [0, 255]."""
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise UnsupportedFormatError(f"unsupported magic number {magic!r}")
    tokens, pos = _header_tokens(buf, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeaderError(f"non-integer header field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise MalformedHeaderError(f"maxval {maxval} outside 1..65535")

    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P2", b"P3"):
        fields = buf[pos:].split()
        if len(fields) < count:
            raise TruncatedDataError(f"expected {count} samples, found {len(fields)}")
        try:
            raw = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError:
            raise MalformedHeaderError("non-integer sample in ASCII payload") from None
    else:
        # exactly one whitespace byte separates maxval from the raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        nbytes = count * dtype.itemsize
        payload = buf[pos:pos + nbytes]
        if len(payload) < nbytes:
            raise TruncatedDataError(f"expected {nbytes} payload bytes, found {len(payload)}")
        raw = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    if raw.max(initial=0) > maxval:
        raise MalformedHeaderError(f"sample exceeds maxval {maxval}")

    if channels == 3:
        rgb = raw.reshape(height, width, 3)
        img = rgb @ np.array(LUMA_WEIGHTS)
    else:
        img = raw.reshape(height, width)
    if maxval != 255:
        img = img * (255.0 / maxval)
    return img


def load_image(path):
    """Read a PGM/PPM file into a float gray image."""
    with open(path, "rb") as fh:
        return parse_netpbm(fh.read())


def save_pgm(path, img):
    """Write ``img`` as binary 8-bit PGM, rounding and clipping to [0, 255]."""
    img = np.asarray(img)
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def crop(img, roi):
    """Return the sub-image ``roi = (left, top, right, bottom)`` (right/bottom exclusive)."""
    left, top, right, bottom = (int(v) for v in roi)
    h, w = img.shape
    if not (0 <= left < right <= w and 0 <= top < bottom <= h):
        raise ValueError(f"ROI {roi} out of bounds for {w}x{h} image")
    return img[top:bottom, left:right].copy()


def center_crop(img, width, height):
    h, w = img.shape
    if width > w or height > h:
        raise ValueError(f"cannot center-crop {w}x{h} image to {width}x{height}")
    left = (w - width) // 2
    top = (h - height) // 2
    return crop(img, (left, top, left + width, top + height))


def _resample_axis(a, n, axis):
    m = a.shape[axis]
    if n == m:
        return a
    if n == 1 or m == 1:
        pos = np.zeros(n)
    else:
        pos = np.arange(n) * ((m - 1) / (n - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, m - 1)
    hi = np.minimum(lo + 1, m - 1)
    frac = pos - lo
    a0 = np.take(a, lo, axis=axis)
    a1 = np.take(a, hi, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = n
    # a0 + f*(a1 - a0) keeps flat regions exactly flat
    return a0 + frac.reshape(shape) * (a1 - a0)


def resize(img, new_width, new_height):
    """Corner-aligned bilinear resampling to ``new_width`` x ``new_height``."""
    if new_width < 1 or new_height < 1:
        raise ValueError(f"target size {new_width}x{new_height} must be positive")
    out = _resample_axis(np.asarray(img, dtype=np.float64), int(new_height), 0)
    return _resample_axis(out, int(new_width), 1)


def hflip(img):
    return img[:, ::-1].copy()


def extract_diff_vectors(img, mode=SamplingMode.RECTANGULAR, return_coords=False):
    """Differential vectors of every interior 3x3 neighborhood.

    Returns an ``(N, 8)`` array, N = (height-2)*(width-2), rows in raster
    order of the center pixel. Component i is ``neighbor_i - center`` with
    neighbors ordered clockwise from the top-left. In circular mode the
    four diagonal neighbors are bilinearly interpolated at distance one
    from the center.

    With ``return_coords`` also returns the ``(N, 2)`` (row, col) of each
    center pixel.
    """
    mode = as_mode(mode)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {img.shape}")
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError(f"image {w}x{h} too small; need at least 3x3")

    center = img[1:h - 1, 1:w - 1]

    def diff(dr, dc):
        return img[1 + dr:h - 1 + dr, 1 + dc:w - 1 + dc] - center

    diffs = [diff(dr, dc) for dr, dc in NEIGHBOR_OFFSETS]
    if mode is SamplingMode.CIRCULAR:
        f = 1.0 / np.sqrt(2.0)
        w_axis = f * (1.0 - f)
        w_diag = f * f
        for slot in DIAGONAL_SLOTS:
            dr, dc = NEIGHBOR_OFFSETS[slot]
            # interpolate differences, not intensities, so constant shifts cancel exactly
            diffs[slot] = w_axis * diff(dr, 0) + w_axis * diff(0, dc) + w_diag * diffs[slot]
    vectors = np.stack([d.ravel() for d in diffs], axis=1)
    if not return_coords:
        return vectors
    rows, cols = np.mgrid[1:h - 1, 1:w - 1]
    return vectors, np.stack([rows.ravel(), cols.ravel()], axis=1)


def list_images(paths):
    """Expand directories into sorted lists of .pgm/.ppm files."""
    out = []
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                if name.lower().endswith((".pgm", ".ppm", ".pnm")):
                    out.append(os.path.join(p, name))
        else:
            out.append(p)
    return out


def parse_grid(text):
    """'7x4' -> (7, 4) as (rows, cols); None or '' -> None."""
    if text is None or text == "" or text == "none":
        return None
    if isinstance(text, tuple):
        return tuple(int(t) for t in text)
    try:
        rows, cols = (int(t) for t in str(text).lower().split("x"))
    except ValueError:
        raise ValueError(f"grid must look like ROWSxCOLS, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {text!r}")
    return rows, cols


def cell_index(img, grid):
    """Center-crop ``img`` to a multiple of ``grid`` and label interior pixels by cell.

    Returns the cropped image and, for every differential vector of it (in
    the order produced by ``extract_diff_vectors``), the row-major index of
    the cell containing its center pixel.
    """
    rows, cols = grid
    h, w = img.shape
    ch, cw = h // rows, w // cols
    if ch < 3 or cw < 3:
        raise ValueError(f"{rows}x{cols} grid on a {w}x{h} image gives cells smaller than 3x3")
    img = center_crop(img, cw * cols, ch * rows)
    r, c = np.mgrid[1:ch * rows - 1, 1:cw * cols - 1]
    return img, ((r // ch) * cols + c // cw).ravel()
