"""Pixel buffers, norms, PSNR and grayscale file I/O.

An image is a 2-D float64 numpy array in row-major order. Nominal pixel
range is [0, 1] but values are never clamped during computation; clamping
happens only on save, so iterative solvers are free to leave the range.
"""

import math

import numpy as np

PSNR_CAP_DB = 99.0
PSNR_FLOOR_DB = -99.0


def as_image(data) -> np.ndarray:
    """Coerce ``data`` to a 2-D float64 array and validate it.

    Raises ValueError for wrong dimensionality or non-finite pixels.
    """
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite pixels")
    return a


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def add(a, b):
    """Elementwise a + b; shapes must match."""
    _check_same_shape(a, b)
    return a + b


def sub(a, b):
    """Elementwise a - b; shapes must match."""
    _check_same_shape(a, b)
    return a - b


def scale(a, c):
    """Elementwise c * a."""
    return a * float(c)


def frobenius_norm(a) -> float:
    """Euclidean norm of the flattened pixel buffer."""
    return float(np.sqrt(np.sum(np.square(a, dtype=np.float64))))


def spectral_norm(a, tol: float = 1e-6, max_iter: int = 100) -> float:
    """Largest singular value of ``a`` viewed as a height x width matrix.

    Power iteration on a^T a with a deterministic start vector (all ones,
    falling back to an alternating-sign vector, then to the strongest
    column's basis vector if the start is orthogonal to the dominant
    direction). Stops at relative tolerance ``tol`` or ``max_iter``.
    An all-zero input returns 0 without iterating.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.asarray(a, dtype=np.float64)
    if not np.any(a):
        return 0.0

    n = a.shape[1]
    v = np.ones(n)
    if not np.any(a @ v):
        v = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    if not np.any(a @ v):
        v = np.zeros(n)
        v[int(np.argmax(np.sum(a * a, axis=0)))] = 1.0

    v = v / np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = a @ v
        v_new = a.T @ w
        nrm = np.linalg.norm(v_new)
        if nrm == 0.0:
            # start vector fell into the null space; sigma stays at the
            # best estimate so far
            break
        v = v_new / nrm
        sigma_new = math.sqrt(nrm)
        if sigma > 0 and abs(sigma_new - sigma) <= tol * sigma:
            sigma = sigma_new
            break
        sigma = sigma_new
    return sigma


def psnr(ref, test, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB.

    Returns PSNR_CAP_DB when the MSE is exactly zero and PSNR_FLOOR_DB
    when the MSE overflows, so the value is always finite.
    """
    _check_same_shape(ref, test)
    if peak <= 0:
        raise ValueError("peak must be positive")
    diff = ref - test
    with np.errstate(over="ignore"):  # huge diverged iterates floor below
        mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    if not math.isfinite(mse):
        return PSNR_FLOOR_DB
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# File I/O: binary PGM (P5, maxval 255) and 8-bit grayscale PNG.
# ---------------------------------------------------------------------------

def quantize_u8(img) -> np.ndarray:
    """Clamp to [0, 1] and quantize to uint8 with round-half-up."""
    clipped = np.clip(img, 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(img) -> bytes:
    """Serialize an image as binary PGM (P5, maxval 255)."""
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + quantize_u8(img).tobytes()


def _read_pgm_token(buf: bytes, pos: int):
    # skip whitespace and '#' comment lines between header tokens
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("malformed PGM header: truncated")
    return buf[start:pos], pos


def decode_pgm(buf: bytes) -> np.ndarray:
    """Parse binary PGM bytes into a float image in [0, 1]."""
    if not buf.startswith(b"P5"):
        raise ValueError("malformed PGM header: not a binary P5 file")
    pos = 2
    tokens = []
    for _ in range(3):
        tok, pos = _read_pgm_token(buf, pos)
        tokens.append(tok)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ValueError("malformed PGM header: non-numeric field") from None
    if w <= 0 or h <= 0:
        raise ValueError("malformed PGM header: bad dimensions")
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval} (need 255)")
    pos += 1  # single whitespace byte separating header and raster
    data = buf[pos:pos + w * h]
    if len(data) != w * h:
        raise ValueError("malformed PGM: truncated pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    """Load a PGM or PNG file as a float image in [0, 1].

    Color inputs are reduced to luminance with ITU-R BT.601 weights
    (0.299, 0.587, 0.114).
    """
    p = str(path)
    lower = p.lower()
    if lower.endswith((".pgm", ".pnm")):
        with open(p, "rb") as fh:
            return decode_pgm(fh.read())
    if lower.endswith(".png"):
        from PIL import Image as PILImage

        with PILImage.open(p) as im:
            if im.mode != "L":
                im = im.convert("L")  # BT.601 luminance
            arr = np.asarray(im, dtype=np.float64)
        return arr / 255.0
    raise ValueError(f"unsupported image format: {p}")


def save_image(img, path) -> None:
    """Save an image as PGM or PNG, clamping to [0, 1] and quantizing."""
    p = str(path)
    lower = p.lower()
    if lower.endswith((".pgm", ".pnm")):
        with open(p, "wb") as fh:
            fh.write(encode_pgm(img))
        return
    if lower.endswith(".png"):
        from PIL import Image as PILImage

        PILImage.fromarray(quantize_u8(img), mode="L").save(p)
        return
    raise ValueError(f"unsupported image format: {p}")
