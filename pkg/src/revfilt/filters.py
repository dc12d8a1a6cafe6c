"""Built-in deterministic grayscale filters plus an external-process adapter.

Every filter preserves image dimensions and maps constant images to
themselves (normalized kernels / unit gain). Boundary handling is replicate
(edge-clamp) padding throughout. The :class:`BlackBoxFilter` wrapper counts
invocations, which the iteration drivers rely on for cost accounting.
"""

import math
import shlex
import subprocess
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .image import decode_pgm, encode_pgm


class FilterError(RuntimeError):
    """An external filter process failed or broke the wire contract."""


class BlackBoxFilter:
    """Opaque deterministic map Image -> Image with a call counter.

    Determinism and dimension preservation are the wrapped callable's
    obligations; dimensions are checked on every call, determinism is
    checked by the CLI ``doctor`` command.
    """

    def __init__(self, fn, label: str):
        self._fn = fn
        self.label = label
        self.call_count = 0

    def apply(self, img: np.ndarray) -> np.ndarray:
        self.call_count += 1
        out = self._fn(img)
        if out.shape != img.shape:
            raise FilterError(
                f"filter '{self.label}' changed dimensions "
                f"{img.shape} -> {out.shape}"
            )
        return out

    __call__ = apply

    def __repr__(self):
        return f"BlackBoxFilter({self.label!r}, calls={self.call_count})"


# ---------------------------------------------------------------------------
# Convolution kernels
# ---------------------------------------------------------------------------

def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ceil(3*sigma)."""
    r = math.ceil(3.0 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def motion_kernel(length: float, theta_deg: float) -> np.ndarray:
    """Normalized line kernel of the given length and angle.

    The segment of length ``length`` centered on the kernel origin is
    rasterized with dense, evenly spaced samples splatted bilinearly onto
    the grid. theta is measured counter-clockwise from the horizontal
    axis (y up), so theta=45 blurs along the image anti-diagonal.
    """
    half = (length - 1.0) / 2.0
    theta = math.radians(theta_deg)
    dx, dy = math.cos(theta), -math.sin(theta)
    hx = int(math.ceil(abs(half * dx)))
    hy = int(math.ceil(abs(half * dy)))
    kernel = np.zeros((2 * hy + 1, 2 * hx + 1))
    if half == 0.0:
        kernel[hy, hx] = 1.0
        return kernel
    n_samples = int(math.ceil(length * 32)) + 1
    height, width = kernel.shape
    for t in np.linspace(-half, half, n_samples):
        fx, fy = t * dx + hx, t * dy + hy
        x0, y0 = int(math.floor(fx)), int(math.floor(fy))
        u, v = fx - x0, fy - y0
        kernel[y0, x0] += (1 - u) * (1 - v)
        if u > 0 and x0 + 1 < width:
            kernel[y0, x0 + 1] += u * (1 - v)
        if v > 0 and y0 + 1 < height:
            kernel[y0 + 1, x0] += (1 - u) * v
            if u > 0 and x0 + 1 < width:
                kernel[y0 + 1, x0 + 1] += u * v
    return kernel / kernel.sum()


def disk_kernel(radius: float) -> np.ndarray:
    """Normalized indicator of lattice points within ``radius`` of origin."""
    r = int(math.floor(radius))
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    kernel = (x * x + y * y <= radius * radius).astype(np.float64)
    return kernel / kernel.sum()


def _box_mean(img, window):
    return ndimage.uniform_filter(img, size=window, mode="nearest")


# ---------------------------------------------------------------------------
# Built-in filters
# ---------------------------------------------------------------------------

def gaussian_filter(img, sigma: float = 5.0):
    """Gaussian blur, separable convolution with replicate padding."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel_1d(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def motion_blur(img, length: float = 20.0, theta: float = 45.0):
    """Linear motion blur along a direction."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return ndimage.correlate(img, motion_kernel(length, theta), mode="nearest")


def disk_blur(img, radius: float = 3.0):
    """Average over a disk-shaped neighborhood."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return ndimage.correlate(img, disk_kernel(radius), mode="nearest")


def adaptive_wiener(img, window: int = 5, noise: float = 0.1):
    """Local-statistics noise smoothing.

    Per pixel with window mean m and variance s2:
    out = m + max(s2 - noise, 0) / max(s2, noise) * (x - m).
    """
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and >= 3")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    mu = _box_mean(img, window)
    var = np.maximum(_box_mean(img * img, window) - mu * mu, 0.0)
    num = np.maximum(var - noise, 0.0)
    den = np.maximum(var, noise)
    gain = np.divide(num, den, out=np.zeros_like(img), where=den > 0)
    return mu + gain * (img - mu)


def guided_filter_self(img, window: int = 5, eps: float = 0.1):
    """Edge-preserving smoothing with the image as its own guide.

    Per window: a = var / (var + eps), b = mean * (1 - a); the output is
    abar * x + bbar with box-averaged coefficients.
    """
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and >= 3")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = _box_mean(img, window)
    var = np.maximum(_box_mean(img * img, window) - mu * mu, 0.0)
    a = var / (var + eps)
    b = mu * (1.0 - a)
    return _box_mean(a, window) * img + _box_mean(b, window)


def bilateral_filter(img, sigma_s: float = 3.0, sigma_r: float = 0.05):
    """Brute-force bilateral filter.

    Weights are the product of a spatial Gaussian (radius ceil(3*sigma_s))
    and a range Gaussian on intensity difference, normalized per pixel.
    """
    if sigma_s <= 0 or sigma_r <= 0:
        raise ValueError("sigmas must be positive")
    r = math.ceil(3.0 * sigma_s)
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    num = np.zeros_like(img)
    den = np.zeros_like(img)
    inv2ss = 1.0 / (2.0 * sigma_s * sigma_s)
    inv2sr = 1.0 / (2.0 * sigma_r * sigma_r)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ws = math.exp(-(dx * dx + dy * dy) * inv2ss)
            shifted = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            wgt = ws * np.exp(-np.square(shifted - img) * inv2sr)
            num += wgt * shifted
            den += wgt
    return num / den


# ---------------------------------------------------------------------------
# External filter adapter
# ---------------------------------------------------------------------------

class ExternalFilter(BlackBoxFilter):
    """Run an external executable as a filter over a PGM pipe.

    Each apply writes the input as binary PGM (P5, maxval 255) to the
    child's stdin and reads a PGM of identical dimensions from its stdout.
    One child process per call; calls on one instance are serialized.
    """

    def __init__(self, cmd: str, timeout: float = 60.0, label: str | None = None):
        self.cmd = cmd
        self.argv = shlex.split(cmd)
        if not self.argv:
            raise ValueError("empty external filter command")
        self.timeout = timeout
        import threading

        self._lock = threading.Lock()
        super().__init__(self._run, label or f"extern({self.argv[0]})")

    def _run(self, img):
        with self._lock:
            try:
                proc = subprocess.run(
                    self.argv,
                    input=encode_pgm(img),
                    capture_output=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                raise FilterError(
                    f"external filter timed out after {self.timeout}s: {self.cmd}"
                ) from None
            except OSError as exc:
                raise FilterError(f"cannot spawn external filter: {exc}") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.decode("utf-8", "replace").strip()
            raise FilterError(
                f"external filter exited with {proc.returncode}: {stderr[:500]}"
            )
        try:
            out = decode_pgm(proc.stdout)
        except ValueError as exc:
            raise FilterError(f"external filter wrote malformed output: {exc}") from exc
        if out.shape != img.shape:
            raise FilterError(
                f"external filter changed dimensions {img.shape} -> {out.shape}"
            )
        return out


def extern_filter(cmd: str, timeout: float = 60.0) -> ExternalFilter:
    """Wrap an executable invocation as a BlackBoxFilter."""
    return ExternalFilter(cmd, timeout=timeout)


# ---------------------------------------------------------------------------
# Filter specs
# ---------------------------------------------------------------------------

# kind -> {param: (converter, default or None when required)}
_FILTER_PARAMS = {
    "gaussian": {"sigma": (float, 5.0)},
    "motion": {"length": (float, 20.0), "theta": (float, 45.0)},
    "disk": {"radius": (float, 3.0)},
    "wiener": {"window": (int, 5), "noise": (float, 0.1)},
    "guided_self": {"window": (int, 5), "eps": (float, 0.1)},
    "bilateral": {"sigma_s": (float, 3.0), "sigma_r": (float, 0.05)},
    "extern": {"cmd": (str, None), "timeout": (float, 60.0)},
}


@dataclass(frozen=True)
class FilterSpec:
    """A validated (kind, parameters) pair that can build filter instances."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FILTER_PARAMS:
            raise ValueError(
                f"unknown filter kind '{self.kind}' "
                f"(known: {', '.join(sorted(_FILTER_PARAMS))})"
            )
        schema = _FILTER_PARAMS[self.kind]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ValueError(
                f"unknown parameter(s) {sorted(unknown)} for filter '{self.kind}'"
            )
        converted = {}
        for name, (conv, default) in schema.items():
            if name in self.params:
                converted[name] = conv(self.params[name])
            elif default is None:
                raise ValueError(f"filter '{self.kind}' requires parameter '{name}'")
            else:
                converted[name] = default
        object.__setattr__(self, "params", converted)

    @property
    def label(self) -> str:
        if self.kind == "extern":
            # basename plus a command digest so distinct tools sharing an
            # interpreter (python3 a.py vs python3 b.py) stay distinct
            base = shlex.split(self.params["cmd"])[0].rsplit("/", 1)[-1]
            digest = zlib.crc32(self.params["cmd"].encode()) & 0xFFFF
            return f"extern-{base}-{digest:04x}"
        parts = [f"{k}{self.params[k]:g}" for k in sorted(self.params)]
        return f"{self.kind}-" + "-".join(parts)

    def build(self) -> BlackBoxFilter:
        """Construct a fresh filter instance with its own call counter."""
        p = self.params
        if self.kind == "gaussian":
            fn = lambda im: gaussian_filter(im, p["sigma"])
        elif self.kind == "motion":
            fn = lambda im: motion_blur(im, p["length"], p["theta"])
        elif self.kind == "disk":
            fn = lambda im: disk_blur(im, p["radius"])
        elif self.kind == "wiener":
            fn = lambda im: adaptive_wiener(im, p["window"], p["noise"])
        elif self.kind == "guided_self":
            fn = lambda im: guided_filter_self(im, p["window"], p["eps"])
        elif self.kind == "bilateral":
            fn = lambda im: bilateral_filter(im, p["sigma_s"], p["sigma_r"])
        else:  # extern
            return ExternalFilter(p["cmd"], timeout=p["timeout"], label=self.label)
        return BlackBoxFilter(fn, self.label)


def parse_filter_spec(text: str) -> FilterSpec:
    """Parse ``kind:key=val,key=val`` with optional quoting of values.

    Quotes let values contain commas or spaces, as in
    ``extern:cmd="mytool --sigma 2"``.
    """
    kind, sep, rest = text.partition(":")
    kind = kind.strip()
    params = {}
    if sep and rest.strip():
        for pair in _split_outside_quotes(rest, ","):
            key, eq, val = pair.partition("=")
            if not eq:
                raise ValueError(f"bad filter parameter '{pair}' (expected key=value)")
            val = val.strip()
            if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
                val = val[1:-1]
            params[key.strip()] = val
    return FilterSpec(kind, params)


def _split_outside_quotes(text, sep):
    parts, buf, quote = [], [], None
    for ch in text:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
            buf.append(ch)
        elif ch == sep:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    if buf:
        parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]
