"""Quantizer families: affine uniform, log2, and log-sqrt2.

The log-sqrt2 dequantizer is written in its base-changed form
``s_adj * 2**floor(-code/2)`` where ``s_adj`` folds a sqrt(2) factor in for
odd codes. That form needs only a parity bit and a power-of-two multiply, so
it runs on the same integer shift path as plain log2 dequantization; the
``*_dequantize_shift`` variants simulate that path with exact fixed-point
integers and must match the float path bit for bit.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .tensors import as_int_tensor, as_tensor

SQRT2 = float(np.sqrt(2.0))


class Scheme(str, enum.Enum):
    UNIFORM = "uniform"
    LOG2 = "log2"
    LOG_SQRT2 = "log_sqrt2"


class Granularity(str, enum.Enum):
    PER_LAYER = "per_layer"
    PER_CHANNEL = "per_channel"


def _qmax(bits):
    return (1 << bits) - 1


@dataclass(frozen=True, eq=False)
class QuantParams:
    """Frozen parameters of one quantizer site.

    scale is a 1-element vector for per-layer sites and one entry per channel
    for per-channel sites. zero_point is present only for the uniform scheme
    and lies in [0, 2**bits - 1]. Log schemes are per-layer here: their sites
    (post-Softmax tensors) are quantized with a single scale.
    """

    scheme: Scheme
    bits: int
    scale: np.ndarray
    zero_point: np.ndarray | None = None
    granularity: Granularity = Granularity.PER_LAYER
    channel_axis: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        if not 2 <= int(self.bits) <= 8:
            raise ValueError(f"bit width {self.bits} outside [2, 8]")
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if scale.ndim != 1 or scale.size == 0:
            raise ValueError("scale must be a nonempty vector")
        if not np.all(scale > 0) or not np.all(np.isfinite(scale)):
            raise ValueError("scales must be positive and finite")
        object.__setattr__(self, "scale", scale)
        if self.scheme is Scheme.UNIFORM:
            if self.zero_point is None:
                raise ValueError("uniform scheme requires zero points")
            zp = np.atleast_1d(np.asarray(self.zero_point))
            if zp.dtype.kind not in "iu":
                raise ValueError("zero points must be integers")
            zp = zp.astype(np.int64)
            if zp.shape != scale.shape:
                raise ValueError("zero_point length must match scale length")
            if np.any(zp < 0) or np.any(zp > _qmax(self.bits)):
                raise ValueError(f"zero points outside [0, {_qmax(self.bits)}]")
            object.__setattr__(self, "zero_point", zp)
        else:
            if self.zero_point is not None:
                raise ValueError("log schemes carry no zero point")
            if scale.size != 1:
                raise ValueError("log schemes are per-layer: scale must have one entry")
        if self.granularity is Granularity.PER_CHANNEL:
            if self.channel_axis is None:
                raise ValueError("per-channel params need a channel_axis")
        elif scale.size != 1:
            raise ValueError("per-layer params must have a single scale entry")

    @property
    def qmax(self):
        return _qmax(self.bits)

    def to_json(self):
        return {
            "scheme": self.scheme.value,
            "bits": int(self.bits),
            "scale": [float(v) for v in self.scale],
            "zero_point": None if self.zero_point is None else [int(v) for v in self.zero_point],
            "granularity": self.granularity.value,
            "channel_axis": None if self.channel_axis is None else int(self.channel_axis),
        }

    @classmethod
    def from_json(cls, d):
        zp = d.get("zero_point")
        return cls(
            scheme=Scheme(d["scheme"]),
            bits=int(d["bits"]),
            scale=np.asarray(d["scale"], dtype=np.float64),
            zero_point=None if zp is None else np.asarray(zp, dtype=np.int64),
            granularity=Granularity(d.get("granularity", "per_layer")),
            channel_axis=d.get("channel_axis"),
        )


def _param_view(vec, x, qp):
    # reshape a per-channel parameter vector so it broadcasts along channel_axis
    if qp.granularity is Granularity.PER_LAYER:
        return vec[0]
    axis = qp.channel_axis % x.ndim
    if x.shape[axis] != vec.size:
        raise ValueError(
            f"axis {axis} has {x.shape[axis]} channels but params carry {vec.size}"
        )
    shape = [1] * x.ndim
    shape[axis] = vec.size
    return vec.reshape(shape)


def _check_codes(codes, bits):
    codes = as_int_tensor(codes)
    if np.any(codes < 0) or np.any(codes > _qmax(bits)):
        raise ValueError(f"codes outside [0, {_qmax(bits)}]")
    return codes


def uniform_quantize(x, qp):
    """Map values onto the affine integer grid: clip(round(x/s) + z, 0, 2**b - 1).

    Rounding is round-half-to-even. Returns int32 codes of x's shape.
    """
    if qp.scheme is not Scheme.UNIFORM:
        raise ValueError(f"uniform quantizer got {qp.scheme.value} params")
    x = as_tensor(x)
    s = _param_view(qp.scale, x, qp)
    z = _param_view(qp.zero_point, x, qp)
    codes = np.clip(np.rint(x / s) + z, 0.0, float(qp.qmax))
    return codes.astype(np.int32)


def uniform_dequantize(codes, qp):
    """Reconstruct s * (code - z) for codes produced by `uniform_quantize`."""
    if qp.scheme is not Scheme.UNIFORM:
        raise ValueError(f"uniform dequantizer got {qp.scheme.value} params")
    codes = _check_codes(codes, qp.bits)
    s = _param_view(qp.scale, codes, qp)
    z = _param_view(qp.zero_point, codes, qp)
    return s * (codes.astype(np.float64) - z)


def _log_ratio(x, s, bits, label):
    if not (np.isscalar(s) or np.asarray(s).size == 1):
        raise ValueError(f"{label} takes a single scale")
    s = float(np.asarray(s).reshape(()))
    if not (s > 0 and np.isfinite(s)):
        raise ValueError(f"{label} scale must be positive and finite")
    if not 2 <= int(bits) <= 8:
        raise ValueError(f"bit width {bits} outside [2, 8]")
    x = as_tensor(x)
    if np.any(x < 0):
        raise ValueError(f"{label} requires nonnegative inputs")
    return x, s


def log2_quantize(x, s, bits):
    """Power-of-two codes: clip(round(-log2(x/s)), 0, 2**bits - 1).

    Zeros land on the deepest level (maximum code); negatives are rejected.
    """
    x, s = _log_ratio(x, s, bits, "log2_quantize")
    with np.errstate(divide="ignore"):
        raw = -np.log2(x / s)
    return np.clip(np.rint(raw), 0.0, float(_qmax(bits))).astype(np.int32)


def log2_dequantize(codes, s, bits=None):
    """Reconstruct s * 2**(-code). Power-of-two scaling is exact in float64."""
    codes = as_int_tensor(codes)
    if np.any(codes < 0):
        raise ValueError("codes must be nonnegative")
    if bits is not None:
        codes = _check_codes(codes, bits)
    return np.ldexp(np.float64(s), -codes)


def logsqrt2_quantize(x, s, bits):
    """Half-power codes: clip(round(-2 * log2(x/s)), 0, 2**bits - 1).

    -2 * log2(x/s) is exactly -log(x/s) in base sqrt(2) (the base-change
    constant log2(sqrt(2)) = 1/2 is a power of two, so the rescaling is
    lossless). Zero maps to the maximum code, negatives are rejected.
    """
    x, s = _log_ratio(x, s, bits, "logsqrt2_quantize")
    with np.errstate(divide="ignore"):
        raw = -2.0 * np.log2(x / s)
    return np.clip(np.rint(raw), 0.0, float(_qmax(bits))).astype(np.int32)


def parity_indicator(codes):
    """Least-significant bit of each code: 1 for odd codes, else 0."""
    return as_int_tensor(codes) & np.int32(1)


def logsqrt2_dequantize(codes, s, bits=None):
    """Reconstruct s * sqrt(2)**(-code) via the shift-friendly split.

    Odd codes fold one sqrt(2) into the scale, even codes leave it alone;
    what remains is a plain power-of-two factor:

        s_adj = s * (parity * (sqrt(2) - 1) + 1)
        x_hat = s_adj * 2**floor(-code / 2)

    The result equals s * sqrt(2)**(-code) to within one ulp.
    """
    codes = as_int_tensor(codes)
    if np.any(codes < 0):
        raise ValueError("codes must be nonnegative")
    if bits is not None:
        codes = _check_codes(codes, bits)
    s = float(np.asarray(s).reshape(()))
    s_adj = s * (parity_indicator(codes) * (SQRT2 - 1.0) + 1.0)
    return np.ldexp(s_adj, np.floor_divide(-codes, 2))


def _shift_pow2(exponents, frac):
    # 2**(-k) as an exact fixed-point integer: (1 << frac) >> k, then an
    # exact rescale by 2**-frac. Python ints keep the shift exact for any
    # frac; the mantissas are powers of two, so float conversion is exact.
    one = 1 << frac
    flat = [float(one >> int(k)) for k in np.ravel(exponents)]
    mant = np.array(flat, dtype=np.float64).reshape(np.shape(exponents))
    return mant


def log2_dequantize_shift(codes, s, bits):
    """Integer shift path for log2 dequantization.

    Codes index a fixed-point grid with 2**bits - 1 fraction bits; the level
    is produced by an arithmetic right shift of the fixed-point one. When s
    is itself a power of two the whole value stays on the integer grid. The
    result equals `log2_dequantize` exactly for every code.
    """
    codes = _check_codes(codes, bits)
    frac = _qmax(bits)
    mant = _shift_pow2(codes, frac)
    return np.ldexp(np.float64(s) * mant, -frac)


def logsqrt2_dequantize_shift(codes, s, bits):
    """Integer shift path for log-sqrt2 dequantization.

    The 2**floor(-code/2) factor comes from an arithmetic right shift by
    ceil(code/2); the parity-adjusted scale multiplies the shifted grid
    value. Equals `logsqrt2_dequantize` exactly for every code.
    """
    codes = _check_codes(codes, bits)
    frac = _qmax(bits)
    s = float(np.asarray(s).reshape(()))
    s_adj = s * (parity_indicator(codes) * (SQRT2 - 1.0) + 1.0)
    mant = _shift_pow2((codes + 1) >> 1, frac)
    return np.ldexp(s_adj * mant, -frac)


def fake_quantize(x, qp):
    """Quantize then dequantize, the simulated-quantization round trip."""
    if qp.scheme is Scheme.UNIFORM:
        return uniform_dequantize(uniform_quantize(x, qp), qp)
    s = qp.scale[0]
    if qp.scheme is Scheme.LOG2:
        return log2_dequantize(log2_quantize(x, s, qp.bits), s, qp.bits)
    return logsqrt2_dequantize(logsqrt2_quantize(x, s, qp.bits), s, qp.bits)
