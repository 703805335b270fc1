"""Binarizers and their backward surrogates.

Three weight-binarization methods:

* ``sign_ste``          sign forward, identity backward
* ``sign_clipped_ste``  sign forward, backward gated to |w| <= 1
* ``square_wave``       sign(sin(omega0 * w)) forward, omega0*cos(omega0*w)
                        backward (the sine is the first harmonic of the
                        square wave, so the surrogate is exact for it)

Activations always binarize through sign with a piecewise-polynomial
surrogate. Scale factors are mean absolute values of the pre-binarization
tensor, per layer or per output channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Tensor

METHOD_SIGN_STE = "sign_ste"
METHOD_SIGN_CLIP = "sign_clipped_ste"
METHOD_SQUARE_WAVE = "square_wave"
METHODS = (METHOD_SIGN_STE, METHOD_SIGN_CLIP, METHOD_SQUARE_WAVE)

SCALING_NONE = "none"
SCALING_PER_LAYER = "per_layer"
SCALING_PER_CHANNEL = "per_channel"
SCALING_ANALYTIC = "analytic_laplace"
SCALINGS = (SCALING_NONE, SCALING_PER_LAYER, SCALING_PER_CHANNEL, SCALING_ANALYTIC)


@dataclass
class QuantSpec:
    """Binarization configuration for a layer or a whole model."""

    method: str = METHOD_SQUARE_WAVE
    omega0: float = 20.0
    scaling: str = SCALING_PER_CHANNEL

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown binarization method {self.method!r}; choose from {METHODS}")
        if self.scaling not in SCALINGS:
            raise ValueError(f"unknown scaling mode {self.scaling!r}; choose from {SCALINGS}")
        self.omega0 = float(self.omega0)
        if self.method == METHOD_SQUARE_WAVE and not self.omega0 > 0:
            raise ValueError(f"square-wave binarization needs omega0 > 0, got {self.omega0}")


@dataclass
class BinarizedTensor:
    """A {-1,+1} tensor plus its positive scale factors."""

    values: np.ndarray
    scale: np.ndarray = field(default_factory=lambda: np.asarray(1.0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if not np.all(np.abs(self.values) == 1.0):
            raise ValueError("BinarizedTensor values must all be exactly -1 or +1")
        if not np.all(self.scale > 0):
            raise ValueError("BinarizedTensor scale entries must be positive")


def _sign_pm1(x: np.ndarray) -> np.ndarray:
    # zero (and -0.0) maps to +1
    return np.where(x >= 0, 1.0, -1.0)


def sign_binarize(w) -> BinarizedTensor:
    """Binarize by sign: +1 where w >= 0, else -1."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("sign_binarize got non-finite input")
    return BinarizedTensor(_sign_pm1(w))


def square_wave_binarize(w, omega0: float) -> BinarizedTensor:
    """Binarize by the square wave sign(sin(omega0 * w)).

    Unlike plain sign, the output alternates with period 2*pi/omega0, so
    both output signs occur on both sides of zero. Exact sine zeros map
    to +1, matching the sign convention.
    """
    if not omega0 > 0:
        raise ValueError(f"square_wave_binarize needs omega0 > 0, got {omega0}")
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("square_wave_binarize got non-finite input")
    return BinarizedTensor(_sign_pm1(np.sin(omega0 * w)))


def sine_surrogate_grad(w, omega0: float) -> np.ndarray:
    """Backward surrogate for the square wave: omega0 * cos(omega0 * w).

    This is the true derivative of sin(omega0 * w), the first harmonic;
    its magnitude is bounded by omega0.
    """
    if not omega0 > 0:
        raise ValueError(f"sine_surrogate_grad needs omega0 > 0, got {omega0}")
    w = np.asarray(w, dtype=np.float64)
    return omega0 * np.cos(omega0 * w)


def clipped_ste_grad(w) -> np.ndarray:
    """Clipped straight-through backward: 1 where |w| <= 1, else 0."""
    w = np.asarray(w, dtype=np.float64)
    return (np.abs(w) <= 1.0).astype(np.float64)


def activation_surrogate_grad(a) -> np.ndarray:
    """Piecewise-polynomial backward for the activation sign.

    2 + 2a on [-1, 0), 2 - 2a on [0, 1), 0 elsewhere.
    """
    a = np.asarray(a, dtype=np.float64)
    lo = (a >= -1.0) & (a < 0.0)
    hi = (a >= 0.0) & (a < 1.0)
    return np.where(lo, 2.0 + 2.0 * a, np.where(hi, 2.0 - 2.0 * a, 0.0))


def empirical_scale(pre_bin, mode: str, channel_axis: int = 0) -> np.ndarray:
    """Mean-absolute-value scale factors of the pre-binarization tensor.

    ``pre_bin`` is the value the binarizer sees: sin(omega0*w) for the
    square wave, w itself for plain sign. Per-layer mode returns a scalar
    array; per-channel reduces over every axis except ``channel_axis``.
    """
    pre_bin = np.asarray(pre_bin, dtype=np.float64)
    if pre_bin.size == 0:
        raise ValueError("empirical_scale got an empty tensor")
    if mode == SCALING_PER_LAYER:
        return np.asarray(np.mean(np.abs(pre_bin)))
    if mode == SCALING_PER_CHANNEL:
        axes = tuple(ax for ax in range(pre_bin.ndim) if ax != channel_axis % pre_bin.ndim)
        return np.mean(np.abs(pre_bin), axis=axes)
    raise ValueError(f"empirical_scale supports {SCALING_PER_LAYER!r} and "
                     f"{SCALING_PER_CHANNEL!r}, got {mode!r}")


# ---------------------------------------------------------------------------
# tape nodes: the surrogate rules as first-class autodiff citizens
# ---------------------------------------------------------------------------

_OP_SIGN_STE = autodiff.register_custom_grad(
    _sign_pm1, lambda w: np.ones_like(w), name="sign_ste")
_OP_SIGN_CLIP = autodiff.register_custom_grad(
    _sign_pm1, clipped_ste_grad, name="sign_clipped_ste")
_OP_ACT_SIGN = autodiff.register_custom_grad(
    _sign_pm1, activation_surrogate_grad, name="sign_poly_activation")

_square_wave_ops: dict[float, str] = {}


def square_wave_op(omega0: float) -> str:
    """Custom-grad op id for sign(sin(omega0*w)) with the sine surrogate."""
    if not omega0 > 0:
        raise ValueError(f"square_wave_op needs omega0 > 0, got {omega0}")
    omega0 = float(omega0)
    if omega0 not in _square_wave_ops:
        _square_wave_ops[omega0] = autodiff.register_custom_grad(
            lambda w, o=omega0: _sign_pm1(np.sin(o * w)),
            lambda w, o=omega0: o * np.cos(o * w),
            name=f"square_wave_w{omega0:g}",
        )
    return _square_wave_ops[omega0]


def binarize_weights_node(w: Tensor, spec: QuantSpec, grad_tap=None) -> Tensor:
    """Tape node turning latent weights into {-1,+1} with the method's surrogate."""
    if spec.method == METHOD_SQUARE_WAVE:
        return autodiff.apply_custom(square_wave_op(spec.omega0), w, grad_tap=grad_tap)
    if spec.method == METHOD_SIGN_CLIP:
        return autodiff.apply_custom(_OP_SIGN_CLIP, w, grad_tap=grad_tap)
    return autodiff.apply_custom(_OP_SIGN_STE, w, grad_tap=grad_tap)


def binarize_activations_node(a: Tensor) -> Tensor:
    """Tape node binarizing activations by sign with the polynomial surrogate."""
    return autodiff.apply_custom(_OP_ACT_SIGN, a)
