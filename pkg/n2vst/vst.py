"""
n2vst.vst — Learnable monotone piecewise-linear variance-stabilizing transform.

The forward map f interpolates knots (x_i, y_i): x is a uniform grid over
[z_min, z_max] and y_1 = theta_1, y_i = theta_1 + sum_{j=2..i} exp(theta_j),
which makes y strictly increasing for any theta. The corrected inverse is
f_inv(w) = f^{-1}(w) + alpha * w + beta.

Segments are left-closed and clamped to the first/last segment, so both f and
f^{-1} extrapolate linearly with the boundary slopes and stay bijective on R.
Segment indices are 0-based: segment k spans [breaks[k], breaks[k + 1]).
"""

import csv
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from n2vst.errors import CheckpointError, ImageWriteError, ParameterError, ShapeError

FORMAT_TAG = "n2vst/1"
DEFAULT_KNOTS = 128
THETA_LIMIT = 20.0
EXPORT_POINTS = 256


@dataclass(frozen=True, eq=False)
class Vst:
    z_min: float
    z_max: float
    theta: NDArray[np.float64]
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=np.float64)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        for name in ("z_min", "z_max", "alpha", "beta"):
            object.__setattr__(self, name, float(getattr(self, name)))

        if theta.ndim != 1 or theta.size < 2:
            raise ParameterError(
                stage="vst",
                message="theta must hold at least 2 parameters",
                payload={"shape": list(theta.shape)},
            )
        if not (math.isfinite(self.z_min) and math.isfinite(self.z_max)):
            raise ParameterError(stage="vst", message="grid bounds must be finite")
        if self.z_min >= self.z_max:
            raise ParameterError(
                stage="vst",
                message=f"z_min ({self.z_min}) must be < z_max ({self.z_max})",
                payload={"z_min": self.z_min, "z_max": self.z_max},
            )
        if not np.all(np.isfinite(theta)) or not (
            math.isfinite(self.alpha) and math.isfinite(self.beta)
        ):
            raise ParameterError(stage="vst", message="parameters must be finite")

    @property
    def n(self) -> int:
        return int(self.theta.size)

    @property
    def parameter_count(self) -> int:
        """Learnable scalars: n thetas plus alpha and beta."""
        return self.n + 2

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vst):
            return NotImplemented
        return (
            self.z_min == other.z_min
            and self.z_max == other.z_max
            and self.alpha == other.alpha
            and self.beta == other.beta
            and np.array_equal(self.theta, other.theta)
        )

    __hash__ = None  # type: ignore[assignment]

    def with_params(self, theta: NDArray[np.float64], alpha: float, beta: float) -> "Vst":
        return replace(self, theta=theta, alpha=float(alpha), beta=float(beta))


@dataclass(frozen=True)
class VstGradient:
    d_theta: NDArray[np.float64]
    d_alpha: float = 0.0
    d_beta: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "VstGradient":
        return cls(d_theta=np.zeros(n), d_alpha=0.0, d_beta=0.0)

    def __add__(self, other: "VstGradient") -> "VstGradient":
        return VstGradient(
            d_theta=self.d_theta + other.d_theta,
            d_alpha=self.d_alpha + other.d_alpha,
            d_beta=self.d_beta + other.d_beta,
        )

    def as_vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.d_theta, [self.d_alpha, self.d_beta]])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector())))


@dataclass(frozen=True)
class PointGradient:
    """All partial derivatives of f and f_inv at a single (z, w) pair."""
    df_dz: float
    df_dtheta: NDArray[np.float64] = field(repr=False)
    dinv_dw: float
    dinv_dtheta: NDArray[np.float64] = field(repr=False)
    dinv_dalpha: float
    dinv_dbeta: float


def new_identity(z_min: float, z_max: float, n: int = DEFAULT_KNOTS) -> Vst:
    """Vst whose forward map is the identity on all of R."""
    if n < 2:
        raise ParameterError(stage="new_identity", message=f"n must be >= 2, got {n}")
    if not z_min < z_max:
        raise ParameterError(
            stage="new_identity",
            message=f"z_min ({z_min}) must be < z_max ({z_max})",
            payload={"z_min": z_min, "z_max": z_max},
        )
    theta = np.full(n, math.log((z_max - z_min) / (n - 1)))
    theta[0] = z_min
    return Vst(z_min=float(z_min), z_max=float(z_max), theta=theta)


def knot_positions(vst: Vst) -> NDArray[np.float64]:
    n = vst.n
    return (vst.z_max - vst.z_min) * (np.arange(n, dtype=np.float64) / (n - 1)) + vst.z_min


def knot_values(vst: Vst) -> NDArray[np.float64]:
    increments = np.exp(vst.theta[1:])
    return vst.theta[0] + np.concatenate([[0.0], np.cumsum(increments)])


def segment_indices(values: ArrayLike, breaks: NDArray[np.float64]) -> NDArray[np.intp]:
    """Left-closed segment of each value, clamped to [0, len(breaks) - 2]."""
    idx = np.searchsorted(breaks, values, side="right") - 1
    return np.clip(idx, 0, breaks.size - 2)


def segment_index(z: float, breaks: Sequence[float] | NDArray[np.float64]) -> int:
    """Largest k <= len-2 with breaks[k] <= z; 0 below the grid."""
    arr = np.asarray(breaks, dtype=np.float64)
    if arr.size < 2:
        raise ShapeError(stage="segment_index", message="need at least two breaks")
    return int(segment_indices(z, arr))


def _interpolate(
    values: NDArray[np.float64],
    src: NDArray[np.float64],
    dst: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.intp], NDArray[np.float64]]:
    """Piecewise-linear map src -> dst; also returns segment index and local coordinate."""
    k = segment_indices(values, src)
    t = (values - src[k]) / (src[k + 1] - src[k])
    return dst[k] + t * (dst[k + 1] - dst[k]), k, t


def forward_array(vst: Vst, z: ArrayLike) -> NDArray[np.float64]:
    z = np.asarray(z, dtype=np.float64)
    x, y = knot_positions(vst), knot_values(vst)
    k = segment_indices(z, x)
    slope = (y[k + 1] - y[k]) / (x[k + 1] - x[k])
    return slope * (z - x[k]) + y[k]


def algebraic_inverse_array(vst: Vst, w: ArrayLike) -> NDArray[np.float64]:
    w = np.asarray(w, dtype=np.float64)
    x, y = knot_positions(vst), knot_values(vst)
    k = segment_indices(w, y)
    slope = (x[k + 1] - x[k]) / (y[k + 1] - y[k])
    return slope * (w - y[k]) + x[k]


def inverse_array(vst: Vst, w: ArrayLike) -> NDArray[np.float64]:
    w = np.asarray(w, dtype=np.float64)
    return algebraic_inverse_array(vst, w) + vst.alpha * w + vst.beta


def forward(vst: Vst, z: float) -> float:
    return float(forward_array(vst, z))


def algebraic_inverse(vst: Vst, w: float) -> float:
    return float(algebraic_inverse_array(vst, w))


def inverse(vst: Vst, w: float) -> float:
    return float(inverse_array(vst, w))


def _theta_vjp(vst: Vst, d_y: NDArray[np.float64]) -> NDArray[np.float64]:
    """Pull a cotangent on the knot values y back to theta."""
    d_theta = np.empty(vst.n)
    d_theta[0] = d_y.sum()
    # dy_i/dtheta_j = exp(theta_j) for j <= i: suffix sums of d_y.
    suffix = np.cumsum(d_y[::-1])[::-1]
    d_theta[1:] = np.exp(vst.theta[1:]) * suffix[1:]
    return d_theta


def forward_vjp(
    vst: Vst,
    z: ArrayLike,
    cotangent: ArrayLike,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Vector-Jacobian product of f at z.

    Returns (cotangent * df/dz elementwise, sum of cotangent * df/dtheta).
    """
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(cotangent, dtype=np.float64)
    x, y = knot_positions(vst), knot_values(vst)
    k = segment_indices(z, x)
    width = x[k + 1] - x[k]
    t = (z - x[k]) / width
    d_z = g * (y[k + 1] - y[k]) / width

    n = vst.n
    flat_k, flat_t, flat_g = k.ravel(), t.ravel(), g.ravel()
    d_y = np.bincount(flat_k, weights=flat_g * (1.0 - flat_t), minlength=n)
    d_y += np.bincount(flat_k + 1, weights=flat_g * flat_t, minlength=n)
    return d_z, _theta_vjp(vst, d_y)


def inverse_vjp(
    vst: Vst,
    w: ArrayLike,
    cotangent: ArrayLike,
) -> tuple[NDArray[np.float64], VstGradient]:
    """
    Vector-Jacobian product of f_inv at w.

    Returns (cotangent * df_inv/dw elementwise, accumulated parameter gradient).
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(cotangent, dtype=np.float64)
    x, y = knot_positions(vst), knot_values(vst)
    k = segment_indices(w, y)
    rise = y[k + 1] - y[k]
    run = x[k + 1] - x[k]
    u = (w - y[k]) / rise
    d_w = g * (run / rise + vst.alpha)

    # f^{-1} = x_k + run * (w - y_k) / rise
    n = vst.n
    flat_k = k.ravel()
    scale = (g * run / rise).ravel()
    flat_u = u.ravel()
    d_y = np.bincount(flat_k, weights=scale * (flat_u - 1.0), minlength=n)
    d_y -= np.bincount(flat_k + 1, weights=scale * flat_u, minlength=n)

    grad = VstGradient(
        d_theta=_theta_vjp(vst, d_y),
        d_alpha=float(np.sum(g * w)),
        d_beta=float(np.sum(g)),
    )
    return d_w, grad


def grad(vst: Vst, z: float, w: float) -> PointGradient:
    """Analytic derivatives of f at z and of f_inv at w."""
    df_dz, df_dtheta = forward_vjp(vst, np.array([z]), np.array([1.0]))
    dinv_dw, inv_grad = inverse_vjp(vst, np.array([w]), np.array([1.0]))
    return PointGradient(
        df_dz=float(df_dz[0]),
        df_dtheta=df_dtheta,
        dinv_dw=float(dinv_dw[0]),
        dinv_dtheta=inv_grad.d_theta,
        dinv_dalpha=inv_grad.d_alpha,
        dinv_dbeta=inv_grad.d_beta,
    )


def clamp_theta(theta: NDArray[np.float64]) -> NDArray[np.float64]:
    """Bound the log-slopes theta[1:]; theta[0] is the anchor f(z_min) and stays free."""
    clamped = np.array(theta, dtype=np.float64)
    clamped[1:] = np.clip(clamped[1:], -THETA_LIMIT, THETA_LIMIT)
    return clamped


def segment_slopes(vst: Vst) -> NDArray[np.float64]:
    return np.diff(knot_values(vst)) / np.diff(knot_positions(vst))


# Multi-channel application: one shared Vst, or one Vst per channel.

def _channel_vsts(vsts: Sequence[Vst], channels: int) -> Sequence[Vst]:
    if len(vsts) == 1:
        return vsts
    if len(vsts) != channels:
        raise ShapeError(
            stage="vst",
            message=f"{len(vsts)} per-channel transforms for a {channels}-channel image",
        )
    return vsts


def forward_image(vsts: Sequence[Vst], img: NDArray[np.float64]) -> NDArray[np.float64]:
    vsts = _channel_vsts(vsts, img.shape[-1])
    if len(vsts) == 1:
        return forward_array(vsts[0], img)
    return np.stack([forward_array(v, img[..., c]) for c, v in enumerate(vsts)], axis=-1)


def inverse_image(vsts: Sequence[Vst], img: NDArray[np.float64]) -> NDArray[np.float64]:
    vsts = _channel_vsts(vsts, img.shape[-1])
    if len(vsts) == 1:
        return inverse_array(vsts[0], img)
    return np.stack([inverse_array(v, img[..., c]) for c, v in enumerate(vsts)], axis=-1)


# Checkpoints

def to_document(vst: Vst) -> dict[str, Any]:
    return {
        "format": FORMAT_TAG,
        "n": vst.n,
        "z_min": vst.z_min,
        "z_max": vst.z_max,
        "theta": [float(t) for t in vst.theta],
        "alpha": vst.alpha,
        "beta": vst.beta,
    }


def from_document(doc: Any) -> Vst:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise CheckpointError(
            stage="deserialize",
            message=f"not an {FORMAT_TAG} document",
        )
    try:
        theta = np.asarray(doc["theta"], dtype=np.float64)
        n = int(doc["n"])
        z_min, z_max = float(doc["z_min"]), float(doc["z_max"])
        alpha, beta = float(doc["alpha"]), float(doc["beta"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(stage="deserialize", message=f"malformed document: {e}") from e
    if theta.ndim != 1 or theta.size != n:
        raise CheckpointError(
            stage="deserialize",
            message=f"theta holds {theta.size} values, document declares n={n}",
        )
    try:
        return Vst(z_min=z_min, z_max=z_max, theta=theta, alpha=alpha, beta=beta)
    except ParameterError as e:
        raise CheckpointError(stage="deserialize", message=e.message, payload=e.payload) from e


def serialize(vst: Vst) -> str:
    return json.dumps(to_document(vst), indent=2)


def deserialize(text: str) -> Vst:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(stage="deserialize", message=f"invalid JSON: {e}") from e
    return from_document(doc)


def save_checkpoint(path: Path | str, vsts: Sequence[Vst]) -> None:
    """One Vst is stored as a bare document; several under a `channels` list."""
    if len(vsts) == 1:
        text = serialize(vsts[0])
    else:
        text = json.dumps(
            {"format": FORMAT_TAG, "channels": [to_document(v) for v in vsts]},
            indent=2,
        )
    _write_text(Path(path), text)


def load_checkpoint(path: Path | str) -> tuple[Vst, ...]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CheckpointError(
            stage="load_checkpoint",
            message=f"cannot read {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(stage="load_checkpoint", message=f"invalid JSON: {e}") from e
    if isinstance(doc, dict) and "channels" in doc:
        if doc.get("format") != FORMAT_TAG or not doc["channels"]:
            raise CheckpointError(stage="load_checkpoint", message="malformed channel list")
        return tuple(from_document(d) for d in doc["channels"])
    return (from_document(doc),)


# Curve export

def export_curve(
    vst: Vst,
    points: int = EXPORT_POINTS,
    gat_params: tuple[float, float] | None = None,
) -> list[dict[str, float]]:
    """
    Sample (z, f(z), f_inv(z)) on a uniform grid over [z_min, z_max].

    With gat_params=(a, b), GAT forward and unbiased-inverse columns are added
    for comparison with the learned curves.
    """
    z = np.linspace(vst.z_min, vst.z_max, points)
    z[0], z[-1] = vst.z_min, vst.z_max
    f = forward_array(vst, z)
    f_inv = inverse_array(vst, z)
    rows = [{"z": float(a), "f": float(b), "f_inv": float(c)} for a, b, c in zip(z, f, f_inv)]

    if gat_params is not None:
        from n2vst.noise import UNBIASED_FLOOR, InverseMode, gat_forward, gat_inverse

        a, b = gat_params
        g = gat_forward(z, a, b)
        g_inv = gat_inverse(np.maximum(g, UNBIASED_FLOOR), a, b, InverseMode.UNBIASED)
        for row, gv, gi in zip(rows, g, g_inv):
            row["gat"] = float(gv)
            row["gat_inverse"] = float(gi)
    return rows


def export_curve_csv(
    path: Path | str,
    vsts: Sequence[Vst],
    points: int = EXPORT_POINTS,
    gat_params: tuple[float, float] | None = None,
) -> None:
    """Write curves as CSV; per-channel checkpoints get a `channel` column."""
    path = Path(path)
    rows: list[dict[str, Any]] = []
    for c, vst in enumerate(vsts):
        for row in export_curve(vst, points, gat_params):
            rows.append({"channel": c, **row} if len(vsts) > 1 else row)

    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: format_number(v) for k, v in row.items()})
    except OSError as e:
        raise ImageWriteError(
            stage="export_vst",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e


def format_number(value: Any) -> str:
    """Locale-independent fixed-precision rendering used by every CSV writer."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".10g")


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(
            stage="save_checkpoint",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e
