"""RBF-kernel support vector machine with a from-scratch SMO trainer.

Training maximizes the soft-margin dual

    W(a) = sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t.  0 <= a_i <= C,  sum_i a_i y_i = 0

by sequential minimal optimization: repeatedly pick a pair of coefficients
violating the KKT conditions and solve the two-variable subproblem
analytically. Features are always standardized per dimension before the
kernel sees them; the statistics travel inside the model.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .dataset import Label
from .errors import DegenerateLabels, ModelMismatch, NumericsError, ShapeError

FULL_KERNEL_MAX_ROWS = 8192
KERNEL_ROW_LRU = 1024


@dataclass(frozen=True)
class KernelParams:
    """RBF kernel K(x, z) = exp(-gamma * ||x - z||^2)."""

    gamma: float

    def __post_init__(self) -> None:
        if not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass(frozen=True)
class SmoConfig:
    C: float = 1.0
    kkt_tol: float = 1e-3
    max_passes: int = 1000
    value_eps: float = 1e-12
    seed: int = 0

    def __post_init__(self) -> None:
        if self.C <= 0 or self.kkt_tol <= 0 or self.max_passes < 1:
            raise ValueError("C and kkt_tol must be positive, max_passes >= 1")


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray


def rbf(x, z, k: KernelParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ShapeError(f"kernel arguments differ in shape: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-k.gamma * np.dot(d, d)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, k: KernelParams) -> np.ndarray:
    """Kernel matrix between row sets. When ``a is b`` the result is made
    exactly symmetric with unit diagonal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = sq_a if b is a else np.einsum("ij,ij->i", b, b)
    d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    km = np.exp(-k.gamma * d2)
    if b is a:
        km = 0.5 * (km + km.T)
        np.fill_diagonal(km, 1.0)
    return km


def default_gamma(x: np.ndarray) -> KernelParams:
    """Scale heuristic: gamma = 1 / (d * pooled variance), with a 1/d
    fallback for constant inputs. Variances are biased (population)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    pooled = float(np.mean(np.var(x, axis=0)))
    if pooled <= 0.0:
        return KernelParams(gamma=1.0 / d)
    return KernelParams(gamma=1.0 / (d * pooled))


def fit_standardizer(x: np.ndarray) -> Standardizer:
    """Per-dimension mean/std from training data; zero-variance dimensions
    get std 1 so they pass through centered."""
    x = np.asarray(x, dtype=np.float64)
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds > 0.0, stds, 1.0)
    return Standardizer(means=means, stds=stds)


def apply_standardizer(s: Standardizer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.means.shape[0]:
        raise ShapeError(f"feature dim {x.shape[-1]} != standardizer dim {s.means.shape[0]}")
    return (x - s.means) / s.stds


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized rows
    dual_coeffs: np.ndarray  # alpha_i * y_i per support vector
    bias: float
    kernel: KernelParams
    standardizer: Standardizer
    C: float
    converged: bool
    expected_provenance: tuple | None = None
    diagnostics: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        prov = None
        if self.expected_provenance is not None:
            prov = [
                {"backbone_id": b, "view": v.value, "dim": d}
                for b, v, d in self.expected_provenance
            ]
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "gamma": self.kernel.gamma,
            "bias": self.bias,
            "C": self.C,
            "dual_coeffs": self.dual_coeffs.tolist(),
            "support_vectors": [row.tolist() for row in self.support_vectors],
            "standardizer": {
                "means": self.standardizer.means.tolist(),
                "stds": self.standardizer.stds.tolist(),
            },
            "provenance": prov,
            "label_map": {"+1": "high", "-1": "low"},
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SvmModel":
        from .errors import FormatError
        from .imageprep import ViewKind

        try:
            version = obj["format_version"]
            if version != MODEL_FORMAT_VERSION:
                raise FormatError(f"unsupported model format_version {version}")
            prov = None
            if obj.get("provenance") is not None:
                prov = tuple(
                    (p["backbone_id"], ViewKind(p["view"]), int(p["dim"]))
                    for p in obj["provenance"]
                )
            return cls(
                support_vectors=np.asarray(obj["support_vectors"], dtype=np.float64).reshape(
                    len(obj["support_vectors"]), -1
                ),
                dual_coeffs=np.asarray(obj["dual_coeffs"], dtype=np.float64),
                bias=float(obj["bias"]),
                kernel=KernelParams(gamma=float(obj["gamma"])),
                standardizer=Standardizer(
                    means=np.asarray(obj["standardizer"]["means"], dtype=np.float64),
                    stds=np.asarray(obj["standardizer"]["stds"], dtype=np.float64),
                ),
                C=float(obj["C"]),
                converged=bool(obj["converged"]),
                expected_provenance=prov,
            )
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed model file: {e}") from e


MODEL_FORMAT_VERSION = 1


class _KernelCache:
    """Row-wise kernel access: full matrix for small n, LRU rows otherwise."""

    def __init__(self, x: np.ndarray, kernel: KernelParams):
        self._x = x
        self._kernel = kernel
        self.n = x.shape[0]
        if self.n <= FULL_KERNEL_MAX_ROWS:
            self._full = rbf_matrix(x, x, kernel)
            self._rows = None
        else:
            self._full = None
            self._rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        if self._full is not None:
            return self._full[i]
        row = self._rows.get(i)
        if row is None:
            row = rbf_matrix(self._x[i : i + 1], self._x, self._kernel)[0]
            row[i] = 1.0
            self._rows[i] = row
            if len(self._rows) > KERNEL_ROW_LRU:
                self._rows.popitem(last=False)
        else:
            self._rows.move_to_end(i)
        return row


def dual_objective(alpha: np.ndarray, y: np.ndarray, kmat: np.ndarray) -> float:
    """Soft-margin dual W(a) for a full kernel matrix."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ kmat @ ay)


def train_smo(
    x: np.ndarray,
    y: np.ndarray,
    kernel: KernelParams | None = None,
    cfg: SmoConfig = SmoConfig(),
    expected_provenance: tuple | None = None,
) -> SvmModel:
    """Fit the soft-margin SVM by SMO. Deterministic for a fixed cfg.seed.

    Labels must be +1/-1 with at least one example of each class. If kernel
    is None the scale heuristic on the standardized features is used.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"X {x.shape} and y {y.shape} do not line up")
    if not np.all(np.isfinite(x)):
        raise NumericsError("training features contain non-finite values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateLabels("training data contains a single class")

    standardizer = fit_standardizer(x)
    xs = apply_standardizer(standardizer, x)
    if kernel is None:
        kernel = default_gamma(xs)

    n = x.shape[0]
    C = cfg.C
    tol = cfg.kkt_tol
    eps = cfg.value_eps
    cache = _KernelCache(xs, kernel)
    rng = np.random.default_rng(cfg.seed)

    alpha = np.zeros(n)
    b = 0.0
    errors = -y.copy()  # E_i = f(x_i) - y_i; with alpha = 0, f = 0

    def take_step(i1: int, i2: int) -> bool:
        nonlocal b, errors
        if i1 == i2:
            return False
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1, e2 = errors[i1], errors[i2]
        s = y1 * y2
        if s > 0:
            lo, hi = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        else:
            lo, hi = max(0.0, a2 - a1), min(C, C + a2 - a1)
        if hi - lo <= eps:
            return False
        row1, row2 = cache.row(i1), cache.row(i2)
        k11, k12, k22 = row1[i1], row1[i2], row2[i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > eps:
            a2_new = a2 + y2 * (e1 - e2) / eta
            a2_new = min(max(a2_new, lo), hi)
        else:
            # degenerate pair: evaluate the subproblem objective at both ends
            f1 = y1 * (e1 + b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (e2 + b) - s * a1 * k12 - a2 * k22
            l1 = a1 + s * (a2 - lo)
            h1 = a1 + s * (a2 - hi)
            obj_lo = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12
            obj_hi = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12
            if obj_lo < obj_hi - eps:
                a2_new = lo
            elif obj_hi < obj_lo - eps:
                a2_new = hi
            else:
                return False
        if abs(a2_new - a2) < eps * (a2_new + a2 + eps):
            return False
        a1_new = a1 + s * (a2 - a2_new)
        # snap to the box to keep the equality constraint exact
        if a1_new < 0.0:
            a2_new += s * a1_new
            a1_new = 0.0
        elif a1_new > C:
            a2_new += s * (a1_new - C)
            a1_new = C
        d1, d2 = a1_new - a1, a2_new - a2
        b1 = b - (e1 + y1 * d1 * k11 + y2 * d2 * k12)
        b2 = b - (e2 + y1 * d1 * k12 + y2 * d2 * k22)
        if 0.0 < a1_new < C:
            b_new = b1
        elif 0.0 < a2_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        alpha[i1], alpha[i2] = a1_new, a2_new
        errors += y1 * d1 * row1 + y2 * d2 * row2 + (b_new - b)
        b = b_new
        return True

    def examine(i2: int) -> bool:
        y2, a2, e2 = y[i2], alpha[i2], errors[i2]
        r2 = e2 * y2
        if not ((r2 < -tol and a2 < C) or (r2 > tol and a2 > 0.0)):
            return False
        nonbound = np.flatnonzero((alpha > 0.0) & (alpha < C))
        if nonbound.size > 1:
            i1 = int(nonbound[np.argmax(np.abs(errors[nonbound] - e2))])
            if take_step(i1, i2):
                return True
        for i1 in rng.permutation(nonbound):
            if take_step(int(i1), i2):
                return True
        for i1 in rng.permutation(n):
            if take_step(int(i1), i2):
                return True
        return False

    converged = False
    examine_all = True
    for _ in range(cfg.max_passes):
        num_changed = 0
        if examine_all:
            for i in range(n):
                num_changed += examine(i)
            if num_changed == 0:
                converged = True
                break
            examine_all = False
        else:
            for i in np.flatnonzero((alpha > 0.0) & (alpha < C)):
                num_changed += examine(int(i))
            if num_changed == 0:
                examine_all = True

    # snap coefficients sitting a rounding error away from the box onto it,
    # so bound/unbounded classification below is not fooled by 1-ulp gaps
    snap = eps * max(1.0, C)
    alpha[alpha <= snap] = 0.0
    alpha[alpha >= C - snap] = C

    # final bias: average over unbounded support vectors, else midpoint of
    # the interval the bound points allow
    g = errors + y - b  # g_i = sum_j alpha_j y_j K(j, i)
    unbounded = np.flatnonzero((alpha > 0.0) & (alpha < C))
    if unbounded.size:
        b = float(np.mean(y[unbounded] - g[unbounded]))
    else:
        v = y - g
        lower = ((y > 0) & (alpha <= 0.0)) | ((y < 0) & (alpha >= C))
        upper = ((y < 0) & (alpha <= 0.0)) | ((y > 0) & (alpha >= C))
        b_lo = np.max(v[lower]) if lower.any() else -np.inf
        b_hi = np.min(v[upper]) if upper.any() else np.inf
        if np.isfinite(b_lo) and np.isfinite(b_hi):
            b = float(0.5 * (b_lo + b_hi))

    sv = np.flatnonzero(alpha > 0.0)
    model = SvmModel(
        support_vectors=xs[sv].copy(),
        dual_coeffs=(alpha * y)[sv].copy(),
        bias=b,
        kernel=kernel,
        standardizer=standardizer,
        C=C,
        converged=converged,
        expected_provenance=expected_provenance,
        diagnostics={"alpha": alpha, "n_train": n},
    )
    return model


def _raw_values(m: SvmModel, x) -> np.ndarray:
    from .composer import CompositeFeature

    if isinstance(x, CompositeFeature):
        if m.expected_provenance is not None and x.provenance != m.expected_provenance:
            raise ModelMismatch(
                f"composite provenance {x.provenance} does not match model "
                f"{m.expected_provenance}"
            )
        return x.values
    return np.asarray(x, dtype=np.float64)


def decision_value(m: SvmModel, x) -> float:
    """f(x) = sum_i dual_i * K(sv_i, standardize(x)) + bias."""
    raw = _raw_values(m, x)
    z = apply_standardizer(m.standardizer, raw)
    kvals = rbf_matrix(m.support_vectors, z[None, :], m.kernel)[:, 0]
    return float(m.dual_coeffs @ kvals + m.bias)


def decision_values(m: SvmModel, x_rows: np.ndarray) -> np.ndarray:
    """Vectorized decision function over raw (unstandardized) feature rows."""
    z = apply_standardizer(m.standardizer, np.asarray(x_rows, dtype=np.float64))
    kmat = rbf_matrix(m.support_vectors, z, m.kernel)
    return m.dual_coeffs @ kmat + m.bias


def predict(m: SvmModel, x) -> Label:
    """High when f(x) >= 0, Low otherwise (ties go to High)."""
    return Label.HIGH if decision_value(m, x) >= 0.0 else Label.LOW
