"""Image quality metrics and the composite training loss.

``mse``, ``l1``, ``ssim`` and ``ms_ssim`` accept plain arrays (returning a
float, computed in float64) or :class:`~deblur.autograd.Var` nodes (returning
a scalar node on the same graph, in the node's dtype).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from deblur import autograd as ag
from deblur.autograd import Var
from deblur.tensor import as_tensor, gaussian_window

# canonical MS-SSIM scale weights, finest first
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
GEOMETRIC_FLOOR = 1e-8


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and positive, got {self.window_size}")
        if self.window_sigma <= 0:
            raise ValueError(f"window_sigma must be positive, got {self.window_sigma}")
        if self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ValueError("k1, k2 and dynamic_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def taps(self) -> np.ndarray:
        return gaussian_window(self.window_size, self.window_sigma)


@dataclass(frozen=True)
class MsSsimParams:
    base: SsimParams = field(default_factory=SsimParams)
    scales: int = 3
    scale_weights: tuple | None = None

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        weights = self.scale_weights
        if weights is None:
            if self.scales > len(MS_SSIM_WEIGHTS):
                raise ValueError(f"give scale_weights explicitly for more than {len(MS_SSIM_WEIGHTS)} scales")
            weights = MS_SSIM_WEIGHTS[: self.scales]
        if len(weights) != self.scales:
            raise ValueError(f"{len(weights)} scale weights for {self.scales} scales")
        if any(w <= 0 for w in weights):
            raise ValueError("scale weights must be positive")
        total = math.fsum(weights)
        object.__setattr__(self, "scale_weights", tuple(w / total for w in weights))

    def min_size(self) -> int:
        """Smallest image side that keeps the coarsest scale at least one window wide."""
        return self.base.window_size * 2 ** (self.scales - 1)


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    l1: float
    ms_ssim: float
    total: float


# --- helpers -----------------------------------------------------------------

def _pair(x, y):
    """Check shapes and pick a dtype: float64 for plain arrays, the graph's otherwise."""
    xs, ys = ag.value_of(x).shape, ag.value_of(y).shape
    if xs != ys:
        raise ValueError(f"shape mismatch: {xs} vs {ys}")
    node = x if isinstance(x, Var) else y if isinstance(y, Var) else None
    dtype = np.float64 if node is None else node.value.dtype
    if not isinstance(x, Var):
        x = as_tensor(x, dtype)
    if not isinstance(y, Var):
        y = as_tensor(y, dtype)
    return x, y


def _result(v):
    return v if isinstance(v, Var) else float(v.item())


# --- pointwise losses --------------------------------------------------------

def mse(x, y):
    x, y = _pair(x, y)
    return _result(ag.mean(ag.square(ag.sub(x, y))))


def l1(x, y):
    x, y = _pair(x, y)
    return _result(ag.mean(ag.absolute(ag.sub(x, y))))


def psnr(x, y, dynamic_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    if dynamic_range <= 0:
        raise ValueError(f"dynamic_range must be positive, got {dynamic_range}")
    err = mse(ag.value_of(x), ag.value_of(y))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(dynamic_range**2 / err)


# --- structural similarity -----------------------------------------------------

def ssim_terms(x, y, params: SsimParams):
    """Mean SSIM and mean contrast-structure term over all valid windows and channels."""
    h, w = ag.value_of(x).shape[:2]
    k = params.window_size
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {k}x{k}")
    taps = params.taps()
    c1, c2 = params.c1, params.c2

    mu_x = ag.window_mean(x, taps)
    mu_y = ag.window_mean(y, taps)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    var_x = ag.window_mean(x * x, taps) - mu_xx
    var_y = ag.window_mean(y * y, taps) - mu_yy
    cov = ag.window_mean(x * y, taps) - mu_xy

    cs_map = (2.0 * cov + c2) / (var_x + var_y + c2)
    lum_map = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1)
    return ag.mean(lum_map * cs_map), ag.mean(cs_map)


def ssim(x, y, params: SsimParams | None = None):
    x, y = _pair(x, y)
    s, _ = ssim_terms(x, y, params or SsimParams())
    return _result(s)


def ms_ssim(x, y, params: MsSsimParams | None = None):
    """Multi-scale SSIM over an average-pooling pyramid.

    Finer scales contribute their contrast-structure term, the coarsest scale
    its full SSIM. Each per-scale value is clamped at 0 (ReLU) and floored at
    ``GEOMETRIC_FLOOR`` before the weighted geometric mean.
    """
    params = params or MsSsimParams()
    x, y = _pair(x, y)
    h, w = ag.value_of(x).shape[:2]
    need = params.min_size()
    if h < need or w < need:
        raise ValueError(
            f"image {h}x{w} too small for {params.scales} scales with a "
            f"{params.base.window_size}px window (need {need}x{need})"
        )
    acc = None
    for s, weight in enumerate(params.scale_weights):
        full, cs = ssim_terms(x, y, params.base)
        v = full if s == params.scales - 1 else cs
        v = ag.clamp_min(ag.relu(v), GEOMETRIC_FLOOR)
        term = weight * ag.log(v)
        acc = term if acc is None else acc + term
        if s < params.scales - 1:
            x, y = ag.downsample2(x), ag.downsample2(y)
    return _result(ag.exp(acc))


# --- composite loss ---------------------------------------------------------

def combined_loss_node(pred, target, params: MsSsimParams | None = None):
    """Return ``(total, breakdown)`` with total = MSE + L1 + (1 - MS-SSIM).

    ``total`` is a graph node when ``pred`` is one, so it can be passed to
    :func:`deblur.autograd.backward`.
    """
    params = params or MsSsimParams()
    pred, target = _pair(pred, target)
    m = mse(pred, target)
    a = l1(pred, target)
    s = ms_ssim(pred, target, params)
    if isinstance(pred, Var) or isinstance(target, Var):
        total = m + a + (1.0 - s)
        breakdown = LossBreakdown(
            mse=float(m.value.item()),
            l1=float(a.value.item()),
            ms_ssim=float(s.value.item()),
            total=float(total.value.item()),
        )
        return total, breakdown
    total = m + a + (1.0 - s)
    return total, LossBreakdown(m, a, s, total)


def combined_loss(pred, target, params: MsSsimParams | None = None) -> LossBreakdown:
    return combined_loss_node(pred, target, params)[1]


# --- evaluation reports ---------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    id: str
    ssim: float
    psnr: float
    error: str | None = None


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    @property
    def ok_rows(self) -> list[MetricRow]:
        return [r for r in self.rows if r.error is None]

    @property
    def errors(self) -> int:
        return sum(r.error is not None for r in self.rows)

    @property
    def mean_ssim(self) -> float | None:
        vals = [r.ssim for r in self.ok_rows]
        return math.fsum(vals) / len(vals) if vals else None

    @property
    def mean_psnr(self) -> float | None:
        """Mean over finite PSNR rows; ``inf`` if every valid row was a perfect match."""
        ok = self.ok_rows
        if not ok:
            return None
        finite = [r.psnr for r in ok if math.isfinite(r.psnr)]
        return math.fsum(finite) / len(finite) if finite else math.inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "ssim", "psnr"])
        for r in self.rows:
            writer.writerow([r.id, _fmt(r.ssim), _fmt(r.psnr)])
        writer.writerow(["mean", _fmt(self.mean_ssim), _fmt(self.mean_psnr)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fmt(v: float | None) -> str:
    if v is None or math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def evaluate_pairs(
    pairs,
    predictor: Callable[[np.ndarray], np.ndarray],
    dynamic_range: float = 1.0,
    ssim_params: SsimParams | None = None,
    threads: int = 1,
) -> MetricReport:
    """Score ``predictor(degraded)`` against the clean image for every pair.

    ``pairs`` is a :class:`~deblur.data.PairManifest` (all rows) or a list of
    ``(id, degraded_path, clean_path)`` tuples. A pair that fails to load or
    has mismatched sizes becomes an error row; rows keep the input order.
    """
    from deblur.data import PairManifest, load_tensor

    if isinstance(pairs, PairManifest):
        items = [(r.id, pairs.degraded_path(r), pairs.clean_path(r)) for r in pairs.rows]
    else:
        items = list(pairs)
    params = ssim_params or SsimParams(dynamic_range=dynamic_range)

    def score(item) -> MetricRow:
        rid, degraded, clean = item
        try:
            if clean is None:
                raise ValueError("no clean image for this pair")
            pred = predictor(load_tensor(degraded))
            ref = load_tensor(clean)
            if pred.shape != ref.shape:
                raise ValueError(f"size mismatch: prediction {pred.shape} vs clean {ref.shape}")
            return MetricRow(rid, ssim(pred, ref, params), psnr(pred, ref, dynamic_range))
        except (OSError, ValueError) as exc:
            return MetricRow(rid, math.nan, math.nan, error=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(score, items))
    else:
        rows = [score(it) for it in items]
    return MetricReport(rows)
