"""PSNR, SSIM and temporal change consistency (TCC).

All metrics run in float64 on numpy arrays; tensors are accepted and
converted. SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only
where the window fits inside the image, with C1 = (0.01 L)^2 and
C2 = (0.03 L)^2, averaged over windows and channels.

TCC compares the absolute frame-to-frame difference maps of ground truth
and generated clips with SSIM and averages over the n - 1 transitions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from vidinflate.errors import DataError, MetricError, ShapeError

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
PSNR_INF = math.inf

# Reference rows (large-scale training, not reproducible here); documentation only.
REFERENCE_ROWS = {
    "Zero-shot": {"psnr_db": 18.1, "ssim": 0.42, "tcc": 0.70},
    "Full-ft": {"psnr_db": 28.7, "ssim": 0.77, "tcc": 0.86},
    "Temporal": {"psnr_db": 24.3, "ssim": 0.62, "tcc": 0.82},
}


def _np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def psnr(a, b, max_val: float = 1.0) -> float:
    a, b = _np(a), _np(b)
    _same_shape(a, b)
    if max_val <= 0:
        raise MetricError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(max_val**2 / mse)


def _blur_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    x = sliding_window_view(x, g.size, axis=-2) @ g
    return sliding_window_view(x, g.size, axis=-1) @ g


def ssim_map(a, b, max_val: float = 1.0) -> np.ndarray:
    """Per-window SSIM over the last two axes; leading axes are independent planes."""
    a, b = _np(a), _np(b)
    _same_shape(a, b)
    if a.ndim < 2 or min(a.shape[-2:]) < WINDOW:
        raise MetricError(f"image of size {a.shape[-2:]} is smaller than the {WINDOW}x{WINDOW} SSIM window")
    g = gaussian_window()
    c1, c2 = (K1 * max_val) ** 2, (K2 * max_val) ** 2
    mu_a, mu_b = _blur_valid(a, g), _blur_valid(b, g)
    var_a = _blur_valid(a * a, g) - mu_a * mu_a
    var_b = _blur_valid(b * b, g) - mu_b * mu_b
    cov = _blur_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, max_val: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, max_val)))


def _clip_tcc(h: np.ndarray, g: np.ndarray, max_val: float) -> float:
    n = h.shape[0]
    if n < 2:
        raise MetricError(f"TCC needs at least 2 frames, got {n}")
    terms = [ssim(np.abs(h[i] - h[i + 1]), np.abs(g[i] - g[i + 1]), max_val) for i in range(n - 1)]
    return float(sum(terms) / (n - 1))


def tcc(h, g, max_val: float = 1.0) -> float:
    """TCC of a clip ``(F, C, H, W)``, or the mean over clips of a batch ``(B, F, C, H, W)``."""
    h, g = _np(h), _np(g)
    _same_shape(h, g)
    if h.ndim == 4:
        return _clip_tcc(h, g, max_val)
    if h.ndim != 5:
        raise ShapeError(f"expected (F, C, H, W) or (B, F, C, H, W), got {h.shape}")
    return float(np.mean([_clip_tcc(hc, gc, max_val) for hc, gc in zip(h, g)]))


@dataclass
class ClipMetrics:
    clip_id: str
    psnr_db: float
    ssim: float
    tcc: float | None


@dataclass
class MetricsReport:
    psnr_db: float
    ssim: float
    tcc: float | None
    psnr_infinite_count: int = 0
    per_clip: list[ClipMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v

        d = asdict(self)
        d["psnr_db"] = enc(d["psnr_db"])
        for c in d["per_clip"]:
            c["psnr_db"] = enc(c["psnr_db"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        def dec(v):
            return PSNR_INF if v == "inf" else v

        clips = [ClipMetrics(**{**c, "psnr_db": dec(c["psnr_db"])}) for c in d.get("per_clip", [])]
        return cls(dec(d["psnr_db"]), d["ssim"], d["tcc"], d.get("psnr_infinite_count", 0), clips)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _finite_mean(values: list[float]) -> tuple[float, int]:
    finite = [v for v in values if not math.isinf(v)]
    n_inf = len(values) - len(finite)
    return (float(np.mean(finite)) if finite else PSNR_INF), n_inf


def clip_metrics(clip_id: str, generated, truth, max_val: float = 1.0) -> ClipMetrics:
    g, h = _np(generated), _np(truth)
    _same_shape(g, h)
    if g.ndim == 5 and g.shape[0] == 1:
        g, h = g[0], h[0]
    if g.ndim != 4:
        raise ShapeError(f"clip must be (F, C, H, W), got {g.shape}")
    frame_psnr, _ = _finite_mean([psnr(gf, hf, max_val) for gf, hf in zip(g, h)])
    frame_ssim = float(np.mean([ssim(gf, hf, max_val) for gf, hf in zip(g, h)]))
    clip_tcc = _clip_tcc(h, g, max_val) if g.shape[0] >= 2 else None
    return ClipMetrics(clip_id, frame_psnr, frame_ssim, clip_tcc)


def evaluate(generated, ground_truth, max_val: float = 1.0) -> MetricsReport:
    """Pair clips (dicts keyed by clip id, or equal-length sequences) and aggregate.

    Per clip: PSNR and SSIM averaged over frames, TCC over transitions.
    Aggregates are unweighted means over clips; infinite PSNRs are left out
    of the PSNR mean and counted in ``psnr_infinite_count``.
    """
    if isinstance(generated, dict) or isinstance(ground_truth, dict):
        if not (isinstance(generated, dict) and isinstance(ground_truth, dict)):
            raise DataError("both sets must be keyed by clip id")
        unpaired = sorted(set(generated) ^ set(ground_truth))
        if unpaired:
            raise DataError(f"unpaired clips: {', '.join(unpaired)}")
        ids = sorted(generated)
        pairs = [(i, generated[i], ground_truth[i]) for i in ids]
    else:
        if len(generated) != len(ground_truth):
            raise DataError(f"{len(generated)} generated clips vs {len(ground_truth)} ground-truth clips")
        pairs = [(f"clip{i:05d}", g, h) for i, (g, h) in enumerate(zip(generated, ground_truth))]
    if not pairs:
        raise DataError("no clips to evaluate")

    per_clip = [clip_metrics(cid, g, h, max_val) for cid, g, h in pairs]
    psnr_mean, n_inf = _finite_mean([c.psnr_db for c in per_clip])
    tccs = [c.tcc for c in per_clip if c.tcc is not None]
    return MetricsReport(
        psnr_db=psnr_mean,
        ssim=float(np.mean([c.ssim for c in per_clip])),
        tcc=float(np.mean(tccs)) if tccs else None,
        psnr_infinite_count=n_inf,
        per_clip=per_clip,
    )


def format_table(rows: dict[str, MetricsReport], include_reference: bool = False) -> str:
    """Render reports as a plain-text table with PSNR in dB."""

    def fmt(v, spec):
        if v is None:
            return "-"
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        return format(v, spec)

    lines = [f"{'Method':<22}{'PSNR (dB)':>11}{'SSIM':>9}{'TCC':>9}", "-" * 51]
    for name, r in rows.items():
        lines.append(f"{name:<22}{fmt(r.psnr_db, '.2f'):>11}{fmt(r.ssim, '.4f'):>9}{fmt(r.tcc, '.4f'):>9}")
    if include_reference:
        lines.append("-" * 51)
        for name, r in REFERENCE_ROWS.items():
            label = f"{name} (reference)"
            lines.append(f"{label:<22}{r['psnr_db']:>11.1f}{r['ssim']:>9.2f}{r['tcc']:>9.2f}")
    return "\n".join(lines)
