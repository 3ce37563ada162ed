"""Reference and no-reference quality metrics plus report aggregation.

Six reference metrics (PSNR, SSIM, SAM, ERGAS, SCC, Q) score a fused image
against the clean reference; three no-reference indices (D_lambda, D_S, QNR)
score spectral/spatial consistency against the inputs alone. Everything is
computed in float64 from [C,H,W] arrays.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .patchify import bicubic_resize

HIGHER_BETTER = ("PSNR", "SSIM", "SCC", "Q", "QNR")
LOWER_BETTER = ("SAM", "ERGAS", "D_lambda", "D_S")
METRIC_COLUMNS = ("PSNR", "SSIM", "SAM", "ERGAS", "SCC", "Q", "D_lambda", "D_S", "QNR")


def _as_chw(x):
    arr = np.asarray(x.data if hasattr(x, "data") else x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected [C,H,W], got shape {arr.shape}")
    return arr


def _check_same_shape(x, ref):
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")


# ---------------------------------------------------------------------------
# reference metrics

def psnr(x, ref, data_range=1.0):
    """10*log10(range^2 / MSE) over all bands and pixels; inf when equal."""
    x, ref = _as_chw(x), _as_chw(ref)
    _check_same_shape(x, ref)
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = np.mean((x - ref) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * math.log10(data_range * data_range / mse))


def _gaussian_window(size=11, sigma=1.5):
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_sums(band, window):
    size = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(band, (size, size))
    return np.einsum("hwij,ij->hw", view, window, optimize=True)


def ssim(x, ref, data_range=1.0):
    """Mean structural similarity, 11x11 gaussian window (sigma 1.5)."""
    x, ref = _as_chw(x), _as_chw(ref)
    _check_same_shape(x, ref)
    c, h, w = x.shape
    if h < 11 or w < 11:
        raise ValueError(f"image {h}x{w} smaller than the 11x11 ssim window")
    win = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    per_band = []
    for b in range(c):
        mu1 = _windowed_sums(x[b], win)
        mu2 = _windowed_sums(ref[b], win)
        s11 = _windowed_sums(x[b] * x[b], win) - mu1 * mu1
        s22 = _windowed_sums(ref[b] * ref[b], win) - mu2 * mu2
        s12 = _windowed_sums(x[b] * ref[b], win) - mu1 * mu2
        num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
        den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
        per_band.append(np.mean(num / den))
    return float(np.mean(per_band))


def sam(x, ref):
    """Mean spectral angle in radians; zero-norm pixels contribute 0."""
    x, ref = _as_chw(x), _as_chw(ref)
    _check_same_shape(x, ref)
    if x.shape[0] < 2:
        raise ValueError("spectral angle needs at least 2 bands")
    dot = (x * ref).sum(axis=0)
    nx = np.sqrt((x * x).sum(axis=0))
    nr = np.sqrt((ref * ref).sum(axis=0))
    valid = (nx > 0) & (nr > 0)
    cos = np.ones_like(dot)
    cos[valid] = np.clip(dot[valid] / (nx[valid] * nr[valid]), -1.0, 1.0)
    angles = np.arccos(cos)
    angles[~valid] = 0.0
    return float(angles.mean())


def ergas(x, ref, r):
    """100/r * sqrt(mean_b (RMSE_b / mean(ref_b))^2)."""
    x, ref = _as_chw(x), _as_chw(ref)
    _check_same_shape(x, ref)
    if r <= 1:
        raise ValueError(f"ratio must exceed 1, got {r}")
    terms = []
    for b in range(x.shape[0]):
        mean_ref = ref[b].mean()
        if mean_ref == 0.0:
            raise ValueError(f"band {b} of the reference has zero mean")
        rmse = math.sqrt(np.mean((x[b] - ref[b]) ** 2))
        terms.append((rmse / mean_ref) ** 2)
    return float(100.0 / r * math.sqrt(np.mean(terms)))


_LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])


def _highpass(band):
    view = np.lib.stride_tricks.sliding_window_view(band, (3, 3))
    return np.einsum("hwij,ij->hw", view, _LAPLACIAN, optimize=True)


def scc(x, ref):
    """High-pass (3x3 laplacian) Pearson correlation, band-averaged."""
    x, ref = _as_chw(x), _as_chw(ref)
    _check_same_shape(x, ref)
    if x.shape[1] < 3 or x.shape[2] < 3:
        raise ValueError("scc needs at least 3x3 images")
    cors = []
    for b in range(x.shape[0]):
        hx = _highpass(x[b]).ravel()
        hr = _highpass(ref[b]).ravel()
        sx, sr = hx.std(), hr.std()
        if sx == 0.0 or sr == 0.0:
            raise ValueError(f"band {b}: high-pass response has zero variance")
        cors.append(np.mean((hx - hx.mean()) * (hr - hr.mean())) / (sx * sr))
    return float(np.mean(cors))


def _q_block_stats(a, b, size):
    n = size * size
    win = np.ones((size, size)) / n
    mu1 = _windowed_sums(a, win)
    mu2 = _windowed_sums(b, win)
    s11 = _windowed_sums(a * a, win) - mu1 * mu1
    s22 = _windowed_sums(b * b, win) - mu2 * mu2
    s12 = _windowed_sums(a * b, win) - mu1 * mu2
    return mu1, mu2, s11, s22, s12


def _q_band(a, b, size=8, eps=1e-12):
    mu1, mu2, s11, s22, s12 = _q_block_stats(a, b, size)
    var_sum = s11 + s22
    mu_sum = mu1 * mu1 + mu2 * mu2
    qmap = np.ones_like(var_sum)
    only_mu = (var_sum < eps) & (mu_sum >= eps)
    only_var = (var_sum >= eps) & (mu_sum < eps)
    regular = (var_sum >= eps) & (mu_sum >= eps)
    qmap[only_mu] = 2 * mu1[only_mu] * mu2[only_mu] / mu_sum[only_mu]
    qmap[only_var] = 2 * s12[only_var] / var_sum[only_var]
    qmap[regular] = (4 * s12[regular] * mu1[regular] * mu2[regular]) / (
        var_sum[regular] * mu_sum[regular]
    )
    return float(qmap.mean())


def q_index(x, ref, block=8):
    """Universal image quality index over sliding blocks, band-averaged."""
    x, ref = _as_chw(x), _as_chw(ref)
    _check_same_shape(x, ref)
    if x.shape[1] < block or x.shape[2] < block:
        raise ValueError(f"image smaller than the {block}x{block} block")
    return float(np.mean([_q_band(x[b], ref[b], block) for b in range(x.shape[0])]))


# ---------------------------------------------------------------------------
# no-reference indices

def no_reference_indices(fused, lrms, pan, r, block=8):
    """(D_lambda, D_S, QNR) from the fused image and the two inputs."""
    fused, lrms, pan = _as_chw(fused), _as_chw(lrms), _as_chw(pan)
    c = fused.shape[0]
    if c < 2:
        raise ValueError("no-reference indices need at least 2 bands")
    if lrms.shape[0] != c or pan.shape[0] != 1:
        raise ValueError(
            f"band mismatch: fused {c}, lrms {lrms.shape[0]}, pan {pan.shape[0]}"
        )
    if fused.shape[1] != pan.shape[1] or fused.shape[2] != pan.shape[2]:
        raise ValueError("fused and PAN extents differ")
    if fused.shape[1] != round(r * lrms.shape[1]):
        raise ValueError("LRMS extents inconsistent with the ratio")

    d_lambda_terms = []
    for i in range(c):
        for j in range(i + 1, c):
            qf = _q_band(fused[i], fused[j], block)
            qm = _q_band(lrms[i], lrms[j], block)
            d_lambda_terms.append(abs(qf - qm))
    d_lambda = float(np.mean(d_lambda_terms))

    pan_low = bicubic_resize(pan[None], lrms.shape[1], lrms.shape[2])[0]
    d_s_terms = []
    for i in range(c):
        q_high = _q_band(fused[i], pan[0], block)
        q_low = _q_band(lrms[i], pan_low[0], block)
        d_s_terms.append(abs(q_high - q_low))
    d_s = float(np.mean(d_s_terms))

    qnr = (1.0 - d_lambda) * (1.0 - d_s)
    return d_lambda, d_s, qnr


# ---------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    """Per-image metric values plus aggregate means."""

    per_image: dict = field(default_factory=dict)  # id -> {metric: value}
    means: dict = field(default_factory=dict)
    excluded_inf: dict = field(default_factory=dict)  # metric -> excluded count

    directionality = {
        **{m: "higher-better" for m in HIGHER_BETTER},
        **{m: "lower-better" for m in LOWER_BETTER},
    }

    def add(self, image_id, values):
        self.per_image[image_id] = dict(values)
        self._refresh()
        return self

    def _refresh(self):
        keys = sorted({k for v in self.per_image.values() for k in v})
        self.means = {}
        self.excluded_inf = {}
        for k in keys:
            vals = [v[k] for v in self.per_image.values() if k in v]
            finite = [v for v in vals if math.isfinite(v)]
            dropped = len(vals) - len(finite)
            if dropped:
                self.excluded_inf[k] = dropped
            self.means[k] = float(np.mean(finite)) if finite else float("inf")


def evaluate_pair(fused, pair, data_range=1.0):
    """All computable metrics for one fused result.

    Reference metrics need pair.gt; the no-reference indices only need the
    inputs and are always computed (2+ bands).
    """
    fused_arr = _as_chw(fused)
    values = {}
    if pair.gt is not None:
        gt = _as_chw(pair.gt)
        values["PSNR"] = psnr(fused_arr, gt, data_range)
        values["SSIM"] = ssim(fused_arr, gt, data_range)
        values["SAM"] = sam(fused_arr, gt)
        values["ERGAS"] = ergas(fused_arr, gt, pair.ratio)
        values["SCC"] = scc(fused_arr, gt)
        values["Q"] = q_index(fused_arr, gt)
    if fused_arr.shape[0] >= 2:
        d_lambda, d_s, qnr = no_reference_indices(
            fused_arr, pair.lrms, pair.pan, pair.ratio
        )
        values["D_lambda"] = d_lambda
        values["D_S"] = d_s
        values["QNR"] = qnr
    return values


def aggregate(reports):
    """Unweighted per-metric mean over images; inf PSNR entries excluded."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    keys = set(reports[0].means.keys())
    merged = MetricReport()
    for rep in reports:
        if set(rep.means.keys()) != keys:
            raise ValueError(
                f"metric keys differ across reports: {sorted(rep.means)} vs {sorted(keys)}"
            )
        for image_id, values in rep.per_image.items():
            merged.per_image[image_id] = dict(values)
    merged._refresh()
    return merged


def _fmt(v):
    if v is None:
        return ""
    if math.isinf(v):
        return "inf"
    return f"{v:.4f}"


def render_csv(report):
    """Fixed-header CSV; blank cells where a metric was not computed."""
    lines = ["image_id," + ",".join(METRIC_COLUMNS)]
    for image_id in sorted(report.per_image):
        vals = report.per_image[image_id]
        cells = [_fmt(vals.get(k)) for k in METRIC_COLUMNS]
        lines.append(image_id + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def render_table(report, title=None):
    """Aligned text table with a trailing mean row."""
    cols = [c for c in METRIC_COLUMNS if c in report.means]
    rows = [["image_id"] + cols]
    for image_id in sorted(report.per_image):
        vals = report.per_image[image_id]
        rows.append([image_id] + [_fmt(vals.get(k)) for k in cols])
    mean_cells = []
    for k in cols:
        cell = _fmt(report.means.get(k))
        if k in report.excluded_inf:
            cell += f" ({report.excluded_inf[k]} inf excl.)"
        mean_cells.append(cell)
    rows.append(["mean"] + mean_cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    if title:
        out.append(title)
    for i, row in enumerate(rows):
        out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"
