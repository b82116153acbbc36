"""PSNR / SSIM and per-(domain, round) aggregation of step reports."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CSV_COLUMNS = ("domain_id", "round", "n_images", "mean_psnr", "mean_ssim")


def psnr(a, b):
    """10 log10(1 / MSE) for images in [0, 1]; ``inf`` when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-r ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable 'valid' filtering over the last two axes
    x = sliding_window_view(x, g.size, axis=-2) @ g
    return sliding_window_view(x, g.size, axis=-1) @ g


def ssim(a, b, k1=0.01, k2=0.03, data_range=1.0, win=11, sigma=1.5):
    """Single-scale SSIM (Gaussian 11x11, sigma 1.5) averaged over the
    valid region of each channel, then over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < win:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {win}x{win} SSIM window")
    g = _gaussian_window(win, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    return float(np.mean(smap.reshape(smap.shape[0], -1).mean(axis=1)))


@dataclass
class MetricRow:
    domain_id: str
    round: int
    n_images: int
    mean_psnr: float
    mean_ssim: float


def _mean(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return math.fsum(vals) / len(vals) if vals else math.nan


def aggregate(reports):
    """Per-(domain, round) means of the adapted metrics, in first-seen order.

    Returns ``(rows, overall)`` where ``overall`` is a MetricRow with
    ``domain_id="all"`` and ``round=0`` averaging every image.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    buckets = {}
    for r in reports:
        buckets.setdefault((r.domain_id, r.round), []).append(r)
    rows = [
        MetricRow(d, rnd, len(rs), _mean(r.psnr_adapted for r in rs), _mean(r.ssim_adapted for r in rs))
        for (d, rnd), rs in buckets.items()
    ]
    overall = MetricRow("all", 0, len(reports),
                        _mean(r.psnr_adapted for r in reports), _mean(r.ssim_adapted for r in reports))
    return rows, overall


def fmt_float(v, digits=6):
    if v is None:
        return ""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return repr(float(v)) if digits is None else f"{v:.{digits}f}"


def parse_float(s):
    return float(s) if s != "" else None


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.domain_id, r.round, r.n_images, fmt_float(r.mean_psnr, None), fmt_float(r.mean_ssim, None)])
    return buf.getvalue()


def rows_from_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [MetricRow(d["domain_id"], int(d["round"]), int(d["n_images"]),
                      parse_float(d["mean_psnr"]), parse_float(d["mean_ssim"])) for d in reader]


def render_table(rows, overall=None):
    """Rounds down, domains across; each cell is ``PSNR / SSIM``."""
    domains = list(dict.fromkeys(r.domain_id for r in rows))
    rounds = sorted({r.round for r in rows})
    cell = {(r.domain_id, r.round): r for r in rows}
    headers = ["Round"] + domains + ["Avg"]
    lines = []
    body = []
    for rnd in rounds:
        line = [str(rnd)]
        ps, ss, ns = [], [], []
        for d in domains:
            r = cell.get((d, rnd))
            if r is None:
                line.append("-")
                continue
            line.append(f"{fmt_float(r.mean_psnr, 3)} / {fmt_float(r.mean_ssim, 4)}")
            ps.append(r.mean_psnr * r.n_images)
            ss.append(r.mean_ssim * r.n_images)
            ns.append(r.n_images)
        n = sum(ns)
        line.append(f"{fmt_float(math.fsum(ps) / n, 3)} / {fmt_float(math.fsum(ss) / n, 4)}" if n else "-")
        body.append(line)
    if overall is not None:
        body.append(["All"] + ["" for _ in domains]
                    + [f"{fmt_float(overall.mean_psnr, 3)} / {fmt_float(overall.mean_ssim, 4)}"])
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip())
    return "\n".join(lines) + "\n"
