"""Evaluation suite for comparing real and synthetic window sets.

Spectral fidelity (bandwise relative error, PSD L2), amplitude bias
(per-channel mean discrepancies), distributional similarity (unbiased MMD with
an RBF kernel on the median-heuristic bandwidth), a pairwise-correlation
diversity proxy, channel-covariance Frobenius and ACF L2 distances, 1-NN
real-vs-fake separability, and class-conditional kNN recovery.

All metrics operate on flattened raw windows (there is no learned feature
encoder in this artifact); the report header records that choice. Welch
settings are shared between both sides of every comparison.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dsp

__all__ = [
    "WindowSet",
    "WelchSettings",
    "MetricReport",
    "bandwise_rel_err",
    "psd_l2_error",
    "channel_mean_discrepancy",
    "mmd_unbiased",
    "diversity",
    "cov_frobenius",
    "acf_l2",
    "one_nn_separability",
    "knn_class_recovery",
    "compute_report",
    "render_table",
]

REL_ERR_EPS = 1e-8
MODEL_PREFIX = {"ddpm": "d", "wgan": "g"}  # paper-style field prefixes


@dataclass
class WindowSet:
    """A uniform stack of labeled windows from one origin (real or a model)."""

    data: np.ndarray            # (N, C, L) float64
    labels: np.ndarray          # (N,) int
    origin: str = "real"
    fs: float = 250.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3 or self.data.shape[0] == 0:
            raise ValueError(f"window set needs nonempty (N, C, L) data, got {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise ValueError("labels must align with windows")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("window set contains non-finite values")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def flat(self) -> np.ndarray:
        return self.data.reshape(self.n, -1)


@dataclass(frozen=True)
class WelchSettings:
    nperseg: int | None = None    # None -> min(L, 256)
    overlap: float = 0.5

    def to_dict(self) -> dict:
        return {"nperseg": self.nperseg, "overlap": self.overlap, "window": "hann",
                "detrend": True}


def _check_pair(real: WindowSet, fake: WindowSet) -> None:
    if real.data.shape[1:] != fake.data.shape[1:]:
        raise ValueError(f"window shapes differ: {real.data.shape[1:]} vs {fake.data.shape[1:]}")
    if real.fs != fake.fs:
        raise ValueError(f"sampling rates differ: {real.fs} vs {fake.fs}")


def _mean_psd(ws: WindowSet, welch: WelchSettings) -> dsp.Psd:
    """PSD averaged over windows and channels (linear, so band powers commute)."""
    acc = None
    ref = None
    for win in ws.data:
        for ch in win:
            p = dsp.welch_psd(ch, ws.fs, nperseg=welch.nperseg, overlap_frac=welch.overlap)
            acc = p.power.copy() if acc is None else acc + p.power
            ref = p
    count = ws.n * ws.n_channels
    return dsp.Psd(freqs=ref.freqs, power=acc / count,
                   nperseg=ref.nperseg, noverlap=ref.noverlap)


def bandwise_rel_err(real: WindowSet, fake: WindowSet,
                     bands: tuple[dsp.BandSpec, ...] | None = None,
                     welch: WelchSettings = WelchSettings()) -> dict[str, float]:
    """|P_b^fake - P_b^real| / (P_b^real + eps) per canonical band."""
    _check_pair(real, fake)
    if bands is None:
        bands = dsp.canonical_bands(real.fs)
    p_real = _mean_psd(real, welch)
    p_fake = _mean_psd(fake, welch)
    out = {}
    for b in bands:
        pr = dsp.band_power(p_real, b)
        pf = dsp.band_power(p_fake, b)
        out[b.name] = abs(pf - pr) / (pr + REL_ERR_EPS)
    return out


def psd_l2_error(real: WindowSet, fake: WindowSet,
                 welch: WelchSettings = WelchSettings()) -> float:
    """Squared L2 distance between channel-averaged mean PSD vectors."""
    _check_pair(real, fake)
    p_real = _mean_psd(real, welch)
    p_fake = _mean_psd(fake, welch)
    if p_real.freqs.shape != p_fake.freqs.shape or not np.allclose(p_real.freqs, p_fake.freqs):
        raise ValueError("PSD frequency grids differ; use identical Welch settings")
    return float(np.sum((p_real.power - p_fake.power) ** 2))


def channel_mean_discrepancy(real: WindowSet, fake: WindowSet) -> tuple[np.ndarray, float]:
    """Per-channel grand-mean difference (fake - real) and its mean magnitude."""
    if real.n_channels != fake.n_channels:
        raise ValueError("channel counts differ")
    mu_real = real.data.mean(axis=(0, 2))
    mu_fake = fake.data.mean(axis=(0, 2))
    delta = mu_fake - mu_real
    return delta, float(np.mean(np.abs(delta)))


def _median_bandwidth(z: np.ndarray) -> float:
    """Median of pooled pairwise Euclidean distances (the median heuristic)."""
    sq = np.sum(z ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(d2, 0.0, out=d2)
    iu = np.triu_indices(len(z), k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def mmd_unbiased(x_set: WindowSet, y_set: WindowSet,
                 bandwidth: float | None = None) -> float:
    """Unbiased squared-MMD U-statistic with an RBF kernel on flattened windows.

    Kernel bandwidth defaults to the median heuristic over the pooled pairwise
    distances. The estimate can be slightly negative (unbiasedness).
    """
    x = x_set.flat()
    y = y_set.flat()
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValueError("MMD needs at least 2 samples on each side")
    if x.shape[1] != y.shape[1]:
        raise ValueError("flattened dimensions differ")
    if bandwidth is None:
        bandwidth = _median_bandwidth(np.concatenate([x, y], axis=0))
    gamma = 1.0 / (2.0 * bandwidth ** 2)

    def gram(a, b):
        sq_a = np.sum(a ** 2, axis=1)
        sq_b = np.sum(b ** 2, axis=1)
        d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (a @ b.T)
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-gamma * d2)

    kxx = gram(x, x)
    kyy = gram(y, y)
    kxy = gram(x, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    term_xy = 2.0 * kxy.sum() / (m * n)
    return float(term_x + term_y - term_xy)


def diversity(s: WindowSet) -> float:
    """1 - mean pairwise Pearson correlation across flattened windows, in [0, 2].

    Pairs involving a constant (zero-variance) window count as correlation 0
    and raise a warning.
    """
    z = s.flat()
    n = len(z)
    if n < 2:
        raise ValueError("diversity needs at least 2 windows")
    zc = z - z.mean(axis=1, keepdims=True)
    gram = zc @ zc.T
    d = np.diag(gram).copy()
    degenerate = d <= 0.0
    if np.any(degenerate):
        warnings.warn("constant window(s) in set: their pair correlations count as 0",
                      stacklevel=2)
        d[degenerate] = 1.0
    denom = np.sqrt(np.outer(d, d))
    corr = gram / denom
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    np.clip(corr, -1.0, 1.0, out=corr)
    iu = np.triu_indices(n, k=1)
    return float(1.0 - np.mean(corr[iu]))


def cov_frobenius(real: WindowSet, fake: WindowSet) -> float:
    """Frobenius distance between window-averaged channel covariance matrices."""
    if real.n_channels != fake.n_channels:
        raise ValueError("channel counts differ")

    def mean_cov(ws):
        return np.mean([dsp.channel_covariance(w) for w in ws.data], axis=0)

    return float(np.linalg.norm(mean_cov(real) - mean_cov(fake), ord="fro"))


def acf_l2(real: WindowSet, fake: WindowSet, max_lag: int = 50) -> float:
    """L2 distance between set-averaged, channel-averaged autocorrelations."""
    _check_pair(real, fake)

    def mean_acf(ws):
        acc = np.zeros(max_lag + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # degenerate windows contribute zeros
            for win in ws.data:
                for ch in win:
                    acc += dsp.autocorrelation(ch, max_lag)
        return acc / (ws.n * ws.n_channels)

    return float(np.linalg.norm(mean_acf(real) - mean_acf(fake)))


def one_nn_separability(real: WindowSet, fake: WindowSet) -> float:
    """Leave-one-out 1-NN accuracy classifying real vs fake on the pooled set.

    0.5 means indistinguishable, 1.0 trivially separable. Both sets are
    truncated to the smaller size. Ties break toward the lower pooled index.
    """
    n = min(real.n, fake.n)
    pooled = np.concatenate([real.flat()[:n], fake.flat()[:n]], axis=0)
    if len(pooled) < 4:
        raise ValueError("1-NN separability needs a pooled set of at least 4")
    labels = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
    sq = np.sum(pooled ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pooled @ pooled.T)
    np.fill_diagonal(d2, np.inf)
    nn = np.argmin(d2, axis=1)
    return float(np.mean(labels[nn] == labels))


def knn_class_recovery(real_train: WindowSet, fake_eval: WindowSet,
                       k: int = 5) -> dict:
    """kNN (Euclidean, flattened) fitted on real windows, evaluated on fake labels.

    Returns per-class accuracy (None for classes absent from the real set) and
    macro accuracy over evaluable classes. Vote ties break toward the lower
    class index.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be odd and >= 1")
    if k > real_train.n:
        raise ValueError(f"k={k} exceeds real training set size {real_train.n}")
    xr, yr = real_train.flat(), real_train.labels
    xf, yf = fake_eval.flat(), fake_eval.labels
    n_classes = int(max(yr.max(), yf.max())) + 1

    sq_r = np.sum(xr ** 2, axis=1)
    sq_f = np.sum(xf ** 2, axis=1)
    d2 = sq_f[:, None] + sq_r[None, :] - 2.0 * (xf @ xr.T)
    neighbor_idx = np.argpartition(d2, k - 1, axis=1)[:, :k]

    votes = np.zeros((len(xf), n_classes), dtype=int)
    for j in range(k):
        np.add.at(votes, (np.arange(len(xf)), yr[neighbor_idx[:, j]]), 1)
    pred = np.argmax(votes, axis=1)  # argmax takes the lowest index on ties

    present = set(int(c) for c in np.unique(yr))
    per_class: dict[int, float | None] = {}
    evaluable_accs = []
    for c in sorted(set(int(c) for c in np.unique(yf))):
        if c not in present:
            per_class[c] = None
            continue
        mask = yf == c
        acc = float(np.mean(pred[mask] == c))
        per_class[c] = acc
        evaluable_accs.append(acc)
    macro = float(np.mean(evaluable_accs)) if evaluable_accs else float("nan")
    return {"per_class": per_class, "macro": macro, "k": k}


@dataclass
class MetricReport:
    """All comparison statistics for one (real, {model: fake}) evaluation."""

    meta: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "metrics": self.metrics}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path) as f:
            d = json.load(f)
        return cls(meta=d["meta"], metrics=d["metrics"])


def compute_report(
    real: WindowSet,
    fakes: dict[str, WindowSet],
    welch: WelchSettings = WelchSettings(),
    bands: tuple[dsp.BandSpec, ...] | None = None,
    max_lag: int = 50,
    knn_k: int = 5,
    normalization: str = "unknown",
    seeds: dict | None = None,
) -> MetricReport:
    """Run the full suite for each model set against the shared real set."""
    bad = set(fakes) - set(MODEL_PREFIX)
    if bad:
        raise ValueError(f"unknown model keys {sorted(bad)}; expected subset of "
                         f"{sorted(MODEL_PREFIX)}")
    if bands is None:
        bands = dsp.canonical_bands(real.fs)

    metrics: dict = {"diversity_real": diversity(real)}
    skipped = {m: "no window set provided" for m in MODEL_PREFIX if m not in fakes}
    if skipped:
        metrics["skipped"] = skipped

    for name, fake in fakes.items():
        p = MODEL_PREFIX[name]
        rel = bandwise_rel_err(real, fake, bands, welch)
        for band_name, val in rel.items():
            metrics[f"rel_err_{band_name}_{name}"] = val
        metrics[f"psd_l2_{name}"] = psd_l2_error(real, fake, welch)
        delta, effect = channel_mean_discrepancy(real, fake)
        metrics[f"{p}_mu_diff"] = delta.tolist()
        metrics[f"{p}_mean_effect"] = effect
        metrics[f"mmd_r_{name}"] = mmd_unbiased(real, fake)
        metrics[f"diversity_{name}"] = diversity(fake)
        metrics[f"cov_frob_{name}"] = cov_frobenius(real, fake)
        metrics[f"acf_l2_{name}"] = acf_l2(real, fake, max_lag)
        metrics[f"one_nn_acc_{name}"] = one_nn_separability(real, fake)
        rec = knn_class_recovery(real, fake, knn_k)
        metrics[f"knn_recovery_{name}"] = {
            "per_class": {str(c): a for c, a in rec["per_class"].items()},
            "macro": rec["macro"], "k": rec["k"],
        }

    if "ddpm" in fakes and "wgan" in fakes:
        metrics["mmd_ddpm_wgan"] = mmd_unbiased(fakes["ddpm"], fakes["wgan"])

    meta = {
        "welch": welch.to_dict(),
        "bands": [[b.name, b.lo, b.hi] for b in bands],
        "kernel": "rbf_median_heuristic",
        "feature_space": "flattened_window",
        "max_lag": max_lag,
        "knn_k": knn_k,
        "normalization": normalization,
        "fs": real.fs,
        "set_sizes": {"real": real.n, **{k: v.n for k, v in fakes.items()}},
        "seeds": seeds or {},
    }
    return MetricReport(meta=meta, metrics=metrics)


def render_table(report: MetricReport) -> str:
    """Aligned text table: per-band relative errors per model, MMD pairs,
    diversity, per-channel mean discrepancies and the remaining globals."""
    m = report.metrics
    models = [name for name in MODEL_PREFIX if f"psd_l2_{name}" in m]
    bands = [b[0] for b in report.meta["bands"]]
    lines = []
    width = 14

    header = "band rel_err".ljust(width) + "".join(name.rjust(width) for name in models)
    lines.append(header)
    for band in bands:
        row = band.ljust(width)
        for name in models:
            row += f"{m[f'rel_err_{band}_{name}']:.6g}".rjust(width)
        lines.append(row)

    lines.append("")
    for key in ("psd_l2", "mmd_r", "cov_frob", "acf_l2", "one_nn_acc", "diversity"):
        row = key.ljust(width)
        for name in models:
            row += f"{m[f'{key}_{name}']:.6g}".rjust(width)
        lines.append(row)
    if "mmd_ddpm_wgan" in m:
        lines.append("mmd_ddpm_wgan".ljust(width) + f"{m['mmd_ddpm_wgan']:.6g}".rjust(width))
    lines.append("diversity_real".ljust(width) + f"{m['diversity_real']:.6g}".rjust(width))

    lines.append("")
    for name in models:
        p = MODEL_PREFIX[name]
        mu = m[f"{p}_mu_diff"]
        lines.append(f"{p}_mu_diff".ljust(width)
                     + " ".join(f"{v:+.4g}" for v in mu)
                     + f"   ({p}_mean_effect={m[f'{p}_mean_effect']:.6g})")
    for name in models:
        rec = m[f"knn_recovery_{name}"]
        per = " ".join(f"{c}:{(f'{a:.3f}' if a is not None else 'n/a')}"
                       for c, a in sorted(rec["per_class"].items()))
        lines.append(f"knn_{name}".ljust(width) + f"macro={rec['macro']:.4g}  {per}")
    return "\n".join(lines)
