"""Quantitative evaluation: image metrics, grain statistics, and tracking.

RMSE and the global SSIM variant use the exact definitions the rest of
the project reports (SSIM with literal constants C1 = 0.01, C2 = 0.03 on
whole-image statistics, population variances). Grain statistics come from
threshold segmentation with optional periodic wrap; sizes are summarized
by the circular-equivalent radius R = sqrt(A/pi) and compared against the
Hillert mean-field distribution with its cutoff at rho = 2.
"""

import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .graingrowth import _minimal_circular_interval


# ---------------------------------------------------------------------------
# image metrics

def rmse(g, p):
    """Root-mean-square pixel error between two equal-size images."""
    g = np.asarray(g, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {p.shape}")
    return float(np.sqrt(np.mean((g - p) ** 2)))


def ssim(g, p, c1=0.01, c2=0.03):
    """Global structural similarity on whole-image statistics.

    Uses the literal regularization constants (not the conventional
    (K*L)^2 windowed form) and population variances, so identical images
    score exactly 1.
    """
    g = np.asarray(g, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {p.shape}")
    mu_g = g.mean()
    mu_p = p.mean()
    var_g = g.var()
    var_p = p.var()
    cov = np.mean((g - mu_g) * (p - mu_p))
    num = (2 * mu_g * mu_p + c1) * (2 * cov + c2)
    den = (mu_g ** 2 + mu_p ** 2 + c1) * (var_g + var_p + c2)
    return float(num / den)


# ---------------------------------------------------------------------------
# segmentation

@dataclass
class SegParams:
    threshold: float = 0.5
    connectivity: int = 4
    periodic: bool = True
    min_area: int = 4

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")


@dataclass
class GrainLabeling:
    """Integer label grid (0 = boundary) with per-grain areas and centroids."""

    labels: np.ndarray
    areas: np.ndarray       # pixel counts, index k-1 for grain k
    centroids: np.ndarray   # (row, col), periodic-aware means when wrapped
    periodic: bool = True

    @property
    def n_grains(self):
        return len(self.areas)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _periodic_centroid(coords, n):
    """Circular mean of integer coordinates on a ring of size n."""
    theta = coords * (2.0 * np.pi / n)
    s, c = np.sin(theta).mean(), np.cos(theta).mean()
    if s * s + c * c < 1e-12:
        return float(coords.mean())
    return float((math.atan2(s, c) % (2.0 * np.pi)) * n / (2.0 * np.pi))


def label_mask(mask, periodic=True, connectivity=4, min_area=1):
    """Connected components of a boolean mask, wrapping across edges.

    Components are labeled 1..K in order of first (row-major) appearance;
    components below min_area are dropped to label 0. Returns the label
    grid.
    """
    mask = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, n = ndimage.label(mask, structure=structure)
    if n and periodic:
        uf = _UnionFind(n + 1)
        top, bottom = labels[0, :], labels[-1, :]
        for a, b in zip(top, bottom):
            if a and b:
                uf.union(int(a), int(b))
        left, right = labels[:, 0], labels[:, -1]
        for a, b in zip(left, right):
            if a and b:
                uf.union(int(a), int(b))
        if connectivity == 8:
            w = labels.shape[1]
            for j in range(w):
                for b in (bottom[(j - 1) % w], bottom[(j + 1) % w]):
                    if top[j] and b:
                        uf.union(int(top[j]), int(b))
            h = labels.shape[0]
            for i in range(h):
                for b in (right[(i - 1) % h], right[(i + 1) % h]):
                    if left[i] and b:
                        uf.union(int(left[i]), int(b))
        roots = np.array([0] + [uf.find(k) for k in range(1, n + 1)])
        labels = roots[labels]
    if n:
        counts = np.bincount(labels.ravel())
        small = np.flatnonzero(counts < min_area)
        if small.size:
            wipe = np.isin(labels, small[small > 0])
            labels = np.where(wipe, 0, labels)
        # compact to 1..K in first-appearance order
        flat = labels.ravel()
        order = {}
        remap = np.zeros(labels.max() + 1, dtype=np.int32)
        for v in flat:
            if v and v not in order:
                order[v] = len(order) + 1
                remap[v] = order[v]
        labels = remap[labels]
    return labels.astype(np.int32)


def segment_grains(frame, seg=None):
    """Threshold a rendered field and label grains.

    The binary mask is (pixel >= threshold); components connect under
    4-connectivity by default, wrap across edges iff periodic, and
    components smaller than min_area are discarded as boundary noise.
    """
    seg = seg or SegParams()
    frame = np.asarray(frame)
    labels = label_mask(frame >= seg.threshold, seg.periodic, seg.connectivity,
                        seg.min_area)
    return labeling_from_labels(labels, seg.periodic)


def labeling_from_labels(labels, periodic=True):
    k = int(labels.max())
    areas = np.zeros(k, dtype=np.int64)
    centroids = np.zeros((k, 2))
    h, w = labels.shape
    for g in range(1, k + 1):
        rows, cols = np.nonzero(labels == g)
        areas[g - 1] = len(rows)
        if periodic:
            centroids[g - 1] = (_periodic_centroid(rows, h), _periodic_centroid(cols, w))
        else:
            centroids[g - 1] = (rows.mean(), cols.mean())
    return GrainLabeling(labels, areas, centroids, periodic)


# ---------------------------------------------------------------------------
# grain statistics

def grain_size_distribution(labeling, n_bins=25, rho_max=2.5):
    """Density-normalized histogram of rho = R/<R>, R = sqrt(A/pi).

    Returns (densities, bin_edges) over uniform bins on [0, rho_max].
    """
    if labeling.n_grains < 1:
        raise ValueError("no grains to histogram")
    radii = np.sqrt(labeling.areas / np.pi)
    rho = radii / radii.mean()
    hist, edges = np.histogram(rho, bins=n_bins, range=(0.0, rho_max), density=True)
    return hist, edges


def hillert_reference(rho, lam=2):
    """Hillert mean-field grain-size density; identically 0 for rho >= 2."""
    rho = np.asarray(rho, dtype=np.float64)
    out = np.zeros_like(rho)
    inside = (rho > 0) & (rho < 2)
    r = rho[inside]
    out[inside] = ((2 * np.e) ** lam) * lam * r / (2 - r) ** (2 + lam) \
        * np.exp(-2 * lam * r / (2 - r))
    return out if out.ndim else float(out)


def mean_area_series(frames, every=10, seg=None, dx=1.0, dy=1.0):
    """Mean grain area (pixels * dx*dy) on every `every`-th frame.

    Frames that segment to zero grains are omitted with a warning.
    """
    seg = seg or SegParams()
    series = []
    for k in range(0, len(frames), every):
        lab = segment_grains(frames[k], seg)
        if lab.n_grains == 0:
            warnings.warn(f"frame {k}: no grains above threshold, omitted")
            continue
        series.append((k, float(lab.areas.mean() * dx * dy)))
    return series


def linear_fit(series):
    """Ordinary least squares of value on index: (slope, intercept, R^2).

    A constant series fits perfectly (zero residual), so R^2 = 1 there.
    """
    pts = np.asarray(series, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    sx = x - x.mean()
    denom = np.dot(sx, sx)
    if denom == 0:
        raise ValueError("degenerate fit: constant x")
    slope = np.dot(sx, y - y.mean()) / denom
    intercept = y.mean() - slope * x.mean()
    resid = y - (slope * x + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(y - y.mean(), y - y.mean()))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# topology and tracking

def grain_adjacency(labeling, max_gap=5):
    """Count distinct neighbors per grain.

    Two grains are adjacent when marching from one along a grid axis
    crosses at most max_gap pixels of pure boundary (label 0) before
    entering the other. Returns counts indexed by label (entry 0 unused).
    """
    labels = labeling.labels
    periodic = labeling.periodic
    k = int(labels.max())
    partners = [set() for _ in range(k + 1)]
    h, w = labels.shape
    for axis, sign in ((0, 1), (0, -1), (1, 1), (1, -1)):
        alive = labels > 0
        for s in range(1, max_gap + 1):
            target = np.roll(labels, -sign * s, axis=axis)
            valid = np.ones_like(alive)
            if not periodic:
                if axis == 0:
                    sl = np.s_[-s:, :] if sign > 0 else np.s_[:s, :]
                else:
                    sl = np.s_[:, -s:] if sign > 0 else np.s_[:, :s]
                valid[sl] = False
            hit = alive & valid & (target != 0)
            if hit.any():
                pairs = np.unique(labels[hit].astype(np.int64) * (k + 1) + target[hit])
                for code in pairs:
                    a, b = divmod(int(code), k + 1)
                    if a != b:
                        partners[a].add(b)
                        partners[b].add(a)
            alive = alive & valid & (target == 0)
            if not alive.any():
                break
    return np.array([len(p) for p in partners], dtype=np.int64)


def _associate(prev_centroid, labeling, gate, shape):
    """Index of the grain whose centroid is nearest (periodic-aware)."""
    if labeling.n_grains == 0:
        return None
    delta = labeling.centroids - np.asarray(prev_centroid)
    if labeling.periodic:
        h, w = shape
        delta[:, 0] = (delta[:, 0] + h / 2) % h - h / 2
        delta[:, 1] = (delta[:, 1] + w / 2) % w - w / 2
    dist = np.hypot(delta[:, 0], delta[:, 1])
    j = int(np.argmin(dist))
    return j if dist[j] <= gate else None


def vnm_diagnostic(frames, every=10, seg=None, gate=10.0, min_matched=10):
    """Correlation between dA/dt and (N - 6) for grains tracked over time.

    Positive correlation is the qualitative von Neumann-Mullins signature
    (the proportionality constant is not estimated). Returns None with a
    warning when fewer than min_matched grains can be tracked.
    """
    seg = seg or SegParams()
    samples = list(range(0, len(frames), every))
    da_dt = []
    n_minus_6 = []
    for k1, k2 in zip(samples, samples[1:]):
        lab1 = segment_grains(frames[k1], seg)
        lab2 = segment_grains(frames[k2], seg)
        if lab1.n_grains == 0 or lab2.n_grains == 0:
            continue
        neighbors = grain_adjacency(lab1)
        for g in range(lab1.n_grains):
            j = _associate(lab1.centroids[g], lab2, gate, frames[k1].shape)
            if j is None:
                continue
            da_dt.append((float(lab2.areas[j]) - float(lab1.areas[g])) / (k2 - k1))
            n_minus_6.append(neighbors[g + 1] - 6.0)
    if len(da_dt) < min_matched:
        warnings.warn(f"only {len(da_dt)} matched grains; need {min_matched}")
        return None
    da = np.asarray(da_dt)
    nm = np.asarray(n_minus_6)
    if da.std() == 0 or nm.std() == 0:
        return 0.0
    return float(np.corrcoef(da, nm)[0, 1])


def track_particle(frames, seed_centroid, phase="high", seg=None, gate=10.0):
    """Follow one particle by nearest-neighbor centroid association.

    phase selects which side of the threshold to segment ("high" for
    above, "low" for below). The track records (frame, centroid, area,
    bounding box) and ends when the nearest centroid jumps beyond the
    gate or the particle vanishes.
    """
    seg = seg or SegParams()
    if phase not in ("high", "low"):
        raise ValueError("phase must be 'high' or 'low'")
    track = []
    prev = np.asarray(seed_centroid, dtype=np.float64)
    for k, frame in enumerate(frames):
        frame = np.asarray(frame)
        mask = frame >= seg.threshold if phase == "high" else frame < seg.threshold
        labels = label_mask(mask, seg.periodic, seg.connectivity, seg.min_area)
        lab = labeling_from_labels(labels, seg.periodic)
        if k == 0:
            r, c = int(round(prev[0])) % frame.shape[0], int(round(prev[1])) % frame.shape[1]
            if labels[r, c] == 0:
                raise ValueError(f"seed centroid {tuple(prev)} is not inside a particle")
            j = int(labels[r, c]) - 1
        else:
            j = _associate(prev, lab, gate, frame.shape)
            if j is None:
                break
        comp = labels == (j + 1)
        r0, rlen = _minimal_circular_interval(comp.any(axis=1))
        c0, clen = _minimal_circular_interval(comp.any(axis=0))
        track.append({
            "frame": k,
            "centroid": (float(lab.centroids[j][0]), float(lab.centroids[j][1])),
            "area": int(lab.areas[j]),
            "bbox": (int(r0), int(rlen), int(c0), int(clen)),
        })
        prev = lab.centroids[j]
    return track


def savitzky_golay(series, window=11, order=2):
    """Least-squares polynomial smoothing with shrunken windows at edges."""
    y = np.asarray(series, dtype=np.float64)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if order >= window:
        raise ValueError("order must be smaller than window")
    if len(y) < window:
        raise ValueError("series shorter than window")
    half = window // 2
    out = np.empty_like(y)
    for i in range(len(y)):
        lo = max(0, i - half)
        hi = min(len(y), i + half + 1)
        x = np.arange(lo, hi, dtype=np.float64) - i
        deg = min(order, hi - lo - 1)
        coeffs = np.polyfit(x, y[lo:hi], deg)
        out[i] = coeffs[-1]
    return out


# ---------------------------------------------------------------------------
# report assembly

@dataclass
class EvalReport:
    """Per-frame metric series plus grain statistics for one prediction."""

    rmse_series: list = field(default_factory=list)
    ssim_series: list = field(default_factory=list)
    gsd_pred: list = field(default_factory=list)
    gsd_truth: list = field(default_factory=list)
    mean_area_pred: list = field(default_factory=list)
    mean_area_truth: list = field(default_factory=list)
    trend_pred: tuple = None
    trend_truth: tuple = None
    particle_tracks: list = field(default_factory=list)
    seg_params: dict = field(default_factory=dict)
    every: int = 5

    def to_dict(self):
        return {
            "every": self.every,
            "seg_params": self.seg_params,
            "rmse_series": [[int(k), v] for k, v in self.rmse_series],
            "ssim_series": [[int(k), v] for k, v in self.ssim_series],
            "gsd_pred": [
                {"frame": int(k), "density": list(h), "bin_edges": list(e)}
                for k, h, e in self.gsd_pred
            ],
            "gsd_truth": [
                {"frame": int(k), "density": list(h), "bin_edges": list(e)}
                for k, h, e in self.gsd_truth
            ],
            "mean_area_pred": [[int(k), v] for k, v in self.mean_area_pred],
            "mean_area_truth": [[int(k), v] for k, v in self.mean_area_truth],
            "trend_pred": list(self.trend_pred) if self.trend_pred else None,
            "trend_truth": list(self.trend_truth) if self.trend_truth else None,
            "particle_tracks": self.particle_tracks,
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_series_csv(self, path):
        rows = {k: [v, None, None, None] for k, v in self.rmse_series}
        for k, v in self.ssim_series:
            rows.setdefault(k, [None] * 4)[1] = v
        for k, v in self.mean_area_pred:
            rows.setdefault(k, [None] * 4)[2] = v
        for k, v in self.mean_area_truth:
            rows.setdefault(k, [None] * 4)[3] = v
        with open(path, "w") as fh:
            fh.write("frame,rmse,ssim,mean_area_pred,mean_area_truth\n")
            for k in sorted(rows):
                cells = ["" if v is None else f"{v:.10g}" for v in rows[k]]
                fh.write(f"{k}," + ",".join(cells) + "\n")


def score_prediction(pred, truth, every=5, seg=None, gsd_frames=None,
                     mean_area_every=10, grain_stats=True):
    """Assemble an EvalReport for a predicted trajectory against truth.

    RMSE/SSIM are evaluated on frames 0, every, 2*every, ... relative to
    the start of the prediction. Grain statistics (GSD snapshots, mean
    grain area, coarsening trends) are included when grain_stats is set.
    """
    pred = np.asarray(pred.frames if hasattr(pred, "frames") else pred, dtype=np.float64)
    truth = np.asarray(truth.frames if hasattr(truth, "frames") else truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    seg = seg or SegParams()
    report = EvalReport(every=every, seg_params=asdict(seg))
    for k in range(0, pred.shape[0], every):
        report.rmse_series.append((k, rmse(truth[k], pred[k])))
        report.ssim_series.append((k, ssim(truth[k], pred[k])))
    if grain_stats:
        for k in (gsd_frames or []):
            if not 0 <= k < pred.shape[0]:
                raise ValueError(f"GSD frame {k} outside trajectory of {pred.shape[0]}")
            for frames, dest in ((pred, report.gsd_pred), (truth, report.gsd_truth)):
                lab = segment_grains(frames[k], seg)
                if lab.n_grains:
                    hist, edges = grain_size_distribution(lab)
                    dest.append((k, hist, edges))
        report.mean_area_pred = mean_area_series(pred, mean_area_every, seg)
        report.mean_area_truth = mean_area_series(truth, mean_area_every, seg)
        if len(report.mean_area_pred) >= 3:
            report.trend_pred = linear_fit(report.mean_area_pred)
        if len(report.mean_area_truth) >= 3:
            report.trend_truth = linear_fit(report.mean_area_truth)
    return report
