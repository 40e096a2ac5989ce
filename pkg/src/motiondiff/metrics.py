"""Evaluation metrics for generated-vs-reference motion sets.

Frechet distance and kernel MMD on extracted feature vectors, kNN-manifold
precision/recall, random-pair diversity, and a temporal smoothness score.
The feature extractor is pluggable; the default flatten_extractor summarizes
a clip's joint-position trajectories with simple statistics, so no
pretrained network is required.
"""

import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .errors import NumericError


@dataclass
class MetricReport:
    fid: float
    kid: float
    precision: float
    recall: float
    diversity: float
    smoothness: float
    num_real: int
    num_generated: int
    extractor: str

    def to_dict(self):
        return asdict(self)


def fid(features_real, features_gen):
    """Frechet distance between Gaussian fits of the two feature sets.

    |mu_r - mu_g|^2 + tr(S_r + S_g - 2 (S_r S_g)^(1/2)), with the matrix
    square root taken by eigendecomposition of the symmetrized product;
    eigenvalues below a -1e-8 relative tolerance raise, small negatives
    clip to zero.
    """
    fr = _check_features(features_real, "features_real")
    fg = _check_features(features_gen, "features_gen")
    d = fr.shape[1]
    if fr.shape[0] <= d or fg.shape[0] <= d:
        warnings.warn(
            f"sample count ({fr.shape[0]}, {fg.shape[0]}) not above feature dim {d}; "
            "covariances are rank deficient",
            stacklevel=2,
        )
    mu_r, mu_g = fr.mean(axis=0), fg.mean(axis=0)
    cov_r = np.cov(fr, rowvar=False)
    cov_g = np.cov(fg, rowvar=False)
    cov_r = np.atleast_2d(cov_r)
    cov_g = np.atleast_2d(cov_g)

    sqrt_r = _psd_sqrt(cov_r)
    product = sqrt_r @ cov_g @ sqrt_r
    product = 0.5 * (product + product.T)
    eigvals = _clipped_eigvals(product)
    trace_sqrt = np.sqrt(eigvals).sum()

    value = (
        float(np.sum((mu_r - mu_g) ** 2))
        + float(np.trace(cov_r) + np.trace(cov_g) - 2.0 * trace_sqrt)
    )
    return max(value, 0.0)


def polynomial_kernel(x, y, degree=3):
    """(x . y / d + 1)^degree, the standard KID kernel."""
    d = x.shape[-1]
    return (x @ y.T / d + 1.0) ** degree


def kid(features_real, features_gen):
    """Squared MMD with the degree-3 polynomial kernel, unbiased estimator.

    May be slightly negative for matching sets; that is the unbiasedness,
    not a bug.
    """
    fr = _check_features(features_real, "features_real")
    fg = _check_features(features_gen, "features_gen")
    n, m = fr.shape[0], fg.shape[0]
    if n < 2 or m < 2:
        raise ValueError("kid needs at least 2 samples per set")
    kxx = polynomial_kernel(fr, fr)
    kyy = polynomial_kernel(fg, fg)
    kxy = polynomial_kernel(fr, fg)
    sum_xx = kxx.sum() - np.trace(kxx)
    sum_yy = kyy.sum() - np.trace(kyy)
    return float(
        sum_xx / (n * (n - 1)) + sum_yy / (m * (m - 1)) - 2.0 * kxy.mean()
    )


def precision_recall(features_real, features_gen, k=3):
    """kNN-manifold precision (fidelity) and recall (coverage).

    A point belongs to a set's manifold if it lies within (inclusive) the
    k-th nearest-neighbor radius of any point of that set.
    """
    fr = _check_features(features_real, "features_real")
    fg = _check_features(features_gen, "features_gen")
    n, m = fr.shape[0], fg.shape[0]
    if n <= k or m <= k:
        raise ValueError(f"need more than k={k} samples in each set")
    radii_r = _knn_radii(fr, k)
    radii_g = _knn_radii(fg, k)
    d_rg = _pairwise_distances(fr, fg)
    precision = float(np.mean(np.any(d_rg <= radii_r[:, None], axis=0)))
    recall = float(np.mean(np.any(d_rg.T <= radii_g[:, None], axis=0)))
    return precision, recall


def diversity(features_real, features_gen, subset_size=200, rng=None):
    """Mean L2 distance over subset_size random pairs of the two sets.

    Equal-sized sets share one index draw, so pairing is index-aligned and
    uniformly offset sets score exactly the offset norm; different sizes
    fall back to independent draws.
    """
    fr = _check_features(features_real, "features_real")
    fg = _check_features(features_gen, "features_gen")
    if fr.shape[0] < subset_size or fg.shape[0] < subset_size:
        raise ValueError(f"both sets need at least subset_size={subset_size} samples")
    if rng is None:
        rng = np.random.default_rng(0)
    idx_r = rng.choice(fr.shape[0], size=subset_size, replace=False)
    if fg.shape[0] == fr.shape[0]:
        idx_g = idx_r
    else:
        idx_g = rng.choice(fg.shape[0], size=subset_size, replace=False)
    return float(np.mean(np.linalg.norm(fr[idx_r] - fg[idx_g], axis=1)))


def smoothness(feature_matrices, alpha=1.0):
    """Mean of exp(-alpha * |second difference|) over clips, features, time.

    Accepts FeatureMatrix objects or plain (D, N) arrays; every clip needs
    at least 3 frames. 1.0 for constant or linear-in-time signals.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    per_pair = []
    for fm in feature_matrices:
        data = np.asarray(getattr(fm, "data", fm), dtype=float)
        if data.ndim != 2:
            raise ValueError("each clip must be a (D, N) array")
        if data.shape[1] < 3:
            raise ValueError("smoothness needs at least 3 frames per clip")
        accel = data[:, 2:] - 2.0 * data[:, 1:-1] + data[:, :-2]
        per_pair.append(np.exp(-alpha * np.abs(accel)).mean(axis=1))
    if not per_pair:
        raise ValueError("empty clip set")
    return float(np.concatenate(per_pair).mean())


def flatten_extractor(positions):
    """Statistical stand-in for a learned extractor: per joint coordinate,
    the mean, standard deviation, and mean absolute frame difference over
    time. positions: (N, J, 3); returns (9 * J,)."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 3 or positions.shape[2] != 3:
        raise ValueError("positions must be (N, J, 3)")
    series = positions.reshape(positions.shape[0], -1)  # (N, J*3)
    means = series.mean(axis=0)
    stds = series.std(axis=0)
    if series.shape[0] >= 2:
        diffs = np.abs(np.diff(series, axis=0)).mean(axis=0)
    else:
        diffs = np.zeros_like(means)
    return np.concatenate([means, stds, diffs])


FLATTEN_EXTRACTOR_ID = "flatten-stats-v1"


def extract_features(position_clips, extractor=flatten_extractor):
    """Stack per-clip extractor outputs into an (n, d) feature array."""
    feats = [np.asarray(extractor(p), dtype=float) for p in position_clips]
    lengths = {f.shape for f in feats}
    if len(lengths) != 1:
        raise ValueError(f"extractor produced inconsistent lengths: {lengths}")
    return np.stack(feats, axis=0)


def evaluate(real_positions, gen_positions, extractor=flatten_extractor,
             extractor_id=FLATTEN_EXTRACTOR_ID, k=3, subset_size=200,
             alpha=1.0, rng=None):
    """All five metrics plus generated-set smoothness, as a MetricReport.

    Both inputs are lists of (N, J, 3) world-position clips; each clip is
    anchored to its first-frame root joint before extraction so scores do
    not depend on absolute world placement. Smoothness is computed on the
    generated clips' position trajectories.
    """
    real_anchored = [np.asarray(c, dtype=float) for c in real_positions]
    real_anchored = [c - c[0, 0] for c in real_anchored]
    gen_anchored = [np.asarray(c, dtype=float) for c in gen_positions]
    gen_anchored = [c - c[0, 0] for c in gen_anchored]
    fr = extract_features(real_anchored, extractor)
    fg = extract_features(gen_anchored, extractor)
    prec, rec = precision_recall(fr, fg, k=k)
    subset = min(subset_size, fr.shape[0], fg.shape[0])
    smooth_in = [c.reshape(c.shape[0], -1).T for c in gen_anchored]
    return MetricReport(
        fid=fid(fr, fg),
        kid=kid(fr, fg),
        precision=prec,
        recall=rec,
        diversity=diversity(fr, fg, subset_size=subset, rng=rng),
        smoothness=smoothness(smooth_in, alpha=alpha),
        num_real=fr.shape[0],
        num_generated=fg.shape[0],
        extractor=extractor_id,
    )


def _check_features(features, name):
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be (n, d)")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _pairwise_distances(a, b):
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


def _knn_radii(points, k):
    """Distance to the k-th nearest other point, per point."""
    d = _pairwise_distances(points, points)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def _psd_sqrt(matrix):
    eigvals, eigvecs = np.linalg.eigh(matrix)
    eigvals = _clip_negatives(eigvals)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def _clipped_eigvals(matrix):
    return _clip_negatives(np.linalg.eigvalsh(matrix))


def _clip_negatives(eigvals, rel_tol=1e-8):
    tol = rel_tol * max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    if np.any(eigvals < -tol):
        raise NumericError(
            f"matrix square root failed: eigenvalue {eigvals.min():.3e} below -{tol:.1e}"
        )
    return np.clip(eigvals, 0.0, None)
