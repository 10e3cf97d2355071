"""Sample-quality and diagnostics metrics.

Fréchet distance is computed on raw coordinates (the desk-scale analog of
FID; not comparable to feature-space FID numbers).  Precision/recall use the
standard k-NN manifold estimate.  class_fidelity stands in for a fidelity
score: the fraction of samples a zero-noise oracle classifier assigns to
their target class.
"""

import csv
from dataclasses import dataclass

import numpy as np

METRICS_CSV_HEADER = ["frechet", "precision", "recall", "class_accuracy",
                      "n_generated", "n_reference", "config"]
COV_REGULARIZER = 1e-10


@dataclass(frozen=True)
class MetricsReport:
    frechet: float
    precision: float
    recall: float
    class_accuracy: float
    n_generated: int
    n_reference: int
    config: str = ""

    def __post_init__(self):
        for name in ("frechet", "precision", "recall", "class_accuracy"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} is not finite: {v}")
        if self.frechet < 0:
            raise ValueError("frechet must be nonnegative")
        for name in ("precision", "recall", "class_accuracy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def csv_row(self):
        return [repr(self.frechet), repr(self.precision), repr(self.recall),
                repr(self.class_accuracy), self.n_generated, self.n_reference,
                self.config]

    def text_block(self) -> str:
        return (f"frechet          {self.frechet:.6g}\n"
                f"precision        {self.precision:.4f}\n"
                f"recall           {self.recall:.4f}\n"
                f"class_fidelity   {self.class_accuracy:.4f}\n"
                f"n_generated      {self.n_generated}\n"
                f"n_reference      {self.n_reference}\n")


def _sqrtm_psd(c):
    vals, vecs = np.linalg.eigh(c)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(generated, reference, regularize: bool = True) -> float:
    """||mu_g - mu_r||^2 + Tr(C_g + C_r - 2 (C_g C_r)^{1/2}).

    The cross term uses the symmetrized form
    Tr sqrt(C_g^{1/2} C_r C_g^{1/2}) via eigendecompositions.
    """
    g = np.asarray(generated, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    d = g.shape[1]
    if not regularize and (len(g) < d + 1 or len(r) < d + 1):
        raise ValueError("need at least D + 1 points per cloud (or regularize)")
    mu_g, mu_r = g.mean(axis=0), r.mean(axis=0)
    eye = COV_REGULARIZER * np.eye(d)
    c_g = np.cov(g, rowvar=False).reshape(d, d) + eye
    c_r = np.cov(r, rowvar=False).reshape(d, d) + eye
    root_g = _sqrtm_psd(c_g)
    inner = root_g @ c_r @ root_g
    cross = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)))
    diff = mu_g - mu_r
    val = float(diff @ diff + np.trace(c_g) + np.trace(c_r) - 2.0 * cross)
    return max(val, 0.0)


def _kth_nn_radius(points, k):
    d2 = _pairwise_sq(points, points)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])


def _pairwise_sq(a, b):
    return (np.sum(a * a, axis=1)[:, None] - 2.0 * a @ b.T
            + np.sum(b * b, axis=1)[None, :])


def knn_precision_recall(generated, reference, k: int = 3):
    """Manifold-estimate precision/recall.

    precision: fraction of generated points inside the union of reference
    k-NN balls; recall: the same with the roles swapped.
    """
    g = np.asarray(generated, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(g) <= k or len(r) <= k:
        raise ValueError("both sets need more than k points")
    radius_r = _kth_nn_radius(r, k)
    radius_g = _kth_nn_radius(g, k)
    d2 = _pairwise_sq(g, r)
    d = np.sqrt(np.maximum(d2, 0.0))
    precision = float(np.mean(np.any(d <= radius_r[None, :], axis=1)))
    recall = float(np.mean(np.any(d <= radius_g[:, None], axis=0)))
    return precision, recall


def class_fidelity(generated, targets, oracle_classifier) -> float:
    """Fraction of samples the zero-noise oracle classifies as their target."""
    predicted = oracle_classifier.predict(np.asarray(generated, dtype=np.float64), 0)
    return float(np.mean(predicted == np.asarray(targets)))


def norm_curve_summary(logs):
    """Mean ||s A_t|| per step across chains and the last/first-decile ratio.

    Returns {"per_step_mean", "ratio", "degenerate"}; a flat-zero curve
    (no guidance) reports ratio 1 with the degenerate flag set.
    """
    if not logs:
        raise ValueError("no trajectory logs")
    steps = len(logs[0].adjustment_norms)
    if any(len(log.adjustment_norms) != steps for log in logs):
        raise ValueError("trajectory logs have mixed step counts")
    per_step = np.mean(np.stack([log.adjustment_norms for log in logs]), axis=0)
    n10 = max(1, steps // 10)
    first = float(np.mean(per_step[:n10]))
    last = float(np.mean(per_step[-n10:]))
    degenerate = first == 0.0
    ratio = 1.0 if degenerate else last / first
    return {"per_step_mean": per_step, "ratio": ratio, "degenerate": degenerate}


def distance_law_fit(traces, min_noise: float = 0.1):
    """Relative error of measured manifold distances against
    sqrt((1 - abar_t) D).

    ``traces``: one list of {t, alpha_bar, d_hat, d_theory} per chain/draw.
    Returns per-t medians plus the pooled median over entries with
    1 - abar_t >= min_noise.
    """
    by_t = {}
    pooled = []
    for trace in traces:
        for rec in trace:
            err = abs(rec["d_hat"] - rec["d_theory"]) / rec["d_theory"]
            by_t.setdefault(rec["t"], []).append(err)
            if 1.0 - rec["alpha_bar"] >= min_noise:
                pooled.append(err)
    table = [{"t": t, "median_rel_error": float(np.median(errs)),
              "n": len(errs)} for t, errs in sorted(by_t.items())]
    aggregate = float(np.median(pooled)) if pooled else float("nan")
    return {"aggregate_median": aggregate, "per_t": table}


def write_metrics_csv(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for report in reports:
            writer.writerow(report.csv_row())
