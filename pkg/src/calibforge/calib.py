"""
Calibration Measurement and Temperature Scaling
===============================================

Metrics (accuracy, ECE, MCE, NLL, Brier), reliability-diagram bins, coverage curves,
variance-reliability histograms, and temperature scaling fitted by a bounded scalar search.

Confidence bins are half-open intervals ``((m−1)/M, m/M]``; a confidence of exactly 0
goes to the first bin. Per-bin sums are accumulated one record at a time in record order
(``np.add.at``), so :class:`CalibrationAccumulator` fed in chunks and
:func:`bin_predictions` on the whole set give bit-identical bins.

Example:
    >>> import numpy as np
    >>> from calibforge.calib import records_from_probs, evaluate_records
    >>> probs = np.array([[0.95, 0.05], [0.95, 0.05], [0.45, 0.55], [0.45, 0.55]])
    >>> report = evaluate_records(records_from_probs(probs, [0, 1, 1, 1]), n_bins=10)
    >>> round(report.ece, 2), round(report.mce, 2)
    (0.45, 0.45)
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .tensor import LOG_CLAMP, softmax_array

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
DEFAULT_BINS = 20
BIN_KEYS = ("max", "truth")

TAU_BOUNDS = (0.05, 20.0)
TAU_TOLERANCE = 1e-4


@dataclass(frozen=True)
class PredictionRecord:
    """
    One evaluated example.

    Attributes:
        example_id: Stable example id
        label: True class y_i
        predicted: Argmax class ŷ_i (lowest index on ties)
        confidence: Max score p_i
        scores: Full probability vector of length C
    """
    example_id: int
    label: int
    predicted: int
    confidence: float
    scores: np.ndarray = field(repr=False)

    @property
    def correct(self) -> bool:
        return self.predicted == self.label


def records_from_probs(probs, labels: Sequence[int],
                       ids: Optional[Sequence[int]] = None) -> List[PredictionRecord]:
    """
    Build records from a ``[N×C]`` probability matrix.

    Raises:
        ShapeError: If the label or id count does not match the rows
        ConfigError: If a row is not a distribution (within 1e-9) or a label is out of range
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"expected [N×C] scores and N labels, got {probs.shape} and {labels.shape}")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9) or np.any(probs < 0.0):
        raise ConfigError("scores must be probability vectors")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ConfigError(f"labels must lie in [0, {probs.shape[1]})")
    ids = np.arange(len(labels)) if ids is None else np.asarray(ids, dtype=np.int64)
    if ids.shape != labels.shape:
        raise ShapeError("ids must have one entry per record")
    predicted = probs.argmax(axis=1)
    confidence = probs[np.arange(len(probs)), predicted]
    return [
        PredictionRecord(int(i), int(y), int(p), float(c), row)
        for i, y, p, c, row in zip(ids, labels, predicted, confidence, probs)
    ]


def _columns(records: Sequence[PredictionRecord]) -> Tuple[np.ndarray, ...]:
    labels = np.array([r.label for r in records], dtype=np.int64)
    predicted = np.array([r.predicted for r in records], dtype=np.int64)
    confidence = np.array([r.confidence for r in records], dtype=np.float64)
    return labels, predicted, confidence


def _scores(records: Sequence[PredictionRecord]) -> np.ndarray:
    return np.stack([r.scores for r in records]) if records else np.zeros((0, 0))


# --- Binning ----------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationBin:
    """Interval ``(lo, hi]`` with its count, accuracy and mean confidence (0 when empty)."""
    lo: float
    hi: float
    count: int
    acc: float
    conf: float

    @property
    def gap(self) -> float:
        return abs(self.acc - self.conf)


def bin_index(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Zero-based bin of each value for intervals ``((m−1)/M, m/M]``; 0 maps to bin 0."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return np.clip(np.searchsorted(edges[1:], values, side="left"), 0, n_bins - 1)


class CalibrationAccumulator:
    """
    Streaming per-bin counts, correct counts and confidence sums.

    Args:
        n_bins: Number of bins M (default: 20)
        key: "max" bins by the predicted confidence p_i; "truth" by the score of the
            true label

    Example:
        >>> acc = CalibrationAccumulator(n_bins=20)
        >>> for chunk in chunks:
        ...     acc.update(chunk)
        >>> ece(acc.bins(), acc.total)
    """

    def __init__(self, n_bins: int = DEFAULT_BINS, key: str = "max"):
        if n_bins < 1:
            raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
        if key not in BIN_KEYS:
            raise ConfigError(f"unknown bin key {key!r}; choose one of {', '.join(BIN_KEYS)}")
        self.n_bins = n_bins
        self.key = key
        self._count = np.zeros(n_bins, dtype=np.int64)
        self._correct = np.zeros(n_bins, dtype=np.int64)
        self._conf_sum = np.zeros(n_bins, dtype=np.float64)

    @property
    def total(self) -> int:
        return int(self._count.sum())

    def update(self, records: Sequence[PredictionRecord]) -> None:
        if not records:
            return
        labels, predicted, confidence = _columns(records)
        if self.key == "max":
            keys = confidence
        else:
            keys = np.array([r.scores[r.label] for r in records], dtype=np.float64)
        idx = bin_index(keys, self.n_bins)
        np.add.at(self._count, idx, 1)
        np.add.at(self._correct, idx, (predicted == labels).astype(np.int64))
        np.add.at(self._conf_sum, idx, confidence)

    def bins(self) -> List[CalibrationBin]:
        out = []
        for m in range(self.n_bins):
            count = int(self._count[m])
            acc = self._correct[m] / count if count else 0.0
            conf = self._conf_sum[m] / count if count else 0.0
            out.append(CalibrationBin(m / self.n_bins, (m + 1) / self.n_bins, count,
                                      float(acc), float(conf)))
        return out


def bin_predictions(records: Sequence[PredictionRecord], n_bins: int = DEFAULT_BINS,
                    key: str = "max") -> List[CalibrationBin]:
    """Partition records into M equal-width confidence bins."""
    acc = CalibrationAccumulator(n_bins, key)
    acc.update(records)
    return acc.bins()


# --- Metrics ----------------------------------------------------------------


def ece(bins: Sequence[CalibrationBin], n_total: int) -> float:
    """
    Expected calibration error ``Σ_m (|B_m|/N′)·|acc − conf|``.

    Raises:
        ConfigError: If ``n_total`` is 0
    """
    if n_total <= 0:
        raise ConfigError("ECE is undefined for an empty record set")
    return float(sum((b.count / n_total) * b.gap for b in bins if b.count))


def mce(bins: Sequence[CalibrationBin]) -> float:
    """Maximum calibration error over nonempty bins (0 when all bins are empty)."""
    return float(max((b.gap for b in bins if b.count), default=0.0))


def nll_sum(records: Sequence[PredictionRecord]) -> float:
    return float(-sum(math.log(max(float(r.scores[r.label]), LOG_CLAMP)) for r in records))


def nll(records: Sequence[PredictionRecord]) -> float:
    """Mean negative log-likelihood of the true labels."""
    return nll_sum(records) / len(records) if records else 0.0


def brier_sum(records: Sequence[PredictionRecord]) -> float:
    if not records:
        return 0.0
    scores = _scores(records)
    onehot = np.zeros_like(scores)
    onehot[np.arange(len(records)), [r.label for r in records]] = 1.0
    return float(((scores - onehot) ** 2).sum())


def brier(records: Sequence[PredictionRecord]) -> float:
    """Mean over examples of ``Σ_j (p_j − 1[y = j])²``."""
    return brier_sum(records) / len(records) if records else 0.0


def accuracy(records: Sequence[PredictionRecord]) -> float:
    return float(np.mean([r.correct for r in records])) if records else 0.0


def coverage_curve(records: Sequence[PredictionRecord],
                   thresholds: Optional[Sequence[float]] = None) -> List[Tuple[float, float]]:
    """
    Fraction of all records that are correct with confidence ``>= t``, for each t.

    Args:
        records: Evaluated examples
        thresholds: Values in [0, 1] (default: 0, 0.05, ..., 1)
    """
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 21)
    if any(not 0.0 <= t <= 1.0 for t in thresholds):
        raise ConfigError("coverage thresholds must lie in [0, 1]")
    if not records:
        return [(float(t), 0.0) for t in thresholds]
    labels, predicted, confidence = _columns(records)
    correct = predicted == labels
    n = len(records)
    return [(float(t), float(np.count_nonzero(correct & (confidence >= t)) / n)) for t in thresholds]


@dataclass(frozen=True)
class VarianceBin:
    """Records whose α falls in ``[lo, hi)`` (the last bin is closed)."""
    lo: float
    hi: float
    count: int
    accuracy: float
    confidence: float
    coverage: float


def variance_histogram(alphas: Sequence[float], records: Sequence[PredictionRecord],
                       n_bins: int = 10) -> List[VarianceBin]:
    """
    Accuracy and mean confidence of records bucketed by normalised variance α.

    ``coverage`` is the cumulative fraction of records up to and including each bin.

    Raises:
        ShapeError: If there is not exactly one α per record
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (len(records),):
        raise ShapeError(f"expected {len(records)} alphas, got {alphas.shape}")
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    n = len(records)
    labels, predicted, confidence = _columns(records)
    correct = (predicted == labels).astype(np.float64)
    idx = np.clip(np.floor(alphas * n_bins).astype(np.int64), 0, n_bins - 1)
    out = []
    seen = 0
    for m in range(n_bins):
        members = idx == m
        count = int(members.sum())
        seen += count
        out.append(VarianceBin(
            lo=m / n_bins,
            hi=(m + 1) / n_bins,
            count=count,
            accuracy=float(correct[members].mean()) if count else 0.0,
            confidence=float(confidence[members].mean()) if count else 0.0,
            coverage=seen / n if n else 0.0,
        ))
    return out


def variance_reliability_correlation(alphas: Sequence[float],
                                     records: Sequence[PredictionRecord]) -> float:
    """Spearman rank correlation between α and the correctness indicator (NaN if constant)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (len(records),):
        raise ShapeError(f"expected {len(records)} alphas, got {alphas.shape}")
    correct = np.array([r.correct for r in records], dtype=np.float64)
    if len(records) < 2 or np.ptp(alphas) == 0.0 or np.ptp(correct) == 0.0:
        return float("nan")
    return float(stats.spearmanr(alphas, correct).correlation)


# --- Reports ----------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationReport:
    """
    All calibration metrics for one record set.

    NLL and Brier are per-example means; the raw sums are kept alongside.
    """
    n: int
    accuracy: float
    ece: float
    mce: float
    nll: float
    brier: float
    nll_sum: float
    brier_sum: float
    bins: List[CalibrationBin]
    coverage: List[Tuple[float, float]]
    bin_key: str = "max"

    def metrics(self) -> Dict[str, float]:
        return {"acc": self.accuracy, "ece": self.ece, "mce": self.mce,
                "nll": self.nll, "brier": self.brier}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "accuracy": self.accuracy,
            "ece": self.ece,
            "mce": self.mce,
            "nll": self.nll,
            "brier": self.brier,
            "nll_sum": self.nll_sum,
            "brier_sum": self.brier_sum,
            "n": self.n,
            "bin_key": self.bin_key,
            "bins": [asdict(b) for b in self.bins],
            "coverage": [{"t": t, "frac": f} for t, f in self.coverage],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CalibrationReport":
        try:
            return cls(
                n=int(d["n"]),
                accuracy=float(d["accuracy"]),
                ece=float(d["ece"]),
                mce=float(d["mce"]),
                nll=float(d["nll"]),
                brier=float(d["brier"]),
                nll_sum=float(d.get("nll_sum", d["nll"] * d["n"])),
                brier_sum=float(d.get("brier_sum", d["brier"] * d["n"])),
                bins=[CalibrationBin(**b) for b in d["bins"]],
                coverage=[(float(c["t"]), float(c["frac"])) for c in d["coverage"]],
                bin_key=d.get("bin_key", "max"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"malformed calibration report: {e}") from e


def evaluate_records(records: Sequence[PredictionRecord], n_bins: int = DEFAULT_BINS,
                     key: str = "max",
                     thresholds: Optional[Sequence[float]] = None) -> CalibrationReport:
    """Compute every metric for a nonempty record set."""
    if not records:
        raise ConfigError("cannot evaluate an empty record set")
    bins = bin_predictions(records, n_bins, key)
    n = len(records)
    report = CalibrationReport(
        n=n,
        accuracy=accuracy(records),
        ece=ece(bins, n),
        mce=mce(bins),
        nll=nll(records),
        brier=brier(records),
        nll_sum=nll_sum(records),
        brier_sum=brier_sum(records),
        bins=bins,
        coverage=coverage_curve(records, thresholds),
        bin_key=key,
    )
    logger.info("n=%d acc=%.4f ece=%.4f mce=%.4f nll=%.4f brier=%.4f",
                n, report.accuracy, report.ece, report.mce, report.nll, report.brier)
    return report


def write_report_json(path: Union[str, Path], report: CalibrationReport, **extra: Any) -> Path:
    path = Path(path)
    doc = report.to_dict()
    doc.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def read_report_json(path: Union[str, Path]) -> CalibrationReport:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: not a JSON report: {e}") from e
    return CalibrationReport.from_dict(doc)


# --- Score dumps ------------------------------------------------------------


def write_score_csv(path: Union[str, Path], ids: Sequence[int], labels: Sequence[int],
                    scores, column: str = "score") -> Path:
    """
    Write ``id,label,<column>_0,...`` rows; floats use the shortest round-trip repr.

    Used for prediction dumps (``column="score"``) and logit dumps (``column="logit"``).
    """
    scores = np.asarray(scores, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"{column}_{c}" for c in range(scores.shape[1])])
        for i, y, row in zip(ids, labels, scores):
            writer.writerow([int(i), int(y)] + [repr(float(v)) for v in row])
    return path


def read_score_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Read a dump written by :func:`write_score_csv`.

    Returns:
        ``(ids, labels, scores)``

    Raises:
        DataFormatError: On a bad header or malformed row
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:2] != ["id", "label"] or len(rows[0]) < 4:
        raise DataFormatError(f"{path}: expected header id,label,<score columns>")
    width = len(rows[0])
    ids, labels, scores = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
            labels.append(int(row[1]))
            scores.append([float(v) for v in row[2:]])
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: {e}") from e
    return np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64), np.array(scores)


# --- Temperature scaling ----------------------------------------------------


@dataclass(frozen=True)
class Temperature:
    """Global logit temperature τ > 0."""
    tau: float

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ConfigError(f"temperature must be a positive finite number, got {self.tau}")


def _check_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"expected logits [N×C], got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("logits contain NaN or Inf")
    return z


def apply_temperature(logits, tau: Union[float, Temperature]) -> np.ndarray:
    """``softmax(z / τ)`` row-wise; the argmax of every row is unchanged."""
    t = tau if isinstance(tau, Temperature) else Temperature(float(tau))
    return softmax_array(_check_logits(logits) / t.tau)


def temperature_nll(logits, labels: Sequence[int], tau: float) -> float:
    """Mean NLL of ``labels`` under ``softmax(z / τ)``."""
    z = _check_logits(logits) / tau
    y = np.asarray(labels, dtype=np.int64)
    return float(np.mean(logsumexp(z, axis=1) - z[np.arange(len(y)), y]))


def fit_temperature(logits, labels: Sequence[int], bounds: Tuple[float, float] = TAU_BOUNDS,
                    tol: float = TAU_TOLERANCE) -> Temperature:
    """
    Fit τ on a holdout set by minimising NLL over ``log τ ∈ [log lo, log hi]``.

    Uses scipy's bounded Brent search (golden-section steps with parabolic
    interpolation) to an absolute tolerance of ``tol`` in ``log τ``.
    The result never has higher holdout NLL than τ = 1.

    Raises:
        ConfigError: If the holdout set is empty
        NumericError: If the logits are not finite
    """
    z = _check_logits(logits)
    y = np.asarray(labels, dtype=np.int64)
    if len(z) == 0 or y.shape != (len(z),):
        raise ConfigError("fit_temperature needs a nonempty holdout set with one label per row")

    def objective(log_tau: float) -> float:
        return temperature_nll(z, y, math.exp(log_tau))

    result = optimize.minimize_scalar(
        objective,
        bounds=(math.log(bounds[0]), math.log(bounds[1])),
        method="bounded",
        options={"xatol": tol},
    )
    tau = math.exp(float(result.x))
    if float(result.fun) > objective(0.0):
        tau = 1.0
    logger.info("fitted temperature tau=%.4f on %d holdout examples", tau, len(z))
    return Temperature(tau)


__all__ = [
    "DEFAULT_BINS",
    "BIN_KEYS",
    "PredictionRecord",
    "CalibrationBin",
    "CalibrationAccumulator",
    "CalibrationReport",
    "VarianceBin",
    "Temperature",
    "records_from_probs",
    "bin_index",
    "bin_predictions",
    "ece",
    "mce",
    "nll",
    "nll_sum",
    "brier",
    "brier_sum",
    "accuracy",
    "coverage_curve",
    "variance_histogram",
    "variance_reliability_correlation",
    "evaluate_records",
    "write_report_json",
    "read_report_json",
    "write_score_csv",
    "read_score_csv",
    "apply_temperature",
    "temperature_nll",
    "fit_temperature",
]
