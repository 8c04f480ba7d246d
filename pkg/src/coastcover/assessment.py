"""Random-point accuracy assessment: confusion matrices and per-class metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .raster_model import ClassScheme, LabelRaster, MaskRaster, RasterError


class AssessmentError(ValueError):
    pass


@dataclass(frozen=True)
class PointSample:
    """Sampled pixel coordinates, sorted row-major; ``points`` is (n, 2) of (col, row)."""

    points: np.ndarray
    seed: int
    n_requested: int

    def __len__(self) -> int:
        return len(self.points)

    @property
    def cols(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def rows(self) -> np.ndarray:
        return self.points[:, 1]


def sample_points(mask: MaskRaster, n: int, seed: int) -> PointSample:
    """Draw ``n`` distinct valid pixels uniformly without replacement."""
    if n < 1:
        raise AssessmentError(f"number of points must be >= 1, got {n}")
    flat_valid = np.flatnonzero(mask.valid.ravel())
    if n > flat_valid.size:
        raise AssessmentError(
            f"requested {n} points but the mask has only {flat_valid.size} valid pixels")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    picked = np.sort(flat_valid[rng.choice(flat_valid.size, size=n, replace=False)])
    rows, cols = np.divmod(picked, mask.width)
    return PointSample(np.stack([cols, rows], axis=1), int(seed), n)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed [reference, predicted] over ``classes``.

    ``skipped`` counts sample points dropped because either raster was masked.
    """

    counts: np.ndarray
    classes: tuple[str, ...]
    skipped: int = 0

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] != len(self.classes):
            raise AssessmentError(f"confusion counts must be square over {len(self.classes)} classes")
        if (c < 0).any():
            raise AssessmentError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index_of(self, key: int | str) -> int:
        if isinstance(key, str):
            try:
                return self.classes.index(key)
            except ValueError:
                raise AssessmentError(f"unknown class {key!r}") from None
        if not 0 <= key < len(self.classes):
            raise AssessmentError(f"invalid class id {key}")
        return int(key)


def build_confusion(reference: LabelRaster, predicted: LabelRaster,
                    sample: PointSample) -> ConfusionMatrix:
    if (reference.width, reference.height) != (predicted.width, predicted.height):
        raise AssessmentError(
            f"dimension mismatch: reference {reference.width}x{reference.height}, "
            f"predicted {predicted.width}x{predicted.height}")
    if reference.scheme.ids != predicted.scheme.ids or reference.scheme.masked_id != predicted.scheme.masked_id:
        raise AssessmentError("reference and predicted use different class schemes")
    scheme = reference.scheme
    k = len(scheme)
    ref = reference.labels[sample.rows, sample.cols].astype(np.int64)
    pred = predicted.labels[sample.rows, sample.cols].astype(np.int64)
    use = (ref != scheme.masked_id) & (pred != scheme.masked_id)
    counts = np.bincount(ref[use] * k + pred[use], minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, scheme.names, int((~use).sum()))


def _require_points(cm: ConfusionMatrix) -> int:
    total = cm.total
    if total == 0:
        raise AssessmentError("confusion matrix is empty")
    return total


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = _require_points(cm)
    return float(np.trace(cm.counts)) / total


def cohen_kappa(cm: ConfusionMatrix) -> float | None:
    """Cohen's kappa; ``None`` when chance agreement is 1."""
    total = _require_points(cm)
    p_o = float(np.trace(cm.counts)) / total
    rows = cm.counts.sum(axis=1)
    cols = cm.counts.sum(axis=0)
    p_e = float((rows * cols).sum()) / (total * total)
    if p_e == 1.0:
        return None
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class ClassAccuracy:
    name: str
    producers_accuracy: float | None
    users_accuracy: float | None
    rand_accuracy: float | None
    reference_count: int
    predicted_count: int


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def per_class_metrics(cm: ConfusionMatrix) -> list[ClassAccuracy]:
    """Producer's (recall), user's (precision) and rand accuracy per class.

    Rand accuracy is (TP+TN)/(TP+TN+FP+FN) for the class against the rest.
    A zero denominator yields ``None`` rather than 0.
    """
    total = _require_points(cm)
    c = cm.counts
    out = []
    for i, name in enumerate(cm.classes):
        tp = int(c[i, i])
        row = int(c[i, :].sum())
        col = int(c[:, i].sum())
        fn, fp = row - tp, col - tp
        tn = total - tp - fn - fp
        out.append(ClassAccuracy(name, _ratio(tp, tp + fn), _ratio(tp, tp + fp),
                                 _ratio(tp + tn, tp + tn + fp + fn), row, col))
    return out


def merge_classes(cm: ConfusionMatrix, members: Iterable[int | str],
                  name: str | None = None) -> ConfusionMatrix:
    """Sum the rows and columns of ``members`` into one class.

    The merged class takes the place of the first member; other classes keep
    their relative order.
    """
    idx = [cm.index_of(m) for m in members]
    if not idx:
        raise AssessmentError("merge group is empty")
    if len(set(idx)) != len(idx):
        raise AssessmentError("merge group lists a class twice")
    name = name or "+".join(cm.classes[i] for i in idx)
    first = min(idx)
    keep = [i for i in range(len(cm.classes)) if i not in idx or i == first]
    # projection matrix: old class -> new class
    proj = np.zeros((len(cm.classes), len(keep)), dtype=np.int64)
    for new, old in enumerate(keep):
        proj[old, new] = 1
    for i in idx:
        proj[i, keep.index(first)] = 1
    counts = proj.T @ cm.counts @ proj
    classes = tuple(name if old == first else cm.classes[old] for old in keep)
    return ConfusionMatrix(counts, classes, cm.skipped)


@dataclass
class AssessmentView:
    """Metrics for one class layout (e.g. with or without merged vegetation)."""

    name: str
    matrix: ConfusionMatrix
    overall: float
    kappa: float | None
    classes: list[ClassAccuracy] = field(default_factory=list)

    @classmethod
    def from_matrix(cls, name: str, cm: ConfusionMatrix) -> "AssessmentView":
        return cls(name, cm, overall_accuracy(cm), cohen_kappa(cm), per_class_metrics(cm))


@dataclass
class AssessmentResult:
    n_requested: int
    seed: int
    used: int
    skipped: int
    views: list[AssessmentView]


def assess(reference: LabelRaster, predicted: LabelRaster, mask: MaskRaster | None,
           n: int, seed: int, scheme: ClassScheme | None = None) -> AssessmentResult:
    """Sample, tally and score, for the per-class view and each merge group.

    Without ``mask`` the points are drawn over the reference map's unmasked pixels.
    """
    scheme = scheme or reference.scheme
    if mask is None:
        mask = MaskRaster(reference.valid)
    elif (mask.width, mask.height) != (reference.width, reference.height):
        raise RasterError("mask does not match the reference grid")
    # points that land on pixels masked in either raster are skipped, not redrawn
    sample = sample_points(mask, n, seed)
    cm = build_confusion(reference, predicted, sample)
    views = [AssessmentView.from_matrix("classes", cm)]
    for group, members in scheme.merge_groups.items():
        views.append(AssessmentView.from_matrix(group, merge_classes(cm, members, group)))
    return AssessmentResult(n, int(seed), cm.total, cm.skipped, views)


def tally_points(reference: Sequence[int], predicted: Sequence[int], k: int) -> ConfusionMatrix:
    """Confusion matrix straight from paired label lists (class ids 0..k-1)."""
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (np.asarray(reference, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return ConfusionMatrix(counts, tuple(str(i) for i in range(k)))
