"""Segmentation overlap and surface-distance metrics, diagnostic rates, and
inter-rater agreement (Cohen's and Fleiss' kappa).

Undefined rates (zero denominators) are reported as ``nan``, never as 0.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from hipscreen.errors import (EmptyInput, EmptyMask, InconsistentRaterCount,
                              LengthMismatch, ShapeMismatch)
from hipscreen.imagecore import boundary_mask

NAN = float("nan")
OVERLAP_FIELDS = ("dsc", "tpvf", "tnvf", "fpvf", "fnvf", "precision", "hd", "assd")


def _ratio(num, den):
    return num / den if den else NAN


@dataclass(frozen=True)
class OverlapReport:
    dsc: float
    tpvf: float
    tnvf: float
    fpvf: float
    fnvf: float
    precision: float
    hd: float
    assd: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in OVERLAP_FIELDS}


def confusion_counts(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, tn, fn


def overlap_metrics(pred, gt, class_id):
    """Overlap and surface-distance scores for one class of two label masks.

    A structure absent from both masks scores DSC = precision = TPVF = 1.
    HD and ASSD are ``nan`` when either mask lacks the class.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    p = pred == class_id
    g = gt == class_id
    tp, fp, tn, fn = confusion_counts(p, g)
    dsc = 2 * tp / (2 * tp + fp + fn) if (tp + fp + fn) else 1.0
    tpvf = tp / (tp + fn) if (tp + fn) else 1.0
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    tnvf = _ratio(tn, tn + fp)
    if p.any() and g.any():
        pb, gb = boundary_points(p), boundary_points(g)
        hd, asd = hausdorff(pb, gb), assd(pb, gb)
    else:
        hd = asd = NAN
    return OverlapReport(dsc, tpvf, tnvf, 1.0 - tnvf, 1.0 - tpvf, precision, hd, asd,
                         tp, fp, tn, fn)


def boundary_points(binary):
    """(n, 2) array of boundary ``(x, y)`` coordinates of a binary mask."""
    ys, xs = np.nonzero(boundary_mask(binary))
    return np.column_stack([xs, ys]).astype(np.float64)


def _as_points(points):
    pts = np.asarray(list(points) if isinstance(points, (set, frozenset)) else points,
                     dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyMask("boundary point set is empty")
    return pts


def _nearest(src, dst):
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def hausdorff(pred_boundary, gt_boundary):
    """Exact symmetric Hausdorff distance in pixels."""
    p, g = _as_points(pred_boundary), _as_points(gt_boundary)
    return float(max(_nearest(p, g).max(), _nearest(g, p).max()))


def assd(pred_boundary, gt_boundary):
    """Average symmetric surface distance in pixels."""
    p, g = _as_points(pred_boundary), _as_points(gt_boundary)
    total = math.fsum(np.concatenate([_nearest(p, g), _nearest(g, p)]))
    return total / (len(p) + len(g))


@dataclass(frozen=True)
class DiagnosticStats:
    tp: int
    fp: int
    tn: int
    fn: int
    sensitivity: float
    specificity: float
    accuracy: float
    fpr: float
    fnr: float


def diagnostic_stats(pairs, positive="DDH"):
    """Rates for ``(predicted, reference)`` pairs with ``positive`` as the positive class."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no diagnosis pairs given")
    tp = sum(1 for p, r in pairs if p == positive and r == positive)
    fp = sum(1 for p, r in pairs if p == positive and r != positive)
    fn = sum(1 for p, r in pairs if p != positive and r == positive)
    tn = len(pairs) - tp - fp - fn
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    return DiagnosticStats(tp, fp, tn, fn, sens, spec, (tp + tn) / len(pairs),
                           1.0 - spec, 1.0 - sens)


@dataclass
class AgreementReport:
    n_items: int
    agreement_fraction: float
    kappa: float
    categories: list = field(default_factory=list)
    confusion: list = field(default_factory=list)


def _categories(*label_lists, categories=None):
    if categories is not None:
        return list(categories)
    seen = set()
    for labels in label_lists:
        seen.update(labels)
    return sorted(seen, key=lambda c: (str(type(c)), c))


def cohen_kappa(a, b, categories=None):
    """Cohen's kappa between two raters' label sequences."""
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise LengthMismatch(f"rater label lists differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise EmptyInput("no items to compare")
    cats = _categories(a, b, categories=categories)
    index = {c: i for i, c in enumerate(cats)}
    k = len(cats)
    confusion = np.zeros((k, k), dtype=np.int64)
    for x, y in zip(a, b):
        confusion[index[x], index[y]] += 1
    return kappa_from_confusion(confusion, cats)


def kappa_from_confusion(confusion, categories=None):
    confusion = np.asarray(confusion, dtype=np.int64)
    n = int(confusion.sum())
    if n == 0:
        raise EmptyInput("confusion table is empty")
    p_o = float(np.trace(confusion)) / n
    rows = confusion.sum(axis=1) / n
    cols = confusion.sum(axis=0) / n
    p_e = math.fsum(rows * cols)
    if p_e >= 1.0:
        kappa = 1.0 if p_o == 1.0 else NAN
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    cats = list(categories) if categories is not None else list(range(len(confusion)))
    return AgreementReport(n, p_o, kappa, cats, confusion.tolist())


def fleiss_kappa(ratings):
    """Fleiss' kappa for an ``n_items x K`` table of category counts.

    Every row must sum to the same number of raters (at least two).
    ``agreement_fraction`` is the share of items on which all raters agree.
    """
    table = np.asarray(ratings, dtype=np.int64)
    if table.ndim != 2 or table.shape[0] == 0:
        raise EmptyInput("ratings table must be a non-empty 2D array")
    r = table.sum(axis=1)
    if np.any(r != r[0]) or r[0] < 2:
        raise InconsistentRaterCount("every item needs the same number (>= 2) of ratings")
    n_items, raters = table.shape[0], int(r[0])
    p_item = (np.sum(table * (table - 1), axis=1)) / (raters * (raters - 1))
    p_bar = math.fsum(p_item) / n_items
    p_cat = table.sum(axis=0) / (n_items * raters)
    p_e = math.fsum(p_cat ** 2)
    if p_e >= 1.0:
        kappa = 1.0 if p_bar == 1.0 else NAN
    else:
        kappa = (p_bar - p_e) / (1.0 - p_e)
    unanimous = float(np.mean(table.max(axis=1) == raters))
    return AgreementReport(n_items, unanimous, kappa, list(range(table.shape[1])), table.tolist())


def fleiss_from_labels(*label_lists, categories=None):
    """Fleiss' kappa from per-rater label sequences of equal length."""
    lists = [list(x) for x in label_lists]
    if len({len(x) for x in lists}) != 1:
        raise LengthMismatch("rater label lists differ in length")
    cats = _categories(*lists, categories=categories)
    index = {c: i for i, c in enumerate(cats)}
    table = np.zeros((len(lists[0]), len(cats)), dtype=np.int64)
    for labels in lists:
        for i, c in enumerate(labels):
            table[i, index[c]] += 1
    report = fleiss_kappa(table)
    report.categories = cats
    return report


def summarize(values):
    """``(mean, sample std)`` ignoring nan; std is nan for fewer than two values."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if len(v) == 0:
        return NAN, NAN
    mean = float(v.mean())
    std = float(v.std(ddof=1)) if len(v) > 1 else NAN
    return mean, std
