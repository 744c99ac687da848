import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, asdict, field
from scipy.optimize import linear_sum_assignment
from typing import Dict, List, Optional, Tuple
from scrloc.utils import binomial_interval


def batch_success(p: float, n: int) -> float:
    """Probability that all n independent screws succeed."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f'p must lie in [0, 1], got {p}')
    if n < 0:
        raise ValueError(f'n must be >= 0, got {n}')
    return float(p ** n)


def required_unit_rate(target_batch: float, n: int) -> float:
    """Per-screw success rate needed for a target batch success over n screws."""
    if not (0.0 < target_batch <= 1.0):
        raise ValueError(f'target_batch must lie in (0, 1], got {target_batch}')
    if n < 1:
        raise ValueError(f'n must be >= 1, got {n}')
    return float(target_batch ** (1.0 / n))


def match_detections(
        detected: npt.ArrayLike,
        truth: npt.ArrayLike,
        radius: float,
) -> Tuple[List[Tuple[int, int]], List[int], List[int]]:
    """One-to-one matching of detections to truth within radius (pixels).

    Returns matched (detection, truth) index pairs, unmatched detections and
    unmatched truths; the assignment minimizes total matched distance.
    """
    det = np.asarray(detected, dtype=float).reshape(-1, 2)
    tru = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(det) == 0 or len(tru) == 0:
        return [], list(range(len(det))), list(range(len(tru)))
    dist = np.linalg.norm(det[:, None, :] - tru[None, :, :], axis=-1)
    big = 1e6
    cost = np.where(dist <= radius, dist, big)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if dist[r, c] <= radius]
    used_d = {r for r, _ in pairs}
    used_t = {c for _, c in pairs}
    return (pairs,
            [i for i in range(len(det)) if i not in used_d],
            [j for j in range(len(tru)) if j not in used_t])


def _percentiles(values: npt.ArrayLike) -> Dict[str, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {'p50': float('nan'), 'p95': float('nan'), 'max': float('nan')}
    return {'p50': float(np.percentile(v, 50)), 'p95': float(np.percentile(v, 95)),
            'max': float(v.max())}


@dataclass
class EvalReport:
    tp: int
    fn: int
    fp: int
    recall: float
    precision: float
    precision_undefined: bool
    recall_ci: Tuple[float, float]
    precision_ci: Tuple[float, float]
    center_error_px: Dict[str, float]
    center_error_mm: Dict[str, float]
    n_confusers: int = 0
    n_out_of_spec: int = 0
    synthetic_negatives: bool = True
    runtime_s: float = 0.0
    config: dict = field(default_factory=dict)
    model_digests: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_counts(
            cls,
            tp: int,
            fn: int,
            fp: int,
            errors_px: npt.ArrayLike = (),
            mm_per_px: float = 0.2,
            **kwargs,
    ) -> 'EvalReport':
        """recall = TP/(TP+FN), precision = TP/(TP+FP); 0/0 is 1.0 and flagged."""
        recall = tp / (tp + fn) if tp + fn else 1.0
        undefined = tp + fp == 0
        precision = 1.0 if undefined else tp / (tp + fp)
        errors_px = np.asarray(errors_px, dtype=float)
        return cls(
            tp=tp, fn=fn, fp=fp,
            recall=recall,
            precision=precision,
            precision_undefined=undefined,
            recall_ci=binomial_interval(tp, tp + fn),
            precision_ci=binomial_interval(tp, tp + fp),
            center_error_px=_percentiles(errors_px),
            center_error_mm=_percentiles(errors_px * mm_per_px),
            **kwargs,
        )

    def passes(self, min_recall: float = 0.995, min_recall_ci: float = 0.99,
               max_fp: int = 0, max_p95_px: Optional[float] = 2.0) -> bool:
        ok = self.recall >= min_recall and self.recall_ci[0] >= min_recall_ci and self.fp <= max_fp
        if max_p95_px is not None and self.tp:
            ok = ok and self.center_error_px['p95'] <= max_p95_px
        return bool(ok)

    def to_dict(self) -> dict:
        return asdict(self)
