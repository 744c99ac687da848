import hashlib
import json
import multiprocessing as mp
import numpy as np
import numpy.typing as npt
from tqdm import tqdm
from typing import Any, Callable, Iterable, List, Tuple
from statsmodels.stats.proportion import proportion_confint


def derive_rng(seed: int, *offsets: int) -> np.random.Generator:
    """Independent generator for a sub-task, fixed by (seed, offsets)."""
    return np.random.default_rng([int(seed), *[int(o) for o in offsets]])


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_json(obj: Any) -> str:
    return digest_bytes(json.dumps(obj, sort_keys=True).encode('utf-8'))


def digest_array(*arrays: npt.NDArray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode('utf-8'))
        h.update(a.tobytes())
    return h.hexdigest()


def binomial_interval(
        successes: int,
        trials: int,
        alpha: float = 0.05,
) -> Tuple[float, float]:
    """Clopper-Pearson interval, (0, 1) when there are no trials."""
    if trials == 0:
        return (0.0, 1.0)
    lo, hi = proportion_confint(successes, trials, alpha=alpha, method='beta')
    return float(np.nan_to_num(lo, nan=0.0)), float(np.nan_to_num(hi, nan=1.0))


def resolve_n_jobs(n_jobs: int) -> int:
    if n_jobs == -1:
        n_jobs = mp.cpu_count()
    elif n_jobs < -1:
        n_jobs = mp.cpu_count() + 1 + n_jobs
    return max(1, n_jobs)


def parallel_map(
        func: Callable,
        items: Iterable,
        n_jobs: int = 1,
        desc: str = None,
        progress: bool = False,
) -> List:
    """Ordered map over items, in a process pool when n_jobs != 1."""
    items = list(items)
    n_jobs = resolve_n_jobs(n_jobs)
    if n_jobs == 1 or len(items) <= 1:
        it = tqdm(items, desc=desc, disable=not progress)
        return [func(item) for item in it]
    with mp.Pool(min(n_jobs, len(items))) as p:
        results = []
        for result in tqdm(p.imap(func, items), total=len(items), desc=desc,
                           disable=not progress):
            results.append(result)
    return results
