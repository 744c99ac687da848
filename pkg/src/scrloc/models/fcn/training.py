import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, asdict, replace
from functools import partial
from tqdm import tqdm
from typing import List, Sequence, Tuple
from scrloc.errors import Diverged
from scrloc.logging import get_logger
from scrloc.models.fcn.network import (
    DEFAULT_CHANNELS,
    FcnModel,
    LabeledPatch,
    forward_batch,
    loss_and_grad_arrays,
    stack_batch,
)
from scrloc.utils import parallel_map


logger = get_logger('fcn')

DIVERGENCE_LOSS = 1e4


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 128
    epochs: int = 30
    lr0: float = 0.01
    decay_factor: float = 0.25
    decay_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # (background, screw) pixel weights in the loss.
    class_weights: Tuple[float, float] = (1.0, 1.0)
    augment: bool = True
    channels: Tuple[int, ...] = DEFAULT_CHANNELS
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1:
            raise ValueError('batch_size, epochs and decay_every must be >= 1')
        if self.lr0 <= 0:
            raise ValueError(f'lr0 must be positive, got {self.lr0}')
        if not (0 < self.decay_factor < 1):
            raise ValueError(f'decay_factor must lie in (0, 1), got {self.decay_factor}')
        if min(self.class_weights) <= 0:
            raise ValueError(f'class weights must be positive, got {self.class_weights}')


def lr_at(config: TrainingConfig, epoch: int) -> float:
    """Step schedule: lr0 decayed by decay_factor every decay_every epochs."""
    if epoch < 0:
        raise ValueError(f'epoch must be >= 0, got {epoch}')
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


class Adam:

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: List[npt.NDArray], grads: List[npt.NDArray], lr: float) -> None:
        """Update params in place."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def _augment(x: npt.NDArray, y: npt.NDArray, rng: np.random.Generator):
    """Random dihedral transform per sample (quarter turns only on square patches)."""
    square = x.shape[1] == x.shape[2]
    choices = np.arange(8) if square else np.array([0, 2, 4, 6])
    k = rng.choice(choices, size=len(x))
    xo = np.empty_like(x)
    yo = np.empty_like(y)
    for t in np.unique(k):
        sel = k == t
        xs, ys = x[sel], y[sel]
        if t >= 4:
            xs, ys = xs[:, :, ::-1], ys[:, :, ::-1]
        xo[sel] = np.rot90(xs, t % 4, axes=(1, 2))
        yo[sel] = np.rot90(ys, t % 4, axes=(1, 2))
    return xo, yo


def train_arrays(
        config: TrainingConfig,
        images: npt.NDArray,
        labels: npt.NDArray,
        progress: bool = False,
) -> Tuple[FcnModel, List[float]]:
    rng = np.random.default_rng(config.seed)
    model = FcnModel.init(rng, config.channels)
    opt = Adam(config.beta1, config.beta2, config.eps)
    n = len(images)
    losses = []
    for epoch in tqdm(range(config.epochs), desc='epochs', disable=not progress):
        lr = lr_at(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = images[idx], labels[idx]
            if config.augment:
                xb, yb = _augment(xb, yb, rng)
            loss, grads = loss_and_grad_arrays(model, xb, yb, config.class_weights)
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise Diverged(f'loss {loss} at epoch {epoch} (lr={lr})')
            opt.step(model.parameters(), grads, lr)
            total += loss * len(idx)
        losses.append(total / n)
        logger.info(f'epoch {epoch}: lr={lr:.6g} loss={losses[-1]:.5f}')
    model.meta = {'training': asdict(config), 'loss_trace': losses}
    return model, losses


def train(
        config: TrainingConfig,
        dataset: Sequence[LabeledPatch],
        progress: bool = False,
) -> Tuple[FcnModel, List[float]]:
    """Train a model from scratch; returns it with its per-epoch mean loss."""
    images, labels = stack_batch(dataset)
    return train_arrays(config, images, labels, progress)


def _train_member(config: TrainingConfig, images: npt.NDArray, labels: npt.NDArray) -> FcnModel:
    model, _ = train_arrays(config, images, labels)
    return model


def make_ensemble(
        config: TrainingConfig,
        dataset: Sequence[LabeledPatch],
        k: int = 3,
        n_jobs: int = 1,
        progress: bool = False,
) -> List[FcnModel]:
    """k members trained with seeds config.seed, config.seed + 1, ..."""
    if k < 1:
        raise ValueError(f'ensemble size must be >= 1, got {k}')
    images, labels = stack_batch(dataset)
    configs = [replace(config, seed=config.seed + i) for i in range(k)]
    func = partial(_train_member, images=images, labels=labels)
    return parallel_map(func, configs, n_jobs=n_jobs, desc='ensemble', progress=progress)


def pixel_accuracy(
        model: FcnModel,
        dataset: Sequence[LabeledPatch],
        tau: float = 0.5,
        chunk: int = 256,
) -> float:
    images, labels = stack_batch(dataset)
    correct = 0
    for start in range(0, len(images), chunk):
        pmap = forward_batch(model, images[start:start + chunk])
        correct += int(np.sum((pmap >= tau) == labels[start:start + chunk]))
    return correct / labels.size
