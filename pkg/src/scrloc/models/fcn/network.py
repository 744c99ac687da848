"""Small fully convolutional screw/background classifier in plain numpy.

Activations are kept channels-last ``(N, H, W, C)``; weights are
``(C_out, C_in, 3, 3)``. Every layer is a 3x3 stride-1 convolution with zero
"same" padding, ReLU between layers and a two-class softmax at the end, so
the probability map has the input's shape.
"""
import json
import struct
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
from scrloc.errors import ShapeMismatch, UnsupportedWeightVersion
from scrloc.utils import digest_bytes


DEFAULT_CHANNELS = (1, 8, 16, 16, 2)
KERNEL = 3
WEIGHT_MAGIC = b'SFCN'
WEIGHT_FORMAT_VERSION = 1


@dataclass
class LabeledPatch:
    image: npt.NDArray      # (H, W) grayscale
    label: npt.NDArray      # (H, W) bool, True = screw

    def __post_init__(self):
        if self.image.shape != self.label.shape:
            raise ShapeMismatch(
                f'image {self.image.shape} and label {self.label.shape} differ'
            )


@dataclass
class ConvLayer:
    weight: npt.NDArray     # (C_out, C_in, 3, 3)
    bias: npt.NDArray       # (C_out,)


@dataclass
class FcnModel:
    layers: List[ConvLayer]
    version: int = WEIGHT_FORMAT_VERSION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ShapeMismatch('model needs at least one layer')
        c_prev = self.layers[0].weight.shape[1]
        if c_prev != 1:
            raise ShapeMismatch(f'first layer must take 1 channel, got {c_prev}')
        for i, layer in enumerate(self.layers):
            w, b = layer.weight, layer.bias
            if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
                raise ShapeMismatch(f'layer {i}: weight shape {w.shape}')
            if w.shape[1] != c_prev:
                raise ShapeMismatch(f'layer {i}: expects {w.shape[1]} channels, gets {c_prev}')
            if b.shape != (w.shape[0],):
                raise ShapeMismatch(f'layer {i}: bias shape {b.shape}')
            c_prev = w.shape[0]
        if c_prev != 2:
            raise ShapeMismatch(f'last layer must emit 2 channels, got {c_prev}')

    @classmethod
    def init(
            cls,
            rng: Union[int, np.random.Generator],
            channels: Sequence[int] = DEFAULT_CHANNELS,
    ) -> 'FcnModel':
        """Glorot-uniform weights and zero biases."""
        rng = np.random.default_rng(rng)
        layers = []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            limit = np.sqrt(6.0 / ((c_in + c_out) * KERNEL * KERNEL))
            w = rng.uniform(-limit, limit, size=(c_out, c_in, KERNEL, KERNEL))
            layers.append(ConvLayer(w, np.zeros(c_out)))
        return cls(layers)

    @classmethod
    def zeros(cls, channels: Sequence[int] = DEFAULT_CHANNELS) -> 'FcnModel':
        return cls([
            ConvLayer(np.zeros((c_out, c_in, KERNEL, KERNEL)), np.zeros(c_out))
            for c_in, c_out in zip(channels[:-1], channels[1:])
        ])

    @property
    def channels(self) -> Tuple[int, ...]:
        return (self.layers[0].weight.shape[1],) + tuple(l.weight.shape[0] for l in self.layers)

    @property
    def receptive_field(self) -> int:
        return 1 + (KERNEL - 1) * len(self.layers)

    def parameters(self) -> List[npt.NDArray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def copy(self) -> 'FcnModel':
        return FcnModel(
            [ConvLayer(l.weight.copy(), l.bias.copy()) for l in self.layers],
            self.version,
            dict(self.meta),
        )

    def to_bytes(self) -> bytes:
        chunks = [struct.pack('<4sII', WEIGHT_MAGIC, self.version, len(self.layers))]
        for layer in self.layers:
            chunks.append(struct.pack('<4I', *layer.weight.shape))
            chunks.append(layer.weight.astype('<f8').tobytes())
            chunks.append(layer.bias.astype('<f8').tobytes())
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> 'FcnModel':
        magic, version, n_layers = struct.unpack_from('<4sII', data, 0)
        if magic != WEIGHT_MAGIC:
            raise ShapeMismatch(f'not a weight file (magic {magic!r})')
        if version != WEIGHT_FORMAT_VERSION:
            raise UnsupportedWeightVersion(
                f'weight format version {version}, this build reads {WEIGHT_FORMAT_VERSION}'
            )
        offset = struct.calcsize('<4sII')
        layers = []
        for _ in range(n_layers):
            shape = struct.unpack_from('<4I', data, offset)
            offset += struct.calcsize('<4I')
            n_w = int(np.prod(shape))
            w = np.frombuffer(data, dtype='<f8', count=n_w, offset=offset).reshape(shape)
            offset += 8 * n_w
            b = np.frombuffer(data, dtype='<f8', count=shape[0], offset=offset)
            offset += 8 * shape[0]
            layers.append(ConvLayer(w.astype(np.float64), b.astype(np.float64)))
        if offset != len(data):
            raise ShapeMismatch(f'{len(data) - offset} trailing bytes in weight file')
        return cls(layers, version)

    def digest(self) -> str:
        return digest_bytes(self.to_bytes())


def save_model(model: FcnModel, path: Union[str, Path]) -> Path:
    """Write the weight file and a JSON sidecar with model.meta."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model.to_bytes())
    sidecar = dict(model.meta, digest=model.digest(), channels=list(model.channels))
    path.with_suffix('.json').write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_model(path: Union[str, Path]) -> FcnModel:
    path = Path(path)
    model = FcnModel.from_bytes(path.read_bytes())
    sidecar = path.with_suffix('.json')
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        meta.pop('digest', None)
        meta.pop('channels', None)
        model.meta = meta
    return model


def _pad(a: npt.NDArray) -> npt.NDArray:
    return np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)))


def _conv(a: npt.NDArray, layer: ConvLayer) -> npt.NDArray:
    n, h, w, c_in = a.shape
    c_out = layer.weight.shape[0]
    ap = _pad(a)
    z = np.empty((n * h * w, c_out))
    z[:] = layer.bias
    for ky in range(KERNEL):
        for kx in range(KERNEL):
            win = ap[:, ky:ky + h, kx:kx + w, :].reshape(-1, c_in)
            z += win @ layer.weight[:, :, ky, kx].T
    return z.reshape(n, h, w, c_out)


def _conv_backward(a: npt.NDArray, layer: ConvLayer, dz: npt.NDArray, need_input: bool):
    n, h, w, c_in = a.shape
    c_out = layer.weight.shape[0]
    ap = _pad(a)
    dzf = dz.reshape(-1, c_out)
    dw = np.empty_like(layer.weight)
    dap = np.zeros_like(ap) if need_input else None
    for ky in range(KERNEL):
        for kx in range(KERNEL):
            win = ap[:, ky:ky + h, kx:kx + w, :].reshape(-1, c_in)
            dw[:, :, ky, kx] = dzf.T @ win
            if need_input:
                dap[:, ky:ky + h, kx:kx + w, :] += (
                    dzf @ layer.weight[:, :, ky, kx]).reshape(n, h, w, c_in)
    db = dzf.sum(axis=0)
    da = dap[:, 1:-1, 1:-1, :] if need_input else None
    return dw, db, da


def _check_input(model: FcnModel, x: npt.NDArray):
    if x.ndim != 3:
        raise ShapeMismatch(f'expected a (N, H, W) batch, got {x.shape}')
    rf = model.receptive_field
    if x.shape[1] < rf or x.shape[2] < rf:
        raise ShapeMismatch(f'image {x.shape[1:]} smaller than the {rf}px receptive field')


def _forward(model: FcnModel, x: npt.NDArray):
    _check_input(model, x)
    a = x[..., None].astype(np.float64)
    cache = []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = _conv(a, layer)
        cache.append((a, z))
        a = np.maximum(z, 0.0) if i < last else z
    return a, cache


def softmax(logits: npt.NDArray) -> npt.NDArray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(model: FcnModel, images: npt.NDArray) -> npt.NDArray:
    """Screw-class probability maps for an (N, H, W) stack."""
    logits, _ = _forward(model, np.asarray(images, dtype=float))
    return softmax(logits)[..., 1]


def forward(model: FcnModel, img: npt.NDArray) -> npt.NDArray:
    """Per-pixel screw probability for one grayscale image."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ShapeMismatch(f'expected a grayscale image, got {img.shape}')
    return forward_batch(model, img[None])[0]


def stack_batch(batch: Sequence[LabeledPatch]) -> Tuple[npt.NDArray, npt.NDArray]:
    if not batch:
        raise ValueError('empty batch')
    shape = batch[0].image.shape
    if any(p.image.shape != shape for p in batch):
        raise ShapeMismatch('patches in a batch must share a shape')
    return (np.stack([p.image for p in batch]).astype(np.float64),
            np.stack([p.label for p in batch]).astype(bool))


def loss_and_grad_arrays(
        model: FcnModel,
        images: npt.NDArray,
        labels: npt.NDArray,
        class_weights: Tuple[float, float] = (1.0, 1.0),
) -> Tuple[float, List[npt.NDArray]]:
    """Weighted mean pixel cross-entropy and its gradient, ordered as
    model.parameters()."""
    logits, cache = _forward(model, images)
    if labels.shape != logits.shape[:-1]:
        raise ShapeMismatch(f'labels {labels.shape} vs maps {logits.shape[:-1]}')
    n_pix = labels.size
    p = softmax(logits)
    wts = np.where(labels, class_weights[1], class_weights[0])
    p_true = np.where(labels, p[..., 1], p[..., 0])
    with np.errstate(divide='ignore'):
        loss = float(np.sum(wts * -np.log(p_true)) / n_pix)

    onehot = np.stack([~labels, labels], axis=-1).astype(np.float64)
    dz = (p - onehot) * (wts / n_pix)[..., None]
    grads = [None] * (2 * len(model.layers))
    last = len(model.layers) - 1
    for i in range(last, -1, -1):
        a, z = cache[i]
        if i < last:
            dz = dz * (z > 0)
        dw, db, da = _conv_backward(a, model.layers[i], dz, need_input=i > 0)
        grads[2 * i] = dw
        grads[2 * i + 1] = db
        dz = da
    return loss, grads


def loss_and_grad(
        model: FcnModel,
        batch: Sequence[LabeledPatch],
        class_weights: Tuple[float, float] = (1.0, 1.0),
) -> Tuple[float, List[npt.NDArray]]:
    images, labels = stack_batch(batch)
    return loss_and_grad_arrays(model, images, labels, class_weights)


def gradient_check(
        model: FcnModel,
        batch: Sequence[LabeledPatch],
        step: float = 1e-4,
        class_weights: Tuple[float, float] = (1.0, 1.0),
        max_entries: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error is |a - n| / max(|a|, |n|, 1e-3). With max_entries,
    only that many randomly chosen entries per parameter array are checked.
    """
    images, labels = stack_batch(batch)
    _, grads = loss_and_grad_arrays(model, images, labels, class_weights)
    shifted = model.copy()
    rng = np.random.default_rng(rng)
    worst = 0.0
    for param, grad in zip(shifted.parameters(), grads):
        flat = param.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + step
            up, _ = loss_and_grad_arrays(shifted, images, labels, class_weights)
            flat[j] = orig - step
            down, _ = loss_and_grad_arrays(shifted, images, labels, class_weights)
            flat[j] = orig
            numeric = (up - down) / (2 * step)
            analytic = grad.reshape(-1)[j]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst


def relu_margin(model: FcnModel, images: npt.NDArray) -> float:
    """Smallest |pre-activation| over the hidden layers for an (N, H, W) stack.

    Central differences with a perturbation that moves no pre-activation by
    more than this never straddle a ReLU kink.
    """
    _, cache = _forward(model, np.asarray(images, dtype=float))
    hidden = [np.abs(z).min() for _, z in cache[:-1]]
    return float(min(hidden)) if hidden else np.inf
