"""Raster and scene-bundle files.

  - PNG: 8-bit RGB.
  - PGM: 16-bit binary (P5, maxval 65535), for probability maps.
  - PBM: 1-bit binary (P4), for masks.
  - depth.f32: 16-byte header (b'DPTH', uint32 width, uint32 height,
    uint32 reserved) then little-endian float32 rows.

The three image formats are encoded by Pillow.
"""
import json
import numpy as np
import numpy.typing as npt
from pathlib import Path
from PIL import Image
from typing import List, Tuple, Union
from scrloc.tools.detect import RgbdImage


PathLike = Union[str, Path]
PGM16_MODES = ('I', 'I;16', 'I;16B')
DEPTH_MAGIC = b'DPTH'
DEPTH_HEADER = np.dtype([('magic', 'S4'), ('width', '<u4'), ('height', '<u4'),
                         ('reserved', '<u4')])


def write_png(path: PathLike, rgb: npt.NDArray) -> None:
    data = np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def read_png(path: PathLike) -> npt.NDArray:
    with Image.open(path) as im:
        return np.asarray(im.convert('RGB'), dtype=np.float64) / 255.0


def _open_netpbm(path: PathLike, modes: Tuple[str, ...]) -> npt.NDArray:
    with Image.open(path) as im:
        if im.format != 'PPM' or im.mode not in modes:
            raise ValueError(f'{path} is a {im.format} {im.mode} image, expected one of {modes}')
        return np.asarray(im)


def write_pgm16(path: PathLike, pmap: npt.NDArray) -> None:
    vals = np.round(np.clip(pmap, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(vals).save(path, format='PPM')


def read_pgm16(path: PathLike) -> npt.NDArray:
    vals = _open_netpbm(path, PGM16_MODES)
    return vals.astype(np.float64) / 65535


def write_pbm(path: PathLike, mask: npt.NDArray) -> None:
    gray = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))
    gray.convert('1', dither=Image.Dither.NONE).save(path, format='PPM')


def read_pbm(path: PathLike) -> npt.NDArray:
    return _open_netpbm(path, ('1',)).astype(bool)


def write_depth(path: PathLike, depth: npt.NDArray) -> None:
    h, w = depth.shape
    header = np.array([(DEPTH_MAGIC, w, h, 0)], dtype=DEPTH_HEADER)
    Path(path).write_bytes(header.tobytes() + depth.astype('<f4').tobytes())


def read_depth(path: PathLike) -> npt.NDArray:
    data = Path(path).read_bytes()
    header = np.frombuffer(data, dtype=DEPTH_HEADER, count=1)[0]
    if header['magic'] != DEPTH_MAGIC:
        raise ValueError(f'{path} is not a depth raster')
    w, h = int(header['width']), int(header['height'])
    vals = np.frombuffer(data, dtype='<f4', count=w * h, offset=DEPTH_HEADER.itemsize)
    return vals.reshape(h, w).astype(np.float64)


def save_scene_bundle(directory: PathLike, img: RgbdImage, truth: List[dict]) -> Path:
    """Write rgb.png, depth.f32 and truth.json into directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_png(directory / 'rgb.png', img.rgb)
    write_depth(directory / 'depth.f32', img.depth)
    (directory / 'truth.json').write_text(json.dumps(truth, indent=2))
    return directory


def load_scene_bundle(directory: PathLike) -> Tuple[RgbdImage, List[dict]]:
    directory = Path(directory)
    rgb = read_png(directory / 'rgb.png')
    depth = read_depth(directory / 'depth.f32')
    truth = json.loads((directory / 'truth.json').read_text())
    return RgbdImage(rgb, depth), truth


def save_detection_report(path: PathLike, records: List[dict], **metadata) -> Path:
    """JSON detection report: run metadata plus one entry per candidate.

    Entries are {p_global, p_3d, confidence, box} with a drop_reason on
    candidates that did not become detections.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**metadata, 'detections': records}, indent=2))
    return path


def load_detection_report(path: PathLike) -> dict:
    report = json.loads(Path(path).read_text())
    if 'detections' not in report:
        raise ValueError(f'{path} is not a detection report')
    return report
