"""Image decoding, blue:green conversion and resampling."""
from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class ImageLoadError(IOError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: cannot decode image ({reason})")
        self.path = path


def _bilinear_axis(n_in, n_out):
    """Source indices and weights along one axis (half-pixel centres, edge clamp)."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    return i0, i1, w1


def resize_bilinear(img, height, width):
    """Resize a (C, H, W) or (H, W) array with bilinear interpolation."""
    arr = np.asarray(img)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    c, h, w = arr.shape
    if (h, w) == (height, width):
        out = arr.copy()
    else:
        y0, y1, wy = _bilinear_axis(h, height)
        x0, x1, wx = _bilinear_axis(w, width)
        wy = wy.astype(arr.dtype)[:, None]
        wx = wx.astype(arr.dtype)[None, :]
        top = arr[:, y0][:, :, x0] * (1 - wx) + arr[:, y0][:, :, x1] * wx
        bot = arr[:, y1][:, :, x0] * (1 - wx) + arr[:, y1][:, :, x1] * wx
        out = top * (1 - wy) + bot * wy
    return out[0] if squeeze else out


def rgb_to_bg(rgb):
    """(H, W, 3) uint8 or float RGB -> (2, H, W) float32 [blue, green] in [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError(f"expected an (H, W, 3) RGB array, got {rgb.shape}")
    arr = rgb[..., :3].astype(np.float32)
    if rgb.dtype == np.uint8:
        arr /= 255.0
    return np.stack([arr[..., 2], arr[..., 1]]).astype(np.float32)


def load_image_bg(path, size=(75, 75)):
    """Decode an image file into a (2, H, W) blue:green tensor in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageLoadError(path, exc) from None
    bg = rgb_to_bg(rgb)
    if size is None:
        return bg
    return resize_bilinear(bg, size[0], size[1]).astype(np.float32)


def bg_to_rgb(bg):
    """Inverse view for saving fixtures: red channel left empty."""
    bg = np.clip(np.asarray(bg), 0, 1)
    rgb = np.zeros(bg.shape[1:] + (3,), dtype=np.uint8)
    rgb[..., 2] = np.round(bg[0] * 255)
    rgb[..., 1] = np.round(bg[1] * 255)
    return rgb


def save_bg_png(bg, path):
    Image.fromarray(bg_to_rgb(bg)).save(path)


def list_images(root):
    """Image files directly under ``root`` in file-name order."""
    names = sorted(n for n in os.listdir(root) if n.lower().endswith(IMAGE_SUFFIXES))
    return [os.path.join(root, n) for n in names]


def greyscale(img):
    """Channel mean of a (C, H, W) or (N, C, H, W) array."""
    img = np.asarray(img)
    return img.mean(axis=-3)
