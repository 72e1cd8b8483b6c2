"""Procedural stand-ins for the image sets used in the experiments.

None of the original datasets ship with the package, so desk-scale runs
use seeded generators with the same structure:

* ``natural_images``   - cluttered scenes for self-supervised training
* ``flower_dataset``   - 17 flower "species" photographed at varying pose
* ``lavender_sunflower`` - the 5 + 5 binary fixture
* ``traverse``         - a route seen twice with a lateral pose shift

All images are (2, H, W) float32 blue:green arrays in [0, 1].
"""
from __future__ import annotations

import numpy as np

from .images import resize_bilinear


def pink_noise(h, w, rng, exponent=1.6):
    """1/f^exponent noise rescaled to [0, 1]."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    spec = (rng.standard_normal((h, fx.shape[1])) + 1j * rng.standard_normal((h, fx.shape[1])))
    spec /= f ** exponent
    spec[0, 0] = 0
    field = np.fft.irfft2(spec, s=(h, w))
    lo, hi = field.min(), field.max()
    return ((field - lo) / (hi - lo + 1e-12)).astype(np.float32)


def _soft(d, edge=1.0):
    """Soft inside-indicator from a signed distance (negative inside)."""
    return 1.0 / (1.0 + np.exp(np.clip(d / edge, -30, 30)))


def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    return yy, xx


def _paint(img, alpha, color):
    for c in range(2):
        img[c] = img[c] * (1 - alpha) + color[c] * alpha


def _color(rng, lo=0.05, hi=0.95):
    return rng.uniform(lo, hi, 2).astype(np.float32)


def _background(h, w, rng):
    a, b = _color(rng, 0.1, 0.7), _color(rng, 0.2, 0.9)
    n = pink_noise(h, w, rng)
    return np.stack([a[c] * (1 - n) + b[c] * n for c in range(2)])


def _ellipse(img, rng, yy, xx):
    h, w = img.shape[1:]
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    ry, rx = rng.uniform(3, h / 3), rng.uniform(3, w / 3)
    ang = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(ang) + dy * np.sin(ang)) / rx
    v = (-dx * np.sin(ang) + dy * np.cos(ang)) / ry
    _paint(img, _soft((np.sqrt(u * u + v * v) - 1) * min(rx, ry)), _color(rng))


def _rectangle(img, rng, yy, xx):
    h, w = img.shape[1:]
    y0, x0 = rng.uniform(-5, h - 5), rng.uniform(-5, w - 5)
    y1, x1 = y0 + rng.uniform(4, h / 2), x0 + rng.uniform(4, w / 2)
    d = np.maximum(np.maximum(y0 - yy, yy - y1), np.maximum(x0 - xx, xx - x1))
    _paint(img, _soft(d), _color(rng))


def _stripes(img, rng, yy, xx):
    h, w = img.shape[1:]
    cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(6, max(h, w) / 2.5)
    ang, period = rng.uniform(0, np.pi), rng.uniform(3, 12)
    phase = (xx * np.cos(ang) + yy * np.sin(ang)) * 2 * np.pi / period
    disk = _soft(np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) - r)
    _paint(img, disk * (0.5 + 0.5 * np.sin(phase)), _color(rng))


def _radial(img, rng, yy, xx):
    h, w = img.shape[1:]
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    r = rng.uniform(4, max(h, w) / 4)
    n = rng.integers(3, 12)
    rr = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    th = np.arctan2(yy - cy, xx - cx)
    edge = r * (0.55 + 0.45 * np.abs(np.cos(n * th / 2)))
    _paint(img, _soft(rr - edge), _color(rng))
    _paint(img, _soft(rr - 0.3 * r), _color(rng))


_SHAPES = (_ellipse, _rectangle, _stripes, _radial)


def natural_image(rng, size=64):
    """Cluttered procedural scene: coloured 1/f background plus random shapes."""
    yy, xx = _grid(size, size)
    img = _background(size, size, rng)
    for _ in range(rng.integers(2, 7)):
        _SHAPES[rng.integers(len(_SHAPES))](img, rng, yy, xx)
    img *= rng.uniform(0.6, 1.2)
    return np.clip(img, 0, 1).astype(np.float32)


def natural_images(n, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([natural_image(rng, size) for _ in range(n)])


# ---------------------------------------------------------------------------
# flowers

def _species(rng):
    return {
        "petals": int(rng.integers(3, 14)),
        "length": rng.uniform(0.55, 1.0),
        "sharp": rng.uniform(0.3, 4.0),
        "petal_color": _color(rng, 0.05, 0.95),
        "center_color": _color(rng, 0.0, 0.6),
        "center": rng.uniform(0.12, 0.4),
        "stripe_freq": rng.choice([0.0, rng.uniform(0.2, 0.8)]),
        "cluster": int(rng.choice([1, 1, 2, 3, 5])),
        "bg": _color(rng, 0.15, 0.6),
    }


def flower_species(n_classes=17, seed=1234):
    rng = np.random.default_rng(seed)
    return [_species(rng) for _ in range(n_classes)]


def _draw_flower(img, sp, cy, cx, radius, rot, rng, yy, xx):
    rr = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    th = np.arctan2(yy - cy, xx - cx) + rot
    lobes = np.abs(np.cos(sp["petals"] * th / 2)) ** (1.0 / sp["sharp"])
    edge = radius * ((1 - sp["length"]) + sp["length"] * lobes)
    petal = _soft(rr - edge, edge=1.2)
    color = np.clip(sp["petal_color"] + rng.normal(0, 0.05, 2), 0, 1)
    if sp["stripe_freq"]:
        mod = 0.75 + 0.25 * np.cos(rr * sp["stripe_freq"] * 2 * np.pi / 3)
        for c in range(2):
            img[c] = img[c] * (1 - petal) + color[c] * mod * petal
    else:
        _paint(img, petal, color)
    centre = _soft(rr - sp["center"] * radius, edge=1.0)
    _paint(img, centre, np.clip(sp["center_color"] + rng.normal(0, 0.04, 2), 0, 1))


def flower_image(sp, rng, size=150):
    yy, xx = _grid(size, size)
    n = pink_noise(size, size, rng)
    img = np.stack([sp["bg"][c] * (0.6 + 0.8 * n) for c in range(2)])
    for _ in range(rng.integers(0, 4)):  # distractors
        _SHAPES[rng.integers(len(_SHAPES))](img, rng, yy, xx)
    count = sp["cluster"]
    base = size * (0.32 if count == 1 else 0.18) * rng.uniform(0.8, 1.2)
    for _ in range(count):
        spread = 0.0 if count == 1 else size * 0.22
        cy = size / 2 + rng.uniform(-size * 0.1, size * 0.1) + rng.uniform(-spread, spread)
        cx = size / 2 + rng.uniform(-size * 0.1, size * 0.1) + rng.uniform(-spread, spread)
        _draw_flower(img, sp, cy, cx, base * rng.uniform(0.85, 1.15), rng.uniform(0, 2 * np.pi),
                     rng, yy, xx)
    img *= rng.uniform(0.75, 1.2)
    return np.clip(img, 0, 1).astype(np.float32)


def flower_dataset(n_classes=17, per_class=80, size=150, seed=0, species_seed=1234):
    """Returns ``(images (N, 2, size, size), labels (N,))``."""
    species = flower_species(n_classes, species_seed)
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, sp in enumerate(species):
        for _ in range(per_class):
            images.append(flower_image(sp, rng, size))
            labels.append(label)
    return np.stack(images), np.array(labels)


def _lavender(rng, size):
    yy, xx = _grid(size, size)
    n = pink_noise(size, size, rng)
    img = np.stack([0.15 + 0.15 * n, 0.35 + 0.3 * n])
    for _ in range(rng.integers(6, 11)):
        x = rng.uniform(0, size)
        top, bottom = rng.uniform(0, size * 0.4), rng.uniform(size * 0.7, size)
        lean = rng.uniform(-0.15, 0.15)
        stem = _soft(np.abs(xx - x - lean * (yy - bottom)) - 0.8)
        stem *= (yy > top) & (yy < bottom)
        _paint(img, stem, (0.15, 0.45))
        for yb in np.arange(top, top + (bottom - top) * 0.5, 3.0):
            xb = x + lean * (yb - bottom) + rng.normal(0, 0.6)
            bud = _soft(np.sqrt((yy - yb) ** 2 + ((xx - xb) * 1.4) ** 2) - 2.0)
            _paint(img, bud, (rng.uniform(0.7, 0.9), rng.uniform(0.2, 0.35)))
    return np.clip(img, 0, 1).astype(np.float32)


def _sunflower(rng, size):
    yy, xx = _grid(size, size)
    n = pink_noise(size, size, rng)
    img = np.stack([0.45 + 0.3 * n, 0.55 + 0.2 * n])
    for _ in range(rng.integers(1, 3)):
        cy, cx = rng.uniform(size * 0.25, size * 0.75), rng.uniform(size * 0.25, size * 0.75)
        r = rng.uniform(size * 0.2, size * 0.35)
        rr = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        th = np.arctan2(yy - cy, xx - cx) + rng.uniform(0, np.pi)
        petal = _soft(rr - r * (0.6 + 0.4 * np.abs(np.cos(10 * th))), edge=1.0)
        _paint(img, petal, (rng.uniform(0.05, 0.15), rng.uniform(0.75, 0.9)))
        _paint(img, _soft(rr - 0.45 * r), (0.08, rng.uniform(0.15, 0.25)))
    return np.clip(img, 0, 1).astype(np.float32)


def lavender_sunflower(n_each=5, size=75, seed=7):
    """Returns ``(lavender (n, 2, s, s), sunflower (n, 2, s, s))``."""
    rng = np.random.default_rng(seed)
    lav = np.stack([_lavender(rng, size) for _ in range(n_each)])
    sun = np.stack([_sunflower(rng, size) for _ in range(n_each)])
    return lav, sun


# ---------------------------------------------------------------------------
# place recognition route

def _panorama(width, height, rng):
    yy, xx = _grid(height, width)
    horizon = height * 0.55
    sky = np.stack([0.75 - 0.3 * yy / height, 0.7 - 0.2 * yy / height])
    ground_n = pink_noise(height, width, rng)
    ground = np.stack([0.25 + 0.15 * ground_n, 0.35 + 0.2 * ground_n])
    is_ground = (yy > horizon)[None]
    img = np.where(is_ground, ground, sky).astype(np.float32)
    x = 0.0
    while x < width:
        kind = rng.integers(3)
        w = rng.uniform(15, 60)
        if kind == 0:  # building with windows
            top = rng.uniform(height * 0.08, horizon - 5)
            d = np.maximum(np.maximum(top - yy, yy - horizon - 4), np.maximum(x - xx, xx - x - w))
            col = _color(rng, 0.15, 0.8)
            _paint(img, _soft(d), col)
            win = (np.sin(xx * rng.uniform(0.5, 1.2)) > 0.3) & (np.sin(yy * rng.uniform(0.5, 1.2)) > 0.3)
            _paint(img, _soft(d + 2) * win, col * 0.4)
        elif kind == 1:  # tree
            cy = rng.uniform(height * 0.15, horizon - 8)
            r = rng.uniform(8, 22)
            canopy = _soft(np.sqrt((yy - cy) ** 2 + (xx - x - w / 2) ** 2)
                           - r * (0.8 + 0.2 * pink_noise(height, width, rng)))
            _paint(img, canopy, (rng.uniform(0.05, 0.25), rng.uniform(0.35, 0.7)))
            trunk = np.maximum(np.abs(xx - x - w / 2) - 2, np.maximum(cy - yy, yy - horizon - 3))
            _paint(img, _soft(trunk), (0.1, 0.2))
        else:  # pole / sign
            d = np.maximum(np.abs(xx - x - w / 2) - 1.5, np.maximum(height * 0.2 - yy, yy - horizon - 2))
            _paint(img, _soft(d), _color(rng, 0.0, 0.5))
            sign = np.maximum(np.abs(xx - x - w / 2) - 7, np.abs(yy - height * 0.25) - 5)
            _paint(img, _soft(sign), _color(rng))
        x += w + rng.uniform(0, 20)
    return np.clip(img, 0, 1).astype(np.float32)


def traverse(n_places=200, size=75, shift=10, spacing=30, seed=3, photometric=0.25):
    """Reference and query views of one synthetic route.

    Place ``i`` is a crop of a long panorama starting at ``i * spacing``;
    its query is the same crop shifted laterally by ``shift`` output pixels,
    with a per-image brightness/contrast change of up to ``photometric`` and
    mild sensor noise.
    """
    rng = np.random.default_rng(seed)
    crop = int(round(size * 1.2))
    px_shift = int(round(shift * crop / size))
    width = n_places * spacing + crop + px_shift + 1
    pano = _panorama(width, crop, rng)
    refs, queries = [], []
    for i in range(n_places):
        x0 = i * spacing
        refs.append(resize_bilinear(pano[:, :, x0:x0 + crop], size, size))
        q = resize_bilinear(pano[:, :, x0 + px_shift:x0 + px_shift + crop], size, size)
        gain = 1 + rng.uniform(-photometric, photometric)
        mean = q.mean()
        q = (q - mean) * (1 + rng.uniform(-photometric, photometric)) + mean * gain
        q = q + rng.normal(0, 0.02, q.shape)
        queries.append(np.clip(q, 0, 1))
    return np.stack(refs).astype(np.float32), np.stack(queries).astype(np.float32)
