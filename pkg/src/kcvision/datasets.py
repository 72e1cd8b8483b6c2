"""On-disk dataset layouts: class-per-directory sets and flat traverses."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .images import list_images, load_image_bg, save_bg_png


@dataclass
class DatasetManifest:
    root: str
    layout: str  # "classes" or "traverse"
    entries: list = field(default_factory=list)  # (path, class index or sequence index)
    class_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [p for p, _ in self.entries]

    @property
    def labels(self):
        return np.array([y for _, y in self.entries])

    def load(self, size=None):
        """Decode every entry; ``size=None`` keeps native resolution."""
        return [load_image_bg(p, size) for p in self.paths]


def class_manifest(root, per_class=None, flat_class_size=80):
    """Class-per-directory layout (sorted names).

    A flat folder of images is read as consecutive blocks of
    ``flat_class_size`` files per class (the original flower-set layout).
    """
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} is not a directory")
    subdirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    entries, names = [], []
    if subdirs:
        for y, d in enumerate(subdirs):
            files = list_images(os.path.join(root, d))
            if per_class:
                files = files[:per_class]
            entries += [(f, y) for f in files]
            names.append(d)
    else:
        files = list_images(root)
        n_classes = len(files) // flat_class_size
        for y in range(n_classes):
            block = files[y * flat_class_size:(y + 1) * flat_class_size]
            if per_class:
                block = block[:per_class]
            entries += [(f, y) for f in block]
            names.append(f"class_{y + 1:02d}")
    if len(names) < 2 or not entries:
        raise ValueError(f"{root}: need at least two classes of images")
    return DatasetManifest(root, "classes", entries, names)


def traverse_manifest(root):
    files = list_images(root)
    if not files:
        raise ValueError(f"{root}: no images found")
    return DatasetManifest(root, "traverse", [(f, i) for i, f in enumerate(files)])


def read_index_map(path):
    """CSV of ``query,reference`` index pairs -> ground-truth array (query order)."""
    pairs = {}
    with open(path) as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip().lstrip("-").isdigit():
                continue  # header or blank
            pairs[int(row[0])] = int(row[1])
    if not pairs:
        raise ValueError(f"{path}: empty index map")
    n = max(pairs) + 1
    missing = [q for q in range(n) if q not in pairs]
    if missing:
        raise ValueError(f"{path}: no reference given for query {missing[0]}")
    return np.array([pairs[q] for q in range(n)])


# ---------------------------------------------------------------------------
# synthetic fixtures on disk

def _write_set(images, folder, prefix="img"):
    os.makedirs(folder, exist_ok=True)
    for i, img in enumerate(images):
        save_bg_png(img, os.path.join(folder, f"{prefix}_{i:04d}.png"))


def write_fixtures(out, n_train=200, per_class=12, n_places=200, seed=0):
    """Write the synthetic training, flower, lavender/sunflower and traverse sets."""
    if n_train > 0:
        _write_set(synth.natural_images(n_train, seed=seed), os.path.join(out, "train"))
    imgs, labels = synth.flower_dataset(per_class=per_class, seed=seed)
    for y in np.unique(labels):
        _write_set(imgs[labels == y], os.path.join(out, "flowers", f"species_{y + 1:02d}"))
    lav, sun = synth.lavender_sunflower()
    _write_set(lav, os.path.join(out, "lavender"))
    _write_set(sun, os.path.join(out, "sunflower"))
    refs, queries = synth.traverse(n_places)
    _write_set(refs, os.path.join(out, "traverse", "reference"))
    _write_set(queries, os.path.join(out, "traverse", "query"))
    return out
