"""Evaluation: KC similarity, scanning classification, SNN selectivity and VPR."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .images import greyscale, resize_bilinear

DEFAULT_KS = (1, 5, 10, 15, 20, 25)


# ---------------------------------------------------------------------------
# similarity

def cosine_similarity(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"cosine_similarity: size mismatch {x.size} vs {y.size}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("cosine_similarity: zero vector")
    return float(x @ y / (nx * ny))


def cosine_matrix(queries, references, allow_zero=False):
    """Pairwise cosine similarities (Q, R).

    Zero rows are an error unless ``allow_zero``, in which case they score 0
    against everything.
    """
    q = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
    r = np.asarray(references, dtype=np.float64).reshape(len(references), -1)
    nq = np.linalg.norm(q, axis=1, keepdims=True)
    nr = np.linalg.norm(r, axis=1, keepdims=True)
    if not allow_zero and (np.any(nq == 0) or np.any(nr == 0)):
        raise ValueError("cosine_matrix: zero-norm code")
    nq[nq == 0] = 1.0
    nr[nr == 0] = 1.0
    return (q / nq) @ (r / nr).T


@dataclass
class SimilarityMatrix:
    scores: np.ndarray
    query_ids: list = None
    reference_ids: list = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        q, r = self.scores.shape
        self.query_ids = list(range(q)) if self.query_ids is None else list(self.query_ids)
        self.reference_ids = (list(range(r)) if self.reference_ids is None
                              else list(self.reference_ids))

    @property
    def shape(self):
        return self.scores.shape


def class_similarity(codes_a, codes_b):
    """Within/between class cosine statistics for two stacks of KC codes."""
    codes_a, codes_b = np.asarray(codes_a), np.asarray(codes_b)
    sim = cosine_matrix(np.concatenate([codes_a, codes_b]),
                        np.concatenate([codes_a, codes_b]), allow_zero=True)
    na = len(codes_a)
    n = min(na, len(codes_b))
    off = ~np.eye(len(sim), dtype=bool)
    intra_a = sim[:na, :na][off[:na, :na]].mean()
    intra_b = sim[na:, na:][off[na:, na:]].mean()
    inter = sim[:na, na:].mean()
    return {
        "intra_a": float(intra_a),
        "intra_b": float(intra_b),
        "intra": float((intra_a + intra_b) / 2),
        "inter": float(inter),
        # whole concatenated code matrices compared directly
        "inter_concatenated": cosine_similarity(codes_a[:n], codes_b[:n]),
        "matrix": sim,
    }


# ---------------------------------------------------------------------------
# temporal scanning

def scan_accumulate(kc_stream, kappa=0.9):
    """Leaky running sum ``acc <- acc * kappa + kc_t`` over a non-empty stream."""
    stream = list(kc_stream)
    if not stream:
        raise ValueError("scan_accumulate: empty stream")
    acc = np.zeros_like(np.asarray(stream[0], dtype=np.float64))
    for kc in stream:
        acc = acc * kappa + np.asarray(kc, dtype=np.float64)
    return acc


@dataclass
class ScanPath:
    origins: list
    patch_size: int = 75
    seed: object = None

    @property
    def steps(self):
        return len(self.origins)


def generate_scan_paths(image_size, n_paths=10, steps=16, seed=0, patch_size=75, max_step=40):
    """Seeded random walks of patch origins (x, y) that stay inside the image."""
    h, w = (image_size, image_size) if np.isscalar(image_size) else image_size[-2:]
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} smaller than {patch_size}px patch")
    ymax, xmax = h - patch_size, w - patch_size
    rng = np.random.default_rng(seed)
    paths = []
    for p in range(n_paths):
        y, x = int(rng.integers(0, ymax + 1)), int(rng.integers(0, xmax + 1))
        origins = [(x, y)]
        for _ in range(steps - 1):
            y = int(np.clip(y + rng.integers(-max_step, max_step + 1), 0, ymax))
            x = int(np.clip(x + rng.integers(-max_step, max_step + 1), 0, xmax))
            origins.append((x, y))
        paths.append(ScanPath(origins, patch_size, (seed, p)))
    return paths


def extract_patches(image, path: ScanPath):
    s = path.patch_size
    return np.stack([image[:, y:y + s, x:x + s] for x, y in path.origins])


def scan_features(encode, image, paths, kappa=0.9):
    """Accumulated KC code per scan path for one image: (n_paths, dim)."""
    patches = np.concatenate([extract_patches(image, p) for p in paths])
    codes = encode(patches)
    out, i = [], 0
    for p in paths:
        out.append(scan_accumulate(codes[i:i + p.steps], kappa))
        i += p.steps
    return np.stack(out)


def scanning_dataset(encode, images, labels, n_paths=10, steps=16, kappa=0.9, seed=0,
                     patch_size=75, max_step=40):
    """Features, labels and source-image ids for every (image, path)."""
    feats, ys, groups = [], [], []
    for i, (img, y) in enumerate(zip(images, labels)):
        paths = generate_scan_paths(img.shape[-2:], n_paths, steps, (seed, i), patch_size,
                                    max_step)
        f = scan_features(encode, img, paths, kappa)
        feats.append(f)
        ys.extend([y] * len(f))
        groups.extend([i] * len(f))
    return np.concatenate(feats), np.array(ys), np.array(groups)


# ---------------------------------------------------------------------------
# linear read-out

class LinearClassifier:
    """Multinomial L2-regularised logistic regression on standardised features."""

    def __init__(self, c=1.0, tol=1e-4, max_iter=1000, seed=0):
        self.c, self.tol, self.max_iter, self.seed = c, tol, max_iter, seed

    def fit(self, features, labels):
        from sklearn.linear_model import LogisticRegression

        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels)
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError("need at least two classes")
        if len(y) <= len(classes):
            raise ValueError("need more samples than classes")
        self.mean_ = x.mean(axis=0)
        self.scale_ = x.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        self.model_ = LogisticRegression(C=self.c, tol=self.tol, max_iter=self.max_iter,
                                         random_state=self.seed)
        self.model_.fit((x - self.mean_) / self.scale_, y)
        return self

    def predict(self, features):
        x = np.asarray(features, dtype=np.float64)
        return self.model_.predict((x - self.mean_) / self.scale_)

    def score(self, features, labels):
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def fit_linear_classifier(features, labels, c=1.0, seed=0):
    return LinearClassifier(c=c, seed=seed).fit(features, labels)


def classify(classifier, features):
    return classifier.predict(features)


def group_split(labels, groups, test_fraction, seed):
    """Stratified split by source image: all paths of an image share a side."""
    rng = np.random.default_rng(seed)
    test = np.zeros(len(labels), dtype=bool)
    for y in np.unique(labels):
        ids = np.unique(groups[labels == y])
        n_test = max(1, int(round(test_fraction * len(ids))))
        chosen = rng.choice(ids, size=n_test, replace=False)
        test |= np.isin(groups, chosen)
    return ~test, test


def classification_accuracy(features, labels, groups=None, seeds=8, test_fraction=0.2, c=1.0):
    """Held-out accuracy for each of ``seeds`` random stratified splits."""
    labels = np.asarray(labels)
    groups = np.arange(len(labels)) if groups is None else np.asarray(groups)
    accs = []
    for s in range(seeds):
        train, test = group_split(labels, groups, test_fraction, s)
        clf = fit_linear_classifier(features[train], labels[train], c=c, seed=s)
        accs.append(clf.score(features[test], labels[test]))
    return np.array(accs)


# ---------------------------------------------------------------------------
# spiking-code analytics

def class_mean_rates(rates, labels):
    labels = np.asarray(labels)
    classes = np.unique(labels)
    return np.stack([np.asarray(rates)[labels == c].mean(axis=0) for c in classes])


def selectivity_index(rates, epsilon=1e-9, mode="verbatim", percentile=90):
    """Per-neuron selectivity and its 90th-percentile summary.

    ``rates`` is (classes, neurons).  ``verbatim`` is
    ``(r_max - r_others) / (r_max - r_others + eps)``; ``contrast`` uses
    ``r_max + r_others`` in the denominator.
    """
    rates = np.asarray(rates, dtype=np.float64)
    n_classes = rates.shape[0]
    best = rates.argmax(axis=0)
    r_max = rates.max(axis=0)
    r_others = (rates.sum(axis=0) - r_max) / max(n_classes - 1, 1)
    diff = r_max - r_others
    if mode == "verbatim":
        si = diff / (diff + epsilon)
    elif mode == "contrast":
        si = diff / (r_max + r_others + epsilon)
    else:
        raise ValueError(f"unknown selectivity mode {mode!r}")
    si[diff == 0] = 0.0
    return si, float(np.percentile(si, percentile)), best


def topk_overlap(rates, k=32):
    """Mean pairwise |top-k(a) & top-k(b)| / k over class rate vectors."""
    rates = np.asarray(rates)
    if k > rates.shape[1]:
        raise ValueError("k larger than the number of neurons")
    # stable order: ties resolved by neuron index
    tops = [set(np.argsort(-r, kind="stable")[:k]) for r in rates]
    vals = [len(tops[i] & tops[j]) / k for i in range(len(tops)) for j in range(i + 1, len(tops))]
    return float(np.mean(vals)) if vals else 1.0


def active_count(codes, threshold=0.0):
    """Entries strictly above ``threshold`` (per row for 2-d input)."""
    codes = np.asarray(codes)
    counts = (codes > threshold).sum(axis=-1)
    return int(counts) if np.ndim(counts) == 0 else counts


# ---------------------------------------------------------------------------
# place recognition

def sad_distance(query, reference):
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if q.shape != r.shape:
        raise ValueError(f"sad_distance: shape mismatch {q.shape} vs {r.shape}")
    return float(np.abs(q - r).mean())


def sad_prepare(images, resolution=32):
    """Greyscale (channel mean) downsampled copies used by the SAD baseline."""
    return np.stack([resize_bilinear(greyscale(img), resolution, resolution) for img in images])


def sad_similarity(queries, references):
    """Negative mean absolute difference (Q, R)."""
    q = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
    r = np.asarray(references, dtype=np.float64).reshape(len(references), -1)
    return -np.stack([np.abs(r - qi).mean(axis=1) for qi in q])


@dataclass
class VPRResult:
    recall_at_k: dict
    similarity: SimilarityMatrix
    tolerance: int = 3
    ranks: np.ndarray = field(default=None, repr=False)


def recall_at_k(similarity, ground_truth=None, tolerance=3, ks=DEFAULT_KS):
    """Fraction of queries with a reference within ``tolerance`` places in their top K."""
    sim = similarity if isinstance(similarity, SimilarityMatrix) else SimilarityMatrix(similarity)
    scores = sim.scores
    if scores.size == 0:
        raise ValueError("recall_at_k: empty similarity matrix")
    n_q, n_r = scores.shape
    gt = np.arange(n_q) if ground_truth is None else np.asarray(ground_truth)
    order = np.argsort(-scores, axis=1, kind="stable")
    hit = np.abs(order - gt[:, None]) <= tolerance
    # rank (0-based) of the first correct reference, n_r if none
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), n_r)
    recall = {int(k): float(np.mean(first < k)) for k in ks}
    return VPRResult(recall, sim, tolerance, first)


def run_vpr(references, queries, encoders, tolerance=3, ks=DEFAULT_KS, sad_res=32,
            ground_truth=None):
    """Recall@K for each encoder.

    ``encoders`` maps a name to a callable turning an image stack into
    codes, or to the string ``"sad"`` for the pixel baseline.
    """
    results = {}
    for name, enc in encoders.items():
        if isinstance(enc, str) and enc == "sad":
            scores = sad_similarity(sad_prepare(queries, sad_res), sad_prepare(references, sad_res))
        else:
            scores = cosine_matrix(enc(queries), enc(references), allow_zero=True)
        results[name] = recall_at_k(SimilarityMatrix(scores), ground_truth, tolerance, ks)
    return results


# ---------------------------------------------------------------------------
# CSV emission (9 significant digits, rows in id order)

def _fmt(x):
    return format(float(x), ".9g")


def write_recall_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["encoder", "K", "recall"])
        for name in sorted(results):
            for k in sorted(results[name].recall_at_k):
                w.writerow([name, k, _fmt(results[name].recall_at_k[k])])


def write_matrix_csv(path, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([_fmt(v) for v in row])


def write_vpr_outputs(out_dir, results):
    os.makedirs(out_dir, exist_ok=True)
    write_recall_csv(os.path.join(out_dir, "recall.csv"), results)
    for name, res in results.items():
        write_matrix_csv(os.path.join(out_dir, f"similarity_{name}.csv"), res.similarity.scores)


def write_classification_csv(path, rows):
    """``rows``: iterable of (seed, checkpoint label, accuracy)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "checkpoint", "accuracy"])
        for seed, ckpt, acc in sorted(rows, key=lambda r: (str(r[1]), r[0])):
            w.writerow([seed, ckpt, _fmt(acc)])


def write_selectivity_csv(path, si):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["neuron", "SI"])
        for i, v in enumerate(si):
            w.writerow([i, _fmt(v)])


def read_matrix_csv(path):
    with open(path) as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def spiking_statistics(rates, labels, topk=32, epsilon=1e-9, mode="verbatim"):
    """Active counts, selectivity and top-k overlap for per-image KC rates."""
    rates = np.asarray(rates, dtype=np.float64)
    per_class = class_mean_rates(rates, labels)
    si, si_summary, _ = selectivity_index(per_class, epsilon, mode)
    counts = active_count(rates)
    return {
        "active_mean": float(np.mean(counts)),
        "active_counts": counts,
        "si": si,
        "si_p90": si_summary,
        "topk_overlap": topk_overlap(per_class, topk),
    }
