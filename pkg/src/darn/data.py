"""Multi-domain datasets: synthetic generators, a sparse text loader, batching."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, ParseError
from .sparse import SparseRows


@dataclass(frozen=True)
class DomainDataset:
    features: object  # (m, d) ndarray or SparseRows
    labels: np.ndarray = None
    name: str = ""
    labelled: bool = True

    def __post_init__(self):
        if self.labelled:
            if self.labels is None or len(self.labels) != len(self.features):
                raise InvalidInputError(f"{self.name}: label count does not match feature rows")

    def __len__(self):
        return len(self.features)

    @property
    def dim(self):
        return self.features.shape[1]

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        X = self.features.take(rows) if isinstance(self.features, SparseRows) else self.features[rows]
        y = self.labels[rows] if self.labels is not None else None
        return X, y

    def unlabelled(self):
        return DomainDataset(self.features, None, self.name, labelled=False)


@dataclass(frozen=True)
class MultiDomainDataset:
    sources: list
    target_train: DomainDataset
    target_eval: DomainDataset
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sources) < 1:
            raise InvalidInputError("need at least one source domain")
        dims = {d.dim for d in [*self.sources, self.target_train, self.target_eval]}
        if len(dims) != 1:
            raise InvalidInputError(f"domains disagree on feature dimension: {sorted(dims)}")

    @property
    def k(self):
        return len(self.sources)

    @property
    def dim(self):
        return self.target_train.dim


def _rotation(deg):
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def class_means(angle, radius=3.0, separation=2.0):
    """Class-0 and class-1 means of a rotated domain, shape (2, 2).

    Unrotated, the two blobs sit at (radius, -separation/2) and
    (radius, +separation/2); the whole layout is rotated about the origin.
    """
    base = np.array([[radius, -separation / 2], [radius, separation / 2]])
    return base @ _rotation(angle).T


def bayes_normal(angle):
    """Unit normal of the optimal boundary, pointing towards class 1."""
    return _rotation(angle) @ np.array([0.0, 1.0])


def _blobs(rng, m, angle, noise, radius, separation):
    means = class_means(angle, radius, separation)
    y = np.repeat([0, 1], m // 2)
    X = means[y] + noise * rng.normal(size=(m, 2))
    perm = rng.permutation(m)
    return X[perm], y[perm]


def gen_rotated_gaussians(k, m, angles, noise, seed, radius=3.0, separation=2.0):
    """k labelled source domains plus a target, two Gaussian classes each.

    ``angles`` (degrees) has k + 1 entries: sources first, target last. The
    target's m points are split in half: unlabelled train, labelled eval.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if m < 2 or m % 2:
        raise InvalidInputError("m must be an even number >= 2")
    if len(angles) != k + 1:
        raise InvalidInputError(f"expected {k + 1} angles, got {len(angles)}")
    if noise < 0:
        raise InvalidInputError("noise must be non-negative")
    ss = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(k + 1)]
    sources = []
    for i in range(k):
        X, y = _blobs(rngs[i], m, angles[i], noise, radius, separation)
        sources.append(DomainDataset(X, y, f"src{i}@{angles[i]:g}"))
    X, y = _blobs(rngs[k], m, angles[k], noise, radius, separation)
    half = m // 2
    name = f"tgt@{angles[k]:g}"
    target_train = DomainDataset(X[:half], None, name + "/train", labelled=False)
    target_eval = DomainDataset(X[half:], y[half:], name + "/eval")
    meta = {"generator": "rotated_gaussians", "angles": list(angles), "noise": noise, "seed": seed}
    return MultiDomainDataset(sources, target_train, target_eval, meta)


def flip_labels(dataset, fraction, seed, n_classes=None):
    """Replace the labels of floor(fraction * m) randomly chosen rows.

    Binary labels are inverted; with more classes each chosen row gets a
    different class drawn uniformly.
    """
    if not dataset.labelled:
        raise InvalidInputError("cannot flip labels of an unlabelled dataset")
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError("fraction must be in [0, 1]")
    m = len(dataset)
    rng = np.random.default_rng(seed)
    n_flip = int(np.floor(fraction * m))
    rows = rng.choice(m, size=n_flip, replace=False)
    y = np.array(dataset.labels, copy=True)
    n_classes = n_classes or int(y.max()) + 1
    if n_classes <= 2:
        y[rows] = 1 - y[rows]
    else:
        y[rows] = (y[rows] + rng.integers(1, n_classes, size=n_flip)) % n_classes
    return replace(dataset, labels=y, name=dataset.name + f"/flip{fraction:g}")


def make_benchmark(seed, m=500, source_angles=(0.0, 15.0, 30.0), target_angle=10.0, adversarial=(0,), noise=0.5):
    """Default synthetic benchmark: rotated sources plus label-flipped copies
    of the sources listed in ``adversarial`` (appended at the end)."""
    k = len(source_angles)
    if any(not 0 <= i < k for i in adversarial):
        raise InvalidInputError(f"adversarial indices must be in [0, {k})")
    ds = gen_rotated_gaussians(k, m, [*source_angles, target_angle], noise, seed)
    sources = list(ds.sources)
    for j, i in enumerate(adversarial):
        sources.append(flip_labels(ds.sources[i], 1.0, seed=[seed, 7919, j]))
    meta = dict(ds.meta, adversarial=list(adversarial))
    return MultiDomainDataset(sources, ds.target_train, ds.target_eval, meta)


# -- sparse text -------------------------------------------------------------
# One example per line: "<label> <index>:<value> <index>:<value> ...",
# 0-based indices, whitespace separated.


def _parse_label(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", lineno) from None
    return v


def load_sparse_text(path, dim=None, name=None):
    rows, labels = [], []
    max_idx = -1
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            labels.append(_parse_label(parts[0], lineno))
            idx, val = [], []
            for tok in parts[1:]:
                a, sep, b = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected index:value, got {tok!r}", lineno)
                try:
                    j, v = int(a), float(b)
                except ValueError:
                    raise ParseError(f"bad pair {tok!r}", lineno) from None
                if j < 0 or (dim is not None and j >= dim):
                    raise ParseError(f"index {j} outside dimension {dim}", lineno)
                idx.append(j)
                val.append(v)
                max_idx = max(max_idx, j)
            rows.append((idx, val))
    n_cols = dim if dim is not None else max_idx + 1
    y = np.array(labels, dtype=np.float64)
    if y.size and np.all(y == np.round(y)):
        y = y.astype(np.int64)
    X = SparseRows.from_rows(rows, max(n_cols, 0))
    return DomainDataset(X, y, name or str(path))


def save_sparse_text(path, dataset):
    X = dataset.features
    if not isinstance(X, SparseRows):
        X = SparseRows.from_dense(X)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i in range(len(X)):
            idx, val = X.row(i)
            label = dataset.labels[i].item() if dataset.labels is not None else 0
            pairs = " ".join(f"{j}:{v!r}" for j, v in zip(idx.tolist(), val.tolist()))
            f.write(f"{label!r} {pairs}".rstrip() + "\n")


# -- batching ----------------------------------------------------------------


def batch_indices(m, batch_size, epoch_seed):
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    if m == 0:
        raise InvalidInputError("empty dataset")
    perm = np.random.default_rng(epoch_seed).permutation(m)
    return [perm[i : i + batch_size] for i in range(0, m, batch_size)]


def batch_iter(dataset, batch_size, epoch_seed):
    """Shuffled (X, y) mini-batches covering every row once; last one may be short."""
    for rows in batch_indices(len(dataset), batch_size, epoch_seed):
        yield dataset.take(rows)
