"""Dataset I/O, scenario construction and a synthetic domain-shift generator.

Two text formats are read:

* dense CSV, one instance per line: ``f_1,...,f_d,label,domain``;
* sparse, one instance per line: ``label domain idx:val idx:val ...`` with
  zero-based feature indices.

A label of ``-1`` marks an unlabeled instance. Lines starting with ``#``
are comments.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    InconsistentWidth,
    InsufficientTargetLabels,
    LabelOutOfRange,
    NegativeIndex,
    ParseError,
)
from .linalg import as_mat
from .marginalize import SOURCE, TARGET, UNLABELED

SCENARIOS = ("US", "SUP", "SS")
VARIANCE_FLOOR = 1e-12


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    domain: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = as_mat(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domain = np.asarray(self.domain).astype(str)
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("a dataset needs at least one row")
        if self.labels.shape != (n,) or self.domain.shape != (n,):
            raise ValueError("labels and domain must have one entry per row")
        bad = (self.labels != UNLABELED) & ((self.labels < 0) | (self.labels >= self.class_count))
        if bad.any():
            raise LabelOutOfRange(
                f"label {self.labels[bad][0]} outside [0, {self.class_count})"
            )

    @property
    def n_features(self):
        return self.features.shape[1]

    def __len__(self):
        return self.features.shape[0]

    def domains(self):
        """Domain tokens in order of first appearance."""
        _, first = np.unique(self.domain, return_index=True)
        return [str(self.domain[i]) for i in sorted(first)]

    def subset(self, mask):
        return Dataset(
            self.features[mask], self.labels[mask], self.domain[mask], self.class_count
        )

    def by_domain(self, name):
        mask = self.domain == name
        if not mask.any():
            raise KeyError(f"no rows with domain {name!r}")
        return self.subset(mask)


def concat(datasets):
    datasets = list(datasets)
    widths = {d.n_features for d in datasets}
    if len(widths) != 1:
        raise InconsistentWidth(f"datasets disagree on feature count: {sorted(widths)}")
    return Dataset(
        np.vstack([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        np.concatenate([d.domain for d in datasets]),
        max(d.class_count for d in datasets),
    )


def _data_lines(path):
    with open(path, encoding="utf-8", newline=None) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_label(token, lineno, path):
    try:
        label = int(token)
    except ValueError:
        raise ParseError(f"label {token!r} is not an integer", lineno, path) from None
    if label < UNLABELED:
        raise ParseError(f"label {label} is negative (use -1 for unlabeled)", lineno, path)
    return label


def _class_count(labels, class_count):
    top = int(labels.max()) + 1 if labels.size else 0
    if class_count is None:
        return max(top, 1)
    if top > class_count:
        raise LabelOutOfRange(f"label {top - 1} outside [0, {class_count})")
    return class_count


def load_dense(path, class_count=None):
    """Read the dense CSV format into a :class:`Dataset`."""
    rows, labels, domains = [], [], []
    width = None
    for lineno, line in _data_lines(path):
        parts = [t.strip() for t in line.split(",")]
        if len(parts) < 3:
            raise InconsistentWidth(
                f"expected at least one feature, a label and a domain; got {len(parts)} fields",
                lineno,
                path,
            )
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise InconsistentWidth(
                f"expected {width} fields, got {len(parts)}", lineno, path
            )
        try:
            feats = [float(t) for t in parts[:-2]]
        except ValueError as exc:
            raise ParseError(f"bad feature value ({exc})", lineno, path) from None
        if not all(np.isfinite(feats)):
            raise ParseError("non-finite feature value", lineno, path)
        labels.append(_parse_label(parts[-2], lineno, path))
        if not parts[-1]:
            raise ParseError("empty domain token", lineno, path)
        domains.append(parts[-1])
        rows.append(feats)
    if not rows:
        raise ParseError("no data rows", None, path)
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows), labels, np.asarray(domains), _class_count(labels, class_count))


def load_sparse(path, n_features=None, class_count=None):
    """Read the sparse ``label domain idx:val ...`` format.

    The width is ``1 + max index`` unless ``n_features`` is given.
    """
    entries, labels, domains = [], [], []
    top = -1
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) < 2:
            raise ParseError("expected a label and a domain", lineno, path)
        labels.append(_parse_label(parts[0], lineno, path))
        domains.append(parts[1])
        row = {}
        for tok in parts[2:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"entry {tok!r} is not idx:val", lineno, path)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"entry {tok!r} is not idx:val", lineno, path) from None
            if idx < 0:
                raise NegativeIndex(f"negative feature index {idx}", lineno, path)
            if idx in row:
                raise ParseError(f"duplicate feature index {idx}", lineno, path)
            if not np.isfinite(val):
                raise ParseError("non-finite feature value", lineno, path)
            if n_features is not None and idx >= n_features:
                raise ParseError(
                    f"feature index {idx} exceeds declared width {n_features}", lineno, path
                )
            row[idx] = val
            top = max(top, idx)
        entries.append(row)
    if not entries:
        raise ParseError("no data rows", None, path)
    d = n_features if n_features is not None else top + 1
    x = np.zeros((len(entries), max(d, 1)))
    for i, row in enumerate(entries):
        for j, v in row.items():
            x[i, j] = v
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(x, labels, np.asarray(domains), _class_count(labels, class_count))


def write_dense(dataset, path):
    """Write ``dataset`` in the dense format; floats keep 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + ",".join([f"f{j}" for j in range(dataset.n_features)] + ["label", "domain"]) + "\n")
        for feats, label, dom in zip(dataset.features, dataset.labels, dataset.domain):
            fh.write(",".join(format(v, ".17g") for v in feats))
            fh.write(f",{int(label)},{dom}\n")


def make_label_matrix(labels, class_count):
    """One-vs-rest targets: ``+1`` at the true class, ``-1`` elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        bad = labels[(labels < 0) | (labels >= class_count)][0]
        raise LabelOutOfRange(f"label {bad} outside [0, {class_count})")
    y = -np.ones((labels.size, class_count))
    y[np.arange(labels.size), labels] = 1.0
    return y


def standardize(train_stats_from, apply_to):
    """Zero-mean, unit-variance features using statistics of the first argument.

    Features whose variance is below ``1e-12`` are only centered.
    """
    ref = as_mat(train_stats_from, "train_stats_from")
    x = as_mat(apply_to, "apply_to")
    if ref.shape[0] == 0:
        raise ValueError("cannot standardize with statistics from zero rows")
    mean = ref.mean(axis=0)
    var = ref.var(axis=0)
    scale = np.where(var < VARIANCE_FLOOR, 1.0, np.sqrt(var))
    return (x - mean) / scale


@dataclass
class ScenarioSplit:
    """Training matrices of one adaptation task under a given scenario.

    ``domain_tags`` annotates the rows of ``x_all`` with ``"source"`` or
    ``"target"``; ``labeled_domain_tags``/``labeled_labels`` annotate
    ``x_labeled``. ``test_rows`` index into the target dataset and are
    never part of ``x_labeled``. ``x_all_target_index`` maps each row of
    ``x_all`` to its target index (``-1`` for source rows).
    """

    x_all: np.ndarray
    x_labeled: np.ndarray
    y_labeled: np.ndarray
    labeled_labels: np.ndarray
    domain_tags: np.ndarray
    labeled_domain_tags: np.ndarray
    scenario: str
    test_rows: np.ndarray
    x_test: np.ndarray
    test_labels: np.ndarray
    labeled_target_rows: np.ndarray
    x_all_target_index: np.ndarray
    class_count: int


def _scenario_name(scenario):
    name = str(scenario).upper()
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return name


def required_classes(source, target):
    labels = np.concatenate([source.labels, target.labels])
    return np.unique(labels[labels != UNLABELED])


def check_target_labels(source, target, labeled_per_class):
    """Classes lacking ``labeled_per_class`` labeled target rows, as ``(class, available)``."""
    short = []
    for c in required_classes(source, target):
        available = int(np.sum(target.labels == c))
        if available < labeled_per_class:
            short.append((int(c), available))
    return short


def build_scenario(source, target, scenario, labeled_per_class=3, seed=0):
    """Arrange a source/target pair into the US, SUP or SS training setup.

    In SUP and SS, ``labeled_per_class`` target rows per class are drawn
    without replacement (PCG64 seeded with ``seed``); the remaining labeled
    target rows are the test set. US uses every labeled target row for
    testing. Unlabeled target rows only ever enter ``x_all``.
    """
    scenario = _scenario_name(scenario)
    if source.n_features != target.n_features:
        raise InconsistentWidth(
            f"source has {source.n_features} features, target {target.n_features}"
        )
    class_count = max(source.class_count, target.class_count)
    rng = np.random.Generator(np.random.PCG64(seed))

    src_lab = np.flatnonzero(source.labels != UNLABELED)
    src_unl = np.flatnonzero(source.labels == UNLABELED)
    tgt_lab = np.flatnonzero(target.labels != UNLABELED)
    if scenario == "US":
        chosen = np.empty(0, dtype=np.int64)
    else:
        short = check_target_labels(source, target, labeled_per_class)
        if short:
            cls, available = short[0]
            raise InsufficientTargetLabels(cls, available, labeled_per_class)
        picks = []
        for c in required_classes(source, target):
            pool = np.flatnonzero(target.labels == c)
            picks.append(np.sort(rng.choice(pool, size=labeled_per_class, replace=False)))
        chosen = np.concatenate(picks) if picks else np.empty(0, dtype=np.int64)
    test_rows = np.setdiff1d(tgt_lab, chosen)
    rest = np.setdiff1d(np.arange(len(target)), chosen)

    if scenario == "US":
        src_rows = np.concatenate([src_lab, src_unl])
        tgt_rows = np.arange(len(target))
    elif scenario == "SUP":
        src_rows = src_lab
        tgt_rows = chosen
    else:
        src_rows = np.concatenate([src_lab, src_unl])
        tgt_rows = np.concatenate([chosen, rest])

    x_all = np.vstack([source.features[src_rows], target.features[tgt_rows]])
    domain_tags = np.array([SOURCE] * src_rows.size + [TARGET] * tgt_rows.size)
    x_all_target_index = np.concatenate([-np.ones(src_rows.size, dtype=np.int64), tgt_rows])

    x_labeled = np.vstack([source.features[src_lab], target.features[chosen]])
    labeled_labels = np.concatenate([source.labels[src_lab], target.labels[chosen]])
    labeled_tags = np.array([SOURCE] * src_lab.size + [TARGET] * chosen.size)

    return ScenarioSplit(
        x_all=x_all,
        x_labeled=x_labeled,
        y_labeled=make_label_matrix(labeled_labels, class_count),
        labeled_labels=labeled_labels,
        domain_tags=domain_tags,
        labeled_domain_tags=labeled_tags,
        scenario=scenario,
        test_rows=test_rows,
        x_test=target.features[test_rows],
        test_labels=target.labels[test_rows],
        labeled_target_rows=chosen,
        x_all_target_index=x_all_target_index,
        class_count=class_count,
    )


def standardize_split(split):
    """Standardize all matrices of ``split`` with statistics of ``x_all``."""
    ref = split.x_all
    return ScenarioSplit(
        **{
            **split.__dict__,
            "x_all": standardize(ref, split.x_all),
            "x_labeled": standardize(ref, split.x_labeled),
            "x_test": standardize(ref, split.x_test) if split.x_test.shape[0] else split.x_test,
        }
    )


def audit_split(split):
    """Raise if any test row leaked into the labeled training data."""
    leaked = np.intersect1d(split.test_rows, split.labeled_target_rows)
    if leaked.size:
        raise AssertionError(f"test rows {leaked[:5].tolist()} are labeled training rows")
    in_all = split.x_all_target_index[split.x_all_target_index >= 0]
    if split.scenario == "SUP" and np.intersect1d(in_all, split.test_rows).size:
        raise AssertionError("SUP training data contains test rows")
    if split.x_labeled.shape[0] != split.labeled_labels.size:
        raise AssertionError("labeled rows and labels disagree")


def _random_rotation_plane(rng, d):
    basis, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    return basis


def synth_domains(
    seed,
    n_domains,
    d,
    class_count,
    n_per_class,
    shift_magnitude,
    rotation_angle,
    class_std=1.0,
    separation=4.0,
    names=None,
):
    """Several domains sharing Gaussian class blobs; see :func:`synth_shift`.

    Domain 0 is the undistorted distribution. Every further domain gets its
    own random rotation plane and translation direction.
    """
    if d < 2 or class_count < 2:
        raise ValueError("synthetic data needs d >= 2 and class_count >= 2")
    if n_domains < 1:
        raise ValueError("n_domains must be >= 1")
    names = list(names) if names is not None else [f"synth{k}" for k in range(n_domains)]
    if len(names) != n_domains:
        raise ValueError("one name per domain required")
    rng = np.random.Generator(np.random.PCG64(seed))
    means = rng.standard_normal((class_count, d))
    means *= separation * class_std / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(class_count), n_per_class)
    out = []
    for k in range(n_domains):
        x = means[labels] + class_std * rng.standard_normal((labels.size, d))
        if k > 0:
            plane = _random_rotation_plane(rng, d)
            coords = x @ plane
            cos, sin = np.cos(rotation_angle), np.sin(rotation_angle)
            rotated = coords @ np.array([[cos, sin], [-sin, cos]])
            x = x + (rotated - coords) @ plane.T
            direction = rng.standard_normal(d)
            x = x + shift_magnitude * direction / np.linalg.norm(direction)
        out.append(Dataset(x, labels.copy(), np.full(labels.size, names[k]), class_count))
    return out


def synth_shift(
    seed,
    d,
    class_count,
    n_per_class,
    shift_magnitude,
    rotation_angle,
    class_std=1.0,
    separation=4.0,
):
    """Gaussian-blob source and a translated, rotated copy as target.

    Class means lie on a sphere of radius ``separation * class_std``;
    every class is isotropic with standard deviation ``class_std``. The
    target draws fresh samples from the same blobs, rotates them by
    ``rotation_angle`` radians within a random 2-plane through the origin
    and translates them by a random vector of norm ``shift_magnitude``.
    Domains are tagged ``"source"`` and ``"target"``.
    """
    source, target = synth_domains(
        seed, 2, d, class_count, n_per_class, shift_magnitude, rotation_angle,
        class_std=class_std, separation=separation, names=("source", "target"),
    )
    return source, target


def class_radius(d, class_std=1.0):
    """RMS distance of a blob sample from its centroid."""
    return class_std * np.sqrt(d)
