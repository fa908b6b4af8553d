"""Expected corruption statistics under feature dropout.

Dropout zeroes every entry of ``X`` independently with probability ``p``
and leaves it unchanged otherwise (no rescaling). Everything here is a
closed-form expectation except :func:`monte_carlo_corrupt` and
:func:`monte_carlo_moments`, which sample corruptions explicitly and serve
as the oracle for the closed forms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyDomain, NoSharedClasses
from .linalg import as_mat

SOURCE = "source"
TARGET = "target"
UNLABELED = -1

COUPLING_KINDS = ("mmd", "class_means")
COUPLING_RULES = ("exact", "paper")


@dataclass(frozen=True)
class CorruptionLaw:
    """Feature dropout with probability ``p``."""

    p: float

    def __post_init__(self):
        if not (0.0 <= self.p < 1.0):
            raise ValueError(f"dropout probability must lie in [0, 1), got {self.p}")

    @property
    def keep(self):
        return 1.0 - self.p


def _law(law):
    return law if isinstance(law, CorruptionLaw) else CorruptionLaw(float(law))


@dataclass(frozen=True)
class CouplingMatrix:
    """Symmetric instance-coupling matrix with zero row sums."""

    n: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}")

    @property
    def size(self):
        return self.n.shape[0]


def scatter(x):
    """Uncentered scatter ``x.T @ x``."""
    x = as_mat(x, "x")
    return x.T @ x


def expected_P(s, law):
    """``E[X^T X~]`` given the scatter ``s`` of the clean data."""
    return _law(law).keep * as_mat(s, "s")


def expected_Q(s, law):
    """``E[X~^T X~]``: off-diagonal entries scale by ``(1-p)^2``, the diagonal by ``(1-p)``."""
    s = as_mat(s, "s")
    keep = _law(law).keep
    q = (keep * keep) * s
    idx = np.diag_indices_from(q)
    q[idx] = keep * np.diag(s)
    return q


def _as_tags(domain_tags):
    tags = np.asarray(domain_tags).astype(str)
    bad = ~np.isin(tags, (SOURCE, TARGET))
    if bad.any():
        raise ValueError(f"domain tags must be {SOURCE!r} or {TARGET!r}, got {tags[bad][0]!r}")
    return tags


def mmd_coupling(domain_tags):
    """Linear-kernel MMD coupling.

    Within-domain blocks are ``1/N_s^2`` and ``1/N_t^2``, cross blocks
    ``-1/(N_s N_t)``, so that ``tr(X^T N X)`` is the squared distance between
    the two domain centroids.
    """
    tags = _as_tags(domain_tags)
    is_src = tags == SOURCE
    ns, nt = int(is_src.sum()), int((~is_src).sum())
    if ns == 0 or nt == 0:
        raise EmptyDomain(f"MMD coupling needs both domains (N_s={ns}, N_t={nt})")
    v = np.where(is_src, 1.0 / ns, -1.0 / nt)
    return CouplingMatrix(n=np.outer(v, v), kind="mmd")


def class_coupling(domain_tags, class_labels):
    """Class-conditional MMD coupling between per-class domain centroids.

    Only classes with labeled instances in both domains contribute; rows of
    unlabeled instances (label ``-1``) and of classes seen in a single
    domain are zero, which keeps every row sum at zero.
    """
    tags = _as_tags(domain_tags)
    labels = np.asarray(class_labels, dtype=np.int64)
    if labels.shape != tags.shape:
        raise DimensionMismatch("domain_tags and class_labels differ in length")
    n = np.zeros((tags.size, tags.size))
    shared = 0
    for c in np.unique(labels[labels != UNLABELED]):
        src = (labels == c) & (tags == SOURCE)
        tgt = (labels == c) & (tags == TARGET)
        ns, nt = int(src.sum()), int(tgt.sum())
        if ns == 0 or nt == 0:
            continue
        shared += 1
        v = np.zeros(tags.size)
        v[src] = 1.0 / ns
        v[tgt] = -1.0 / nt
        n += np.outer(v, v)
    if shared == 0:
        raise NoSharedClasses("no class has labeled instances in both domains")
    return CouplingMatrix(n=n, kind="class_means")


def expected_coupled_Q(x, coupling, law, rule="exact"):
    """``E[X~^T N X~]`` for a coupling matrix ``N``.

    ``rule="exact"`` is the true expectation under independent dropout,
    ``(1-p)^2 X^T N X + p(1-p) diag(X^T diag(N) X)``. ``rule="paper"``
    applies the :func:`expected_Q` rule to ``X^T N X``, which is exact only
    for ``N = I``.
    """
    x = as_mat(x, "x")
    n = coupling.n if isinstance(coupling, CouplingMatrix) else as_mat(coupling, "coupling")
    if n.shape != (x.shape[0], x.shape[0]):
        raise DimensionMismatch(
            f"coupling is {n.shape[0]}x{n.shape[1]}, x has {x.shape[0]} rows"
        )
    law = _law(law)
    s_m = x.T @ n @ x
    if rule == "paper":
        return expected_Q(s_m, law)
    if rule != "exact":
        raise ValueError(f"unknown coupling rule {rule!r}")
    keep = law.keep
    out = (keep * keep) * s_m
    diag_term = np.einsum("i,ia,ia->a", np.diag(n), x, x)
    idx = np.diag_indices_from(out)
    out[idx] += law.p * keep * diag_term
    return out


def monte_carlo_corrupt(x, law, seed):
    """One explicit dropout corruption of ``x``, deterministic given ``seed``.

    The keep/drop mask is drawn row-major from a PCG64 generator.
    """
    x = as_mat(x, "x")
    rng = np.random.Generator(np.random.PCG64(seed))
    mask = rng.random(x.shape) >= _law(law).p
    return np.where(mask, x, 0.0)


def corruption_batches(x, law, seed, n_samples, batch_size=2048):
    """Yield stacks of corrupted copies of ``x`` with shape ``(b, N, d)``.

    Batch ``k`` is drawn from its own stream seeded by ``(seed, k)``, so the
    sequence does not depend on how batches are scheduled.
    """
    x = as_mat(x, "x")
    p = _law(law).p
    done = 0
    k = 0
    while done < n_samples:
        b = min(batch_size, n_samples - done)
        rng = np.random.Generator(np.random.PCG64([seed, k]))
        mask = rng.random((b,) + x.shape) >= p
        yield np.where(mask, x[None, :, :], 0.0)
        done += b
        k += 1


def monte_carlo_moments(x, law, seed, n_samples, couplings=(), batch_size=2048):
    """Sample means of ``X^T X~``, ``X~^T X~`` and ``X~^T N X~`` for each coupling.

    Returns ``(P_hat, Q_hat, [M_hat, ...])``.
    """
    x = as_mat(x, "x")
    d = x.shape[1]
    # N = U diag(lam) U^T truncated to its nonzero spectrum keeps the per-sample
    # cost at O(rank * N * d).
    factors = []
    for c in couplings:
        n = c.n if isinstance(c, CouplingMatrix) else as_mat(c, "coupling")
        lam, u = np.linalg.eigh(n)
        keep = np.abs(lam) > 1e-14 * max(1.0, np.abs(lam).max())
        factors.append((lam[keep], np.ascontiguousarray(u[:, keep].T)))
    sum_x = np.zeros_like(x)
    sum_q = np.zeros((d, d))
    sum_m = [np.zeros((d, d)) for _ in factors]
    for xt in corruption_batches(x, law, seed, n_samples, batch_size):
        sum_x += xt.sum(axis=0)
        flat = xt.reshape(-1, d)
        sum_q += flat.T @ flat
        for k, (lam, ut) in enumerate(factors):
            proj = np.einsum("rn,bnd->brd", ut, xt)
            sum_m[k] += np.einsum("brd,r,bre->de", proj, lam, proj)
    p_hat = x.T @ sum_x / n_samples
    return p_hat, sum_q / n_samples, [m / n_samples for m in sum_m]
