"""Closed-form and alternating fitters for the denoising models.

Model names follow the usual taxonomy: ``S`` models learn the denoiser
``W`` alone (``L1 + gamma * L3``) and train a classifier afterwards; ``J``
models alternate between the ridge classifier ``Z_l`` and ``W`` on the full
objective ``L1 + lambda * L2 + gamma * L3``. The suffix selects the domain
term ``L3``: ``M`` linear-kernel MMD, ``C`` class-mean MMD, ``D`` the
domain-classifier loss. ``BL`` is the ridge baseline on raw features.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, EmptyDomain, NonDecreasingLoss, SingularMatrix
from .linalg import as_mat, solve_linear, solve_sylvester
from .marginalize import (
    COUPLING_RULES,
    SOURCE,
    class_coupling,
    expected_coupled_Q,
    expected_Q,
    mmd_coupling,
    scatter,
)

SEQUENTIAL_MODELS = ("S1", "S1M", "S1C", "S1D")
JOINT_MODELS = ("J12", "J12M", "J12C", "J12D")
FRAMEWORK_MODELS = SEQUENTIAL_MODELS + JOINT_MODELS
MODELS = ("BL",) + FRAMEWORK_MODELS

LOSS_SLACK = 1e-8
JITTER_SCALE = 1e-10


def domain_term(model):
    """Which domain regularizer a model carries: None, 'mmd', 'class_means' or 'domain'."""
    return {"M": "mmd", "C": "class_means", "D": "domain"}.get(model[-1])


@dataclass(frozen=True)
class ModelSpec:
    """Model choice and hyperparameters.

    ``lam`` weighs the classification loss, ``gamma`` the domain term,
    ``omega``/``delta``/``alpha`` regularize ``W``, ``Z_l`` and the domain
    classifier ``Z_D``.
    """

    model: str = "S1"
    p: float = 0.5
    lam: float = 1.0
    gamma: float = 1.0
    omega: float = 1e-2
    delta: float = 1.0
    alpha: float = 1.0
    max_iters: int = 50
    rel_tol: float = 1e-6
    coupling_rule: str = "exact"
    add_bias: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if not (0.0 <= self.p < 1.0):
            raise ValueError(f"p must lie in [0, 1), got {self.p}")
        for name in ("lam", "gamma", "omega", "delta", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.coupling_rule not in COUPLING_RULES:
            raise ValueError(f"unknown coupling rule {self.coupling_rule!r}")

    @property
    def effective_omega(self):
        # The domain-classifier closed forms only exist without the W penalty.
        return 0.0 if self.model in ("S1D", "J12D") else self.omega

    @property
    def is_joint(self):
        return self.model in JOINT_MODELS


@dataclass
class FitResult:
    w: np.ndarray
    z_l: np.ndarray = None
    z_d: np.ndarray = None
    loss_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    model: str = ""
    bias: bool = False
    diagnostics: dict = field(default_factory=dict)

    def denoise(self, x):
        """Map raw features through the learned ``W``."""
        x = as_mat(x, "x")
        if self.bias:
            x = add_bias_column(x)
        return x @ self.w


def add_bias_column(x):
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _solve_psd(a, b, diagnostics, key):
    # Jitter is only added when the plain factorization is rejected.
    try:
        return solve_linear(a, b)
    except SingularMatrix:
        d = a.shape[0]
        jitter = JITTER_SCALE * max(np.trace(a), 1.0) / d
        diagnostics.setdefault("jitter", {})[key] = jitter
        return solve_linear(a + jitter * np.eye(d), b)


@dataclass
class _Stats:
    x: np.ndarray
    x_l: np.ndarray
    y_l: np.ndarray
    x_sq: float
    y_sq: float
    p_mat: np.ndarray
    q: np.ndarray
    q_l: np.ndarray
    xly: np.ndarray
    m: np.ndarray = None
    z_d: np.ndarray = None
    xyt: np.ndarray = None


def _split_arrays(split, add_bias):
    x = as_mat(split.x_all, "x_all")
    x_l = as_mat(split.x_labeled, "x_labeled")
    y_l = as_mat(split.y_labeled, "y_labeled")
    if x_l.shape[0] != y_l.shape[0]:
        raise DimensionMismatch("x_labeled and y_labeled differ in row count")
    if x.shape[1] != x_l.shape[1]:
        raise DimensionMismatch("x_all and x_labeled differ in feature count")
    if add_bias:
        x, x_l = add_bias_column(x), add_bias_column(x_l)
    return x, x_l, y_l


def problem_statistics(spec, split):
    """Precompute every expectation the objective of ``spec.model`` uses."""
    x, x_l, y_l = _split_arrays(split, spec.add_bias)
    p = spec.p
    s = scatter(x)
    st = _Stats(
        x=x,
        x_l=x_l,
        y_l=y_l,
        x_sq=float(np.sum(x * x)),
        y_sq=float(np.sum(y_l * y_l)),
        p_mat=(1.0 - p) * s,
        q=expected_Q(s, p),
        q_l=expected_Q(scatter(x_l), p),
        xly=x_l.T @ y_l,
    )
    term = domain_term(spec.model) if spec.model != "BL" else None
    if term == "mmd":
        st.m = expected_coupled_Q(x, mmd_coupling(split.domain_tags), p, spec.coupling_rule)
    elif term == "class_means":
        coupling = class_coupling(split.labeled_domain_tags, split.labeled_labels)
        st.m = expected_coupled_Q(x_l, coupling, p, spec.coupling_rule)
    elif term == "domain":
        st.z_d = fit_domain_classifier(x, split.domain_tags, spec.alpha)
        st.xyt = x.sum(axis=0)[:, None]
    return st


def fit_domain_classifier(x, domain_tags, alpha):
    """Ridge separator of the domains on clean data (source -1, target +1)."""
    x = as_mat(x, "x")
    tags = np.asarray(domain_tags).astype(str)
    if tags.shape[0] != x.shape[0]:
        raise DimensionMismatch("domain_tags length differs from x rows")
    is_src = tags == SOURCE
    if is_src.all() or not is_src.any():
        raise EmptyDomain("domain classifier needs source and target rows")
    y = np.where(is_src, -1.0, 1.0)[:, None]
    return solve_linear(x.T @ x + alpha * np.eye(x.shape[1]), x.T @ y)


def fit_ridge_marginalized(w, x_l, y_l, p, delta, diagnostics=None):
    """Ridge classifier trained on dropout-corrupted, denoised features.

    ``Z_l = (1-p) (W^T Q_l W + delta I)^{-1} W^T X_l^T Y_l``; with ``W = I``
    and ``p = 0`` this is ordinary ridge regression on ``X_l``.
    """
    w = as_mat(w, "w")
    x_l = as_mat(x_l, "x_l")
    y_l = as_mat(y_l, "y_l")
    if x_l.shape[0] == 0:
        raise DimensionMismatch("x_l is empty")
    if x_l.shape[0] != y_l.shape[0]:
        raise DimensionMismatch("x_l and y_l differ in row count")
    if w.shape[0] != x_l.shape[1]:
        raise DimensionMismatch(f"w has {w.shape[0]} rows, x_l has {x_l.shape[1]} columns")
    q_l = expected_Q(scatter(x_l), p)
    return _ridge_step(w, q_l, x_l.T @ y_l, p, delta, {} if diagnostics is None else diagnostics)


def _ridge_step(w, q_l, xly, p, delta, diagnostics):
    a = w.T @ q_l @ w + delta * np.eye(w.shape[1])
    return (1.0 - p) * _solve_psd(a, w.T @ xly, diagnostics, "ridge")


def _loss_terms(spec, st, w, z_l):
    p = spec.p
    l1 = st.x_sq - 2.0 * np.sum(st.p_mat * w.T) + np.sum(w * (st.q @ w))
    l1 += spec.effective_omega * np.sum(w * w)
    l2 = 0.0
    if z_l is not None:
        wz = w @ z_l
        l2 = (
            st.y_sq
            - 2.0 * (1.0 - p) * np.sum(st.xly * wz)
            + np.sum(wz * (st.q_l @ wz))
            + spec.delta * np.sum(z_l * z_l)
        )
    l3 = 0.0
    if st.m is not None:
        l3 = np.sum(w * (st.m @ w))
    elif st.z_d is not None:
        wz = w @ st.z_d
        l3 = st.x.shape[0] - 2.0 * (1.0 - p) * np.sum(st.xyt * wz) + np.sum(wz * (st.q @ wz))
    return float(l1), float(l2), float(l3)


def _require_framework(spec):
    if spec.model not in FRAMEWORK_MODELS:
        raise ValueError(f"{spec.model} has no denoising objective")


def loss_components(spec, split, w, z_l=None, stats=None):
    """Expected losses ``(L1, L2, L3)``; ``L2`` is 0 when ``z_l`` is None."""
    _require_framework(spec)
    st = stats if stats is not None else problem_statistics(spec, split)
    w, z_l = _check_wz(st, w, z_l)
    return _loss_terms(spec, st, w, z_l)


def expected_total_loss(spec, split, w, z_l=None, stats=None):
    """``L1 + lambda * L2 + gamma * L3`` in expectation over dropout."""
    l1, l2, l3 = loss_components(spec, split, w, z_l, stats)
    return l1 + spec.lam * l2 + spec.gamma * l3


def _check_wz(st, w, z_l):
    d = st.x.shape[1]
    w = as_mat(w, "w")
    if w.shape != (d, d):
        raise DimensionMismatch(f"w must be {d}x{d}, got {w.shape}")
    if z_l is not None:
        z_l = as_mat(z_l, "z_l")
        if z_l.shape != (d, st.y_l.shape[1]):
            raise DimensionMismatch(f"z_l must be {(d, st.y_l.shape[1])}, got {z_l.shape}")
    return w, z_l


def analytic_gradients(spec, split, w, z_l=None, stats=None):
    """Gradients of :func:`expected_total_loss` with respect to ``W`` and ``Z_l``.

    Returns ``(dW, dZ)``; ``dZ`` is None when ``z_l`` is None.
    """
    _require_framework(spec)
    st = stats if stats is not None else problem_statistics(spec, split)
    w, z_l = _check_wz(st, w, z_l)
    p = spec.p
    d = w.shape[0]
    dw = -2.0 * st.p_mat + 2.0 * (st.q + spec.effective_omega * np.eye(d)) @ w
    dz = None
    if z_l is not None:
        dw += spec.lam * (
            -2.0 * (1.0 - p) * st.xly @ z_l.T + 2.0 * st.q_l @ w @ z_l @ z_l.T
        )
        dz = spec.lam * (
            -2.0 * (1.0 - p) * w.T @ st.xly
            + 2.0 * (w.T @ st.q_l @ w + spec.delta * np.eye(z_l.shape[0])) @ z_l
        )
    if st.m is not None:
        dw += spec.gamma * 2.0 * st.m @ w
    elif st.z_d is not None:
        dw += spec.gamma * (
            -2.0 * (1.0 - p) * st.xyt @ st.z_d.T + 2.0 * st.q @ w @ st.z_d @ st.z_d.T
        )
    return dw, dz


def _sequential_w(spec, st, diagnostics):
    d = st.q.shape[0]
    lhs = st.q + spec.effective_omega * np.eye(d)
    if st.m is not None:
        lhs = lhs + spec.gamma * st.m
    if st.z_d is None:
        return _solve_psd(lhs, st.p_mat, diagnostics, "Q")
    g = np.eye(d) + spec.gamma * st.z_d @ st.z_d.T
    rhs = st.p_mat + spec.gamma * (1.0 - spec.p) * st.xyt @ st.z_d.T
    left = _solve_psd(lhs, rhs, diagnostics, "Q")
    # right-multiplication by G^{-1}; G is symmetric
    return solve_linear(g, left.T).T


def fit_sequential_W(spec, split):
    """Closed-form denoiser for S1, S1M, S1C and S1D."""
    if spec.model not in SEQUENTIAL_MODELS:
        raise ValueError(f"{spec.model} is not a sequential model")
    st = problem_statistics(spec, split)
    diagnostics = {}
    w = _sequential_w(spec, st, diagnostics)
    loss = expected_total_loss(spec, split, w, None, st)
    return FitResult(
        w=w,
        z_d=st.z_d,
        loss_trace=[loss],
        iterations=1,
        converged=True,
        model=spec.model,
        bias=spec.add_bias,
        diagnostics=diagnostics,
    )


def sylvester_coefficients(spec, st, z_l, diagnostics=None):
    """``(A, B, C)`` of the W-step equation ``A W + W B = C`` for a joint model."""
    diagnostics = {} if diagnostics is None else diagnostics
    d = st.q.shape[0]
    p = spec.p
    zz = spec.lam * z_l @ z_l.T
    c12_rhs = st.p_mat + spec.lam * (1.0 - p) * st.xly @ z_l.T
    if spec.model == "J12D":
        g = np.eye(d) + spec.gamma * st.z_d @ st.z_d.T
        a = _solve_psd(st.q_l, st.q, diagnostics, "Q_l")
        rhs = c12_rhs + spec.gamma * (1.0 - p) * st.xyt @ st.z_d.T
        c = _solve_psd(st.q_l, rhs, diagnostics, "Q_l")
        b = solve_linear(g, zz.T).T
        c = solve_linear(g, c.T).T
        return a, b, c
    k = st.q + spec.effective_omega * np.eye(d)
    if st.m is not None:
        k = k + spec.gamma * st.m
    a = _solve_psd(st.q_l, k, diagnostics, "Q_l")
    c = _solve_psd(st.q_l, c12_rhs, diagnostics, "Q_l")
    return a, zz, c


def fit_joint(spec, split):
    """Alternate exact Z_l- and W-minimizations starting from ``W = I``."""
    if spec.model not in JOINT_MODELS:
        raise ValueError(f"{spec.model} is not a joint model")
    st = problem_statistics(spec, split)
    diagnostics = {}
    d = st.q.shape[0]
    w = np.eye(d)
    z = _ridge_step(w, st.q_l, st.xly, spec.p, spec.delta, diagnostics)

    def total(w_, z_):
        l1, l2, l3 = _loss_terms(spec, st, w_, z_)
        return l1 + spec.lam * l2 + spec.gamma * l3

    loss = total(w, z)
    trace = [loss]
    converged = False
    iterations = 0
    for iterations in range(1, spec.max_iters + 1):
        a, b, c = sylvester_coefficients(spec, st, z, diagnostics)
        w = solve_sylvester(a, b, c)
        half = total(w, z)
        _check_decrease(loss, half, iterations, "W")
        z = _ridge_step(w, st.q_l, st.xly, spec.p, spec.delta, diagnostics)
        new = total(w, z)
        _check_decrease(half, new, iterations, "Z_l")
        trace.append(new)
        change = abs(new - loss) / max(1.0, abs(loss))
        loss = new
        if change < spec.rel_tol:
            converged = True
            break
    return FitResult(
        w=w,
        z_l=z,
        z_d=st.z_d,
        loss_trace=trace,
        iterations=iterations,
        converged=converged,
        model=spec.model,
        bias=spec.add_bias,
        diagnostics=diagnostics,
    )


def _check_decrease(before, after, iteration, block):
    if after > before + LOSS_SLACK:
        raise NonDecreasingLoss(
            f"{block}-step of iteration {iteration} raised the loss "
            f"from {before:.12g} to {after:.12g}"
        )


def fit_model(spec, split):
    """Fit any model, including a ridge classifier ``Z_l`` on top.

    BL uses ``W = I`` and plain ridge; sequential models learn ``W`` first
    and then the marginalized ridge classifier; joint models return their
    alternating solution.
    """
    if spec.is_joint:
        return fit_joint(spec, split)
    if spec.model == "BL":
        _, x_l, y_l = _split_arrays(split, spec.add_bias)
        w = np.eye(x_l.shape[1])
        diagnostics = {}
        z = fit_ridge_marginalized(w, x_l, y_l, 0.0, spec.delta, diagnostics)
        return FitResult(w=w, z_l=z, model="BL", bias=spec.add_bias, diagnostics=diagnostics)
    res = fit_sequential_W(spec, split)
    _, x_l, y_l = _split_arrays(split, spec.add_bias)
    res.z_l = fit_ridge_marginalized(res.w, x_l, y_l, spec.p, spec.delta, res.diagnostics)
    return res


def with_model(spec, model, **overrides):
    return replace(spec, model=model, **overrides)
