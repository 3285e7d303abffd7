"""Selective state-space sequence branch.

The layer realizes the discrete recurrence h_t = a_bar_t * h_{t-1} + b_bar_t
* u_t per (channel, state) lane, where the step size, input and output
projections are functions of the current input token. Discretization is
zero-order hold on a diagonal negative state matrix A = -exp(A_log), so
a_bar = exp(delta * A) always lies in (0, 1).

Two scan kernels evaluate the recurrence over raw arrays: a sequential
reference and a work-efficient Blelloch up/down sweep over the affine-map
monoid (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2). They agree to 1e-10 and
either can drive the differentiable ``linear_recurrence`` op.
"""

from __future__ import annotations

import numpy as np

from .diffcore import BatchNorm1d, Dropout, Linear, Tensor, concat, linear_recurrence
from .diffcore.nn import check_mode, xavier_uniform
from .errors import ConfigError, ContractError, ShapeError

DELTA_A_EPS = 1e-8  # below this |delta*a| the first-order limit b_bar = delta*b applies


def discretize(a: float, b: float, delta: float):
    """Zero-order-hold discretization of scalar dynamics h' = a h + b x.

    Returns (a_bar, b_bar) with a_bar = exp(delta a) and
    b_bar = ((exp(delta a) - 1) / (delta a)) * delta * b.
    """
    if delta <= 0.0:
        raise ContractError(f"discretize needs delta > 0, got {delta}")
    z = delta * a
    a_bar = np.exp(z)
    if abs(z) < DELTA_A_EPS:
        b_bar = delta * b
    else:
        b_bar = (a_bar - 1.0) / z * delta * b
    return float(a_bar), float(b_bar)


def sequential_scan(a_bar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """Reference evaluation of h_t = a_bar_t * h_{t-1} + bx_t, h_{-1} = 0."""
    a_bar = np.asarray(a_bar, dtype=np.float64)
    bx = np.asarray(bx, dtype=np.float64)
    if a_bar.shape != bx.shape:
        raise ShapeError(f"scan shapes differ: {a_bar.shape} vs {bx.shape}")
    h = np.empty_like(bx)
    cur = np.zeros_like(bx[0]) if bx.shape[0] else None
    for t in range(bx.shape[0]):
        cur = a_bar[t] * cur + bx[t]
        h[t] = cur
    return h


def combine(a2, b2, a1, b1):
    """Compose affine maps: apply (a1, b1) first, then (a2, b2)."""
    return a2 * a1, a2 * b1 + b2


def parallel_scan(a_bar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """Blelloch work-efficient scan of the first-order recurrence.

    Pads the time axis to a power of two with identity maps (1, 0), runs the
    up-sweep / down-sweep to get exclusive prefix compositions, then folds in
    each step's own map. Composition order respects time: the monoid is not
    commutative.
    """
    a_bar = np.asarray(a_bar, dtype=np.float64)
    bx = np.asarray(bx, dtype=np.float64)
    if a_bar.shape != bx.shape:
        raise ShapeError(f"scan shapes differ: {a_bar.shape} vs {bx.shape}")
    t_len = a_bar.shape[0]
    if t_len == 0:
        return np.empty_like(bx)
    n = 1 << (t_len - 1).bit_length() if t_len > 1 else 1
    lane = a_bar.shape[1:]
    acc_a = np.ones((n,) + lane)
    acc_b = np.zeros((n,) + lane)
    acc_a[:t_len] = a_bar
    acc_b[:t_len] = bx

    # n is a power of two, so strided views pair (i+d-1, i+2d-1) exactly
    d = 1
    while d < n:
        left_a = acc_a[d - 1::2 * d]
        left_b = acc_b[d - 1::2 * d]
        right_a = acc_a[2 * d - 1::2 * d]
        right_b = acc_b[2 * d - 1::2 * d]
        # x[right] := x[left]-then-x[right]
        right_b[...] = right_a * left_b + right_b
        right_a[...] = right_a * left_a
        d *= 2

    acc_a[n - 1] = 1.0
    acc_b[n - 1] = 0.0
    d = n // 2
    while d >= 1:
        left_a = acc_a[d - 1::2 * d]
        left_b = acc_b[d - 1::2 * d]
        right_a = acc_a[2 * d - 1::2 * d]
        right_b = acc_b[2 * d - 1::2 * d]
        sub_a = left_a.copy()
        sub_b = left_b.copy()
        left_a[...] = right_a
        left_b[...] = right_b
        # x[right] := parent-prefix-then-subtree(left)
        right_b[...] = sub_a * right_b + sub_b
        right_a[...] = sub_a * right_a
        d //= 2

    # inclusive h_t is the offset of (exclusive_t then own map); h_{-1} = 0
    return a_bar * acc_b[:t_len] + bx


SCAN_KERNELS = {"sequential": sequential_scan, "parallel": parallel_scan}


def _expm1_over(z: Tensor) -> Tensor:
    """phi(z) = (exp(z) - 1) / z with phi := 1 for |z| < DELTA_A_EPS.

    The derivative switches to a series below |z| = 1e-4 where the closed
    form loses precision to cancellation.
    """
    zd = z.data
    small = np.abs(zd) < DELTA_A_EPS
    out = np.where(small, 1.0, np.expm1(np.where(small, 1.0, zd)) / np.where(small, 1.0, zd))

    def backward(g):
        series = np.abs(zd) < 1e-4
        safe = np.where(series, 1.0, zd)
        exact = (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe)
        approx = 0.5 + zd / 3.0 + zd * zd / 8.0
        return ((z, g * np.where(series, approx, exact)),)

    return z._child(out, (z,), backward)


class SelectiveSSM:
    """Input-dependent diagonal SSM layer with batchnorm and dropout."""

    def __init__(self, d_in: int, d_inner: int, d_state: int, d_out: int,
                 rng: np.random.Generator, dropout: float = 0.1,
                 scan_kernel: str = "sequential"):
        if d_state < 1:
            raise ConfigError(f"d_state must be >= 1, got {d_state}")
        if scan_kernel not in SCAN_KERNELS:
            raise ConfigError(f"scan_kernel must be one of {sorted(SCAN_KERNELS)}")
        self.d_inner = d_inner
        self.d_state = d_state
        self.kernel = SCAN_KERNELS[scan_kernel]
        self.in_proj = Linear(d_in, d_inner, rng)
        # A = -exp(A_log) initialized to -(1..S) on every channel
        self.A_log = Tensor(
            np.log(np.tile(np.arange(1.0, d_state + 1.0), (d_inner, 1))),
            requires_grad=True,
        )
        self.W_delta = Tensor(xavier_uniform(d_inner, d_inner, rng), requires_grad=True)
        # bias placed so initial delta = softplus(b) is log-uniform in [0.01, 0.1]
        dt = np.exp(rng.uniform(np.log(0.01), np.log(0.1), size=d_inner))
        self.b_delta = Tensor(np.log(np.expm1(dt)), requires_grad=True)
        self.W_B = Tensor(xavier_uniform(d_inner, d_state, rng), requires_grad=True)
        self.W_C = Tensor(xavier_uniform(d_inner, d_state, rng), requires_grad=True)
        self.D_skip = Tensor(np.ones(d_inner), requires_grad=True)
        self.out_proj = Linear(d_inner, d_out, rng)
        self.bn = BatchNorm1d(d_out)
        self.dropout = Dropout(dropout)

    def __call__(self, x_seq: Tensor, mode: str, rng: np.random.Generator) -> Tensor:
        check_mode(mode)
        if x_seq.ndim != 2 or x_seq.shape[0] < 1:
            raise ShapeError(f"selective SSM needs a T x d sequence, got {x_seq.shape}")
        t_len = x_seq.shape[0]
        d, s = self.d_inner, self.d_state
        u = self.in_proj(x_seq)                                   # (T, d)
        delta = (u @ self.W_delta + self.b_delta).softplus()      # (T, d) > 0
        b_t = u @ self.W_B                                        # (T, S)
        c_t = u @ self.W_C                                        # (T, S)
        a = -self.A_log.exp()                                     # (d, S) < 0
        z = delta.reshape(t_len, d, 1) * a.reshape(1, d, s)       # (T, d, S)
        a_bar = z.exp()
        b_bar = _expm1_over(z) * delta.reshape(t_len, d, 1) * b_t.reshape(t_len, 1, s)
        bx = b_bar * u.reshape(t_len, d, 1)
        h = linear_recurrence(a_bar, bx, self.kernel)             # (T, d, S)
        y = (h * c_t.reshape(t_len, 1, s)).sum(axis=2) + u * self.D_skip
        out = self.out_proj(y)
        out = self.bn(out, mode)
        return self.dropout(out, mode, rng)

    def named_params(self, prefix: str):
        yield from self.in_proj.named_params(f"{prefix}.in_proj")
        yield f"{prefix}.A_log", self.A_log
        yield f"{prefix}.W_delta", self.W_delta
        yield f"{prefix}.b_delta", self.b_delta
        yield f"{prefix}.W_B", self.W_B
        yield f"{prefix}.W_C", self.W_C
        yield f"{prefix}.D_skip", self.D_skip
        yield from self.out_proj.named_params(f"{prefix}.out_proj")
        yield from self.bn.named_params(f"{prefix}.bn")

    def named_buffers(self, prefix: str):
        yield from self.bn.named_buffers(f"{prefix}.bn")


class MambaBranch:
    """Linearize graph nodes into a sequence, scan, and map back.

    The sequence input is Concat(projected node features, positional
    encodings); the node order is the caller's permutation (raster order in
    the full model) and its inverse restores graph node indexing.
    """

    def __init__(self, d_hidden: int, pe_dim: int, d_state: int,
                 rng: np.random.Generator, dropout: float = 0.1,
                 scan_kernel: str = "sequential"):
        self.ssm = SelectiveSSM(d_hidden + pe_dim, d_hidden, d_state, d_hidden,
                                rng, dropout=dropout, scan_kernel=scan_kernel)

    def __call__(self, x_node: Tensor, pos_enc: np.ndarray, node_order,
                 mode: str, rng: np.random.Generator,
                 plan_order=None, plan_inverse=None) -> Tensor:
        order = np.asarray(node_order, dtype=np.intp)
        n = x_node.shape[0]
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise ContractError("node_order must be a permutation of all node indices")
        seq = concat([x_node, Tensor(pos_enc)], axis=1).gather_rows(order, plan=plan_order)
        y = self.ssm(seq, mode, rng)
        inverse = np.argsort(order)
        return y.gather_rows(inverse, plan=plan_inverse)

    def named_params(self, prefix: str):
        yield from self.ssm.named_params(prefix)

    def named_buffers(self, prefix: str):
        yield from self.ssm.named_buffers(prefix)
