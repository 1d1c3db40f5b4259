"""Selective state-space scan and the bidirectional ViM block.

The state matrix is diagonal, stored as ``A_log`` with ``a = -exp(A_log)``.
Per timestep ``t`` and channel ``i``::

    Abar[t,i,n] = exp(delta[t,i] * a[i,n])          (zero-order hold)
    Bbar[t,i,n] = delta[t,i] * B[t,n]               (Euler)
    h[t,i,n]    = Abar[t,i,n] * h[t-1,i,n] + Bbar[t,i,n] * u[t,i]
    y[t,i]      = sum_n C[t,n] * h[t,i,n] + D[i] * u[t,i]

``delta``, ``B`` and ``C`` are per-timestep projections of the scanned
sequence itself, which is what makes the scan *selective*.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import ConfigError, ShapeError, Tensor
from .numerics.module import Init, MetaInit, Module

__all__ = [
    "SsmParams",
    "VimBlockParams",
    "discretize",
    "selective_scan",
    "selective_scan_sequential",
    "selective_scan_chunked",
    "vim_block",
    "D_STATE",
    "EXPAND",
    "CONV_KERNEL",
]

D_STATE = 16
EXPAND = 2
CONV_KERNEL = 4
DT_MIN, DT_MAX = 1e-3, 1e-1


class DomainError(ValueError):
    pass


def discretize(delta: Tensor, A_log: Tensor, B: Tensor) -> tuple[Tensor, Tensor]:
    """Return ``(Abar, Bbar)``, each ``[L, d_inner, d_state]``."""
    if np.any(delta.data <= 0):
        raise DomainError("discretize: delta must be strictly positive")
    if delta.shape[-1] != A_log.shape[0] or B.shape[-1] != A_log.shape[1]:
        raise ShapeError(
            f"discretize: delta {delta.shape}, A_log {A_log.shape}, B {B.shape} disagree")
    a = nx.neg(nx.exp(A_log))
    d3 = nx.reshape(delta, delta.shape + (1,))
    abar = nx.exp(d3 * a)
    bbar = d3 * nx.reshape(B, B.shape[:-1] + (1, B.shape[-1]))
    return abar, bbar


# ---------------------------------------------------------------------------
# linear recurrence kernels on raw arrays.  Layout [batch, L, d_inner, d_state].


def _scan_sequential(coeff: np.ndarray, inp: np.ndarray) -> np.ndarray:
    h = np.zeros_like(inp[:, 0])
    out = np.empty_like(inp)
    for t in range(inp.shape[1]):
        h = coeff[:, t] * h + inp[:, t]
        out[:, t] = h
    return out


def _scan_chunked(coeff: np.ndarray, inp: np.ndarray, chunk: int) -> np.ndarray:
    """Same recurrence, evaluated chunk-parallel.

    Each chunk is scanned from a zero state while its running coefficient
    product is tracked; chunk carries are then combined with the associative
    rule ``(A2 A1, A2 b1 + b2)`` and folded back in.  The first chunk never
    receives a carry, so ``chunk >= L`` reproduces the sequential bits.
    """
    bsz, length = inp.shape[:2]
    n = -(-length // chunk)
    pad = n * chunk - length
    if pad:
        widths = [(0, 0), (0, pad)] + [(0, 0)] * (inp.ndim - 2)
        coeff = np.pad(coeff, widths, constant_values=1)
        inp = np.pad(inp, widths)
    rest = inp.shape[2:]
    c = coeff.reshape((bsz, n, chunk) + rest)
    b = inp.reshape((bsz, n, chunk) + rest)
    local = np.empty_like(b)
    prod = np.empty_like(c)
    h = np.zeros_like(b[:, :, 0])
    p = np.ones_like(c[:, :, 0])
    for j in range(chunk):
        h = c[:, :, j] * h + b[:, :, j]
        p = p * c[:, :, j]
        local[:, :, j] = h
        prod[:, :, j] = p
    for k in range(1, n):
        # local[:, k-1, -1] already holds the true state entering chunk k
        local[:, k] += prod[:, k] * local[:, k - 1, -1][:, None]
    out = local.reshape((bsz, n * chunk) + rest)
    return out[:, :length] if pad else out


def _linear_scan(coeff: np.ndarray, inp: np.ndarray, chunk: int | None) -> np.ndarray:
    if chunk is None or chunk >= inp.shape[1]:
        return _scan_sequential(coeff, inp)
    return _scan_chunked(coeff, inp, chunk)


def selective_scan(u: Tensor, delta: Tensor, A_log: Tensor, B: Tensor, C: Tensor, D: Tensor,
                   chunk: int | None = None) -> Tensor:
    """Scan primitive with a hand-written VJP.

    ``u``/``delta`` are ``[..., L, d_inner]``; ``B``/``C`` are ``[..., L, d_state]``.
    ``chunk=None`` runs the plain sequential recurrence.
    """
    lead, length, di = u.shape[:-2], u.shape[-2], u.shape[-1]
    if length == 0:
        raise ShapeError("selective_scan: empty sequence")
    if chunk is not None and chunk < 1:
        raise ConfigError(f"selective_scan: chunk must be >= 1, got {chunk}")
    ds = A_log.shape[1]
    if delta.shape != u.shape or A_log.shape[0] != di or D.shape != (di,):
        raise ShapeError(f"selective_scan: u {u.shape}, delta {delta.shape}, "
                         f"A_log {A_log.shape}, D {D.shape} disagree")
    if B.shape != lead + (length, ds) or C.shape != B.shape:
        raise ShapeError(f"selective_scan: B {B.shape} / C {C.shape} must be {lead + (length, ds)}")

    bsz = math.prod(lead)
    ud = u.data.reshape(bsz, length, di)
    dd = delta.data.reshape(bsz, length, di)
    bd = B.data.reshape(bsz, length, ds)
    cd = C.data.reshape(bsz, length, ds)
    a = -np.exp(A_log.data)
    dA = np.exp(dd[..., None] * a)
    du = dd * ud
    dBu = du[..., None] * bd[:, :, None, :]
    hs = _linear_scan(dA, dBu, chunk)
    y = np.einsum("blin,bln->bli", hs, cd) + D.data * ud

    def vjp(g):
        g = g.reshape(bsz, length, di)
        # adjoint state: gh[t] = g[t] C[t] + dA[t+1] gh[t+1], run backwards in time
        src = g[..., None] * cd[:, :, None, :]
        shifted = np.ones_like(dA)
        shifted[:, :-1] = dA[:, 1:]
        gh = _linear_scan(shifted[:, ::-1], src[:, ::-1], chunk)[:, ::-1]
        h_prev = np.zeros_like(hs)
        h_prev[:, 1:] = hs[:, :-1]
        g_da = gh * h_prev * dA  # cotangent of delta*a
        gC = np.einsum("bli,blin->bln", g, hs)
        g_du = np.einsum("blin,bln->bli", gh, bd)
        gB = np.einsum("blin,bli->bln", gh, du)
        g_delta = np.einsum("blin,in->bli", g_da, a) + g_du * ud
        gu = g_du * dd + g * D.data
        g_alog = np.einsum("blin,bli->in", g_da, dd) * a
        gD = (g * ud).sum(axis=(0, 1))
        return (gu.reshape(u.shape), g_delta.reshape(u.shape), g_alog,
                gB.reshape(B.shape), gC.reshape(C.shape), gD)

    return nx.apply(y.reshape(u.shape), (u, delta, A_log, B, C, D), vjp)


# ---------------------------------------------------------------------------
# parameter sets


def _inverse_softplus(x: np.ndarray) -> np.ndarray:
    return x + np.log(-np.expm1(-x))


class SsmParams(Module):
    """One scan direction: diagonal state matrix plus input-dependent projections.

    ``W_dt`` and ``W_delta`` form a low-rank step-size projection
    (d_inner -> dt_rank -> d_inner).
    """

    def __init__(self, d_inner: int, d_state: int = D_STATE, dt_rank: int | None = None,
                 init: Init | MetaInit | None = None):
        init = init or Init(0)
        dt_rank = dt_rank or max(1, math.ceil(d_inner / (EXPAND * 16)))
        self.d_inner, self.d_state, self.dt_rank = d_inner, d_state, dt_rank
        self.A_log = init.array(
            lambda rng: np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))),
            (d_inner, d_state))
        self.W_B = init.fan_in((d_inner, d_state), d_inner)
        self.W_C = init.fan_in((d_inner, d_state), d_inner)
        self.W_dt = init.fan_in((d_inner, dt_rank), d_inner)
        self.W_delta = init.fan_in((dt_rank, d_inner), dt_rank)

        def delta_bias(rng):
            dt = np.exp(rng.uniform(math.log(DT_MIN), math.log(DT_MAX), size=d_inner))
            return _inverse_softplus(dt)

        self.delta_bias = init.array(delta_bias, (d_inner,))
        self.D = init.ones((d_inner,))

    def project(self, u: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-timestep (delta, B, C) from the sequence ``u``."""
        if u.shape[-1] != self.d_inner:
            raise ShapeError(f"ssm: input width {u.shape[-1]} != d_inner {self.d_inner}")
        low = nx.linear(u, self.W_dt)
        delta = nx.softplus(nx.linear(low, self.W_delta, self.delta_bias))
        return delta, nx.linear(u, self.W_B), nx.linear(u, self.W_C)

    def __call__(self, u: Tensor, chunk: int | None = None) -> Tensor:
        delta, b, c = self.project(u)
        return selective_scan(u, delta, self.A_log, b, c, self.D, chunk)


def selective_scan_sequential(u: Tensor, params: SsmParams) -> Tensor:
    return params(u, chunk=None)


def selective_scan_chunked(u: Tensor, params: SsmParams, chunk: int) -> Tensor:
    if chunk < 1:
        raise ConfigError(f"chunk must be >= 1, got {chunk}")
    return params(u, chunk=chunk)


class VimBlockParams(Module):
    """Pre-norm residual block with forward and backward selective scans.

    Each direction owns its causal depthwise conv and its `SsmParams`, and
    applies them in its own scan order.
    """

    def __init__(self, d_model: int, d_state: int = D_STATE, expand: int = EXPAND,
                 conv_kernel: int = CONV_KERNEL, init: Init | MetaInit | None = None):
        if expand < 1:
            raise ConfigError(f"expand factor must be >= 1, got {expand}")
        init = init or Init(0)
        d_inner = expand * d_model
        dt_rank = max(1, math.ceil(d_model / 16))
        self.norm_gamma = init.ones((d_model,))
        self.norm_beta = init.zeros((d_model,))
        self.in_proj = init.fan_in((d_model, 2 * d_inner), d_model)
        self.conv_fwd_w = init.fan_in((d_inner, conv_kernel), conv_kernel)
        self.conv_fwd_b = init.zeros((d_inner,))
        self.conv_bwd_w = init.fan_in((d_inner, conv_kernel), conv_kernel)
        self.conv_bwd_b = init.zeros((d_inner,))
        self.fwd = SsmParams(d_inner, d_state, dt_rank, init)
        self.bwd = SsmParams(d_inner, d_state, dt_rank, init)
        self.out_proj = init.fan_in((d_inner, d_model), d_inner)

    def swapped(self) -> "VimBlockParams":
        """Shallow copy with the two scan directions exchanged."""
        other = object.__new__(VimBlockParams)
        other.__dict__.update(self.__dict__)
        other.conv_fwd_w, other.conv_bwd_w = self.conv_bwd_w, self.conv_fwd_w
        other.conv_fwd_b, other.conv_bwd_b = self.conv_bwd_b, self.conv_fwd_b
        other.fwd, other.bwd = self.bwd, self.fwd
        return other

    def __call__(self, x: Tensor, chunk: int | None = None) -> Tensor:
        return vim_block(x, self, chunk)


def vim_block(x: Tensor, params: VimBlockParams, chunk: int | None = None) -> Tensor:
    """``x + out_proj((scan_fwd + reversed scan_bwd) * silu(gate))`` over ``[..., L, d_model]``."""
    if x.shape[-1] != params.in_proj.shape[0]:
        raise ShapeError(f"vim_block: width {x.shape[-1]} != d_model {params.in_proj.shape[0]}")
    seq = x.ndim - 2
    h = nx.layer_norm(x, params.norm_gamma, params.norm_beta)
    content, gate = nx.split(nx.linear(h, params.in_proj), 2, axis=-1)

    f = nx.silu(nx.depthwise_conv1d(content, params.conv_fwd_w, params.conv_fwd_b))
    y_fwd = params.fwd(f, chunk)
    rev = nx.flip(content, seq)
    f = nx.silu(nx.depthwise_conv1d(rev, params.conv_bwd_w, params.conv_bwd_b))
    y_bwd = nx.flip(params.bwd(f, chunk), seq)

    y = (y_fwd + y_bwd) * nx.silu(gate)
    return x + nx.linear(y, params.out_proj)
