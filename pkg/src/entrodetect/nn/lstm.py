"""LSTM cell, masked directional layers, and the stacked bidirectional pass.

Weight convention per layer per direction: input-to-hidden W_ih [4h, in],
hidden-to-hidden W_hh [4h, h], and TWO bias vectors b_ih, b_hh of length 4h
each. Gate blocks are ordered input, forget, cell-candidate, output along
the 4h axis.

Batches are padded to the longest sequence; the mask gates state updates so
a padded step carries h and c through unchanged. In the reverse direction
the state is therefore still at its initial value when the scan reaches a
sequence's true last token, which makes every per-position output identical
to running that sequence unpadded; outputs never depend on batch
composition.

Internally the scan runs time-major ([S, n, dim]) with preallocated
buffers; the per-step loop is the hot path of the whole package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import DimensionError, ValidationError
from .layers import dropout_backward, dropout_forward, sigmoid
from .rng import RngStream


@dataclass
class LstmState:
    """Hidden and cell vectors of one LSTM cell."""

    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape or self.h.ndim != 1:
            raise DimensionError(
                f"LstmState h {self.h.shape} and c {self.c.shape} must be equal-length vectors"
            )


class GateParams:
    """Weight set of one direction of one LSTM layer."""

    __slots__ = ("W_ih", "W_hh", "b_ih", "b_hh", "hidden", "in_dim")

    def __init__(self, W_ih, W_hh, b_ih, b_hh):
        h = W_hh.shape[1]
        if W_hh.shape != (4 * h, h):
            raise DimensionError(f"W_hh must be [4h, h], got {W_hh.shape}")
        if W_ih.ndim != 2 or W_ih.shape[0] != 4 * h:
            raise DimensionError(
                f"W_ih must be [4h, in] with 4h={4 * h}, got {W_ih.shape}"
            )
        if b_ih.shape != (4 * h,) or b_hh.shape != (4 * h,):
            raise DimensionError(
                f"biases must both be length {4 * h}, got {b_ih.shape} and {b_hh.shape}"
            )
        self.W_ih = W_ih
        self.W_hh = W_hh
        self.b_ih = b_ih
        self.b_hh = b_hh
        self.hidden = h
        self.in_dim = W_ih.shape[1]


def lstm_cell_step(x: np.ndarray, prev: LstmState, w: GateParams) -> LstmState:
    """One recurrence step on a single example.

    i, f, o pass through the logistic sigmoid, the cell candidate through
    tanh; c' = f*c + i*g and h' = o*tanh(c').
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (w.in_dim,):
        raise DimensionError(f"input shape {x.shape} vs expected ({w.in_dim},)")
    if prev.h.shape != (w.hidden,):
        raise DimensionError(f"state size {prev.h.shape} vs hidden {w.hidden}")
    h = w.hidden
    a = w.W_ih @ x + w.b_ih + w.W_hh @ prev.h + w.b_hh
    i = sigmoid(a[:h])
    f = sigmoid(a[h : 2 * h])
    g = np.tanh(a[2 * h : 3 * h])
    o = sigmoid(a[3 * h :])
    c = f * prev.c + i * g
    return LstmState(h=o * np.tanh(c), c=c)


def _gate_scale(h: int) -> np.ndarray:
    # sigmoid gates via 0.5*(1+tanh(a/2)); the candidate gate is raw tanh,
    # so one tanh over a pre-scaled 4h row covers all four gates
    scale = np.full(4 * h, 0.5)
    scale[2 * h : 3 * h] = 1.0
    return scale


@njit(cache=True)
def _fwd_cell(T, c_t, h_t, Ccand_t, Cprev_t, Hprev_t):
    """From T = tanh(scale * a), finish the step up to the cell candidate.

    Rewrites T in place into gate activations (i, f, o from the half-angle
    identity, g as-is) and stashes the carried states.
    """
    n, h = c_t.shape
    for r in range(n):
        for j in range(h):
            iv = 0.5 * T[r, j] + 0.5
            fv = 0.5 * T[r, h + j] + 0.5
            gv = T[r, 2 * h + j]
            ov = 0.5 * T[r, 3 * h + j] + 0.5
            T[r, j] = iv
            T[r, h + j] = fv
            T[r, 3 * h + j] = ov
            cp = c_t[r, j]
            Cprev_t[r, j] = cp
            Hprev_t[r, j] = h_t[r, j]
            Ccand_t[r, j] = fv * cp + iv * gv


@njit(cache=True)
def _fwd_state(G_t, TanhC_t, Ccand_t, m, c_t, h_t, H_t):
    """Masked state update: padded rows (m=0) carry h and c unchanged."""
    n, h = c_t.shape
    for r in range(n):
        mv = m[r]
        for j in range(h):
            c_t[r, j] = mv * Ccand_t[r, j] + (1.0 - mv) * c_t[r, j]
            hv = mv * (G_t[r, 3 * h + j] * TanhC_t[r, j]) + (1.0 - mv) * h_t[r, j]
            h_t[r, j] = hv
            H_t[r, j] = hv


@njit(cache=True)
def _bwd_cell(G_t, TanhC_t, Cprev_t, dH_t, m, dh_carry, dc_carry, dA_t):
    """Per-step gradients from stored activations; no transcendentals.

    Writes dA_t (gradient w.r.t. the raw gate pre-activations) and updates
    the carried state gradients, except the dA @ W_hh term the caller adds.
    """
    n, h = dh_carry.shape
    for r in range(n):
        mv = m[r]
        for j in range(h):
            iv = G_t[r, j]
            fv = G_t[r, h + j]
            gv = G_t[r, 2 * h + j]
            ov = G_t[r, 3 * h + j]
            tc = TanhC_t[r, j]
            dh = dH_t[r, j] + dh_carry[r, j]
            dhc = mv * dh
            dcc = mv * dc_carry[r, j]
            dcp = dc_carry[r, j] - dcc
            do = dhc * tc
            dcc += dhc * ov * (1.0 - tc * tc)
            dA_t[r, j] = (dcc * gv) * iv * (1.0 - iv)
            dA_t[r, h + j] = (dcc * Cprev_t[r, j]) * fv * (1.0 - fv)
            dA_t[r, 2 * h + j] = (dcc * iv) * (1.0 - gv * gv)
            dA_t[r, 3 * h + j] = do * ov * (1.0 - ov)
            dh_carry[r, j] = dh - dhc  # (1-m) * dh; gemm term added outside
            dc_carry[r, j] = dcp + dcc * fv


def lstm_layer_forward(x: np.ndarray, mask: np.ndarray, w: GateParams, reverse: bool = False):
    """Run one direction over a padded batch x [n, S, in], mask [n, S].

    Returns (H [n, S, h], cache). Masked (padded) steps leave the state
    untouched and echo the carried h into the output slot.
    """
    n, S, din = x.shape
    if din != w.in_dim:
        raise DimensionError(f"input dim {din} vs weights expect {w.in_dim}")
    h = w.hidden
    scale = _gate_scale(h)

    xt = np.ascontiguousarray(np.swapaxes(x, 0, 1))  # [S, n, in]
    mt = np.ascontiguousarray(np.swapaxes(np.asarray(mask, dtype=np.float64), 0, 1))

    # fold the gate scaling into the input-side and recurrent terms so the
    # per-step tanh consumes its operand directly
    pre = xt.reshape(S * n, din) @ w.W_ih.T
    pre += w.b_ih + w.b_hh
    pre *= scale
    pre = pre.reshape(S, n, 4 * h)
    Whh_T = np.ascontiguousarray(w.W_hh.T * scale)

    G = np.empty((S, n, 4 * h))
    Ccand = np.empty((S, n, h))
    TanhC = np.empty((S, n, h))
    Cprev = np.empty((S, n, h))
    Hprev = np.empty((S, n, h))
    H = np.empty((S, n, h))

    h_t = np.zeros((n, h))
    c_t = np.zeros((n, h))
    gemm = np.empty((n, 4 * h))

    for idx in range(S):
        t = S - 1 - idx if reverse else idx
        np.dot(h_t, Whh_T, out=gemm)
        gemm += pre[t]
        Gt = G[t]
        np.tanh(gemm, out=Gt)
        _fwd_cell(Gt, c_t, h_t, Ccand[t], Cprev[t], Hprev[t])
        np.tanh(Ccand[t], out=TanhC[t])
        _fwd_state(Gt, TanhC[t], Ccand[t], mt[t], c_t, h_t, H[t])

    cache = (xt, mt, w, G, Ccand, TanhC, Cprev, Hprev, reverse)
    return np.swapaxes(H, 0, 1), cache


def lstm_layer_backward(dH: np.ndarray, cache):
    """BPTT through one direction. Returns (dx, dW_ih, dW_hh, db_ih, db_hh)."""
    xt, mt, w, G, Ccand, TanhC, Cprev, Hprev, reverse = cache
    S, n, din = xt.shape
    h = w.hidden
    dHt = np.ascontiguousarray(np.swapaxes(dH, 0, 1))  # [S, n, h]

    dA = np.empty((S, n, 4 * h))
    dh_carry = np.zeros((n, h))
    dc_carry = np.zeros((n, h))
    gemm = np.empty((n, h))

    for idx in range(S):
        t = idx if reverse else S - 1 - idx  # opposite of the forward scan
        dAt = dA[t]
        _bwd_cell(G[t], TanhC[t], Cprev[t], dHt[t], mt[t], dh_carry, dc_carry, dAt)
        np.dot(dAt, w.W_hh, out=gemm)
        dh_carry += gemm

    dAf = dA.reshape(S * n, 4 * h)
    dW_ih = dAf.T @ xt.reshape(S * n, din)
    dW_hh = dAf.T @ Hprev.reshape(S * n, h)
    db = dAf.sum(axis=0)
    dx = np.swapaxes((dAf @ w.W_ih).reshape(S, n, din), 0, 1)
    return dx, dW_ih, dW_hh, db.copy(), db


def bilstm_forward(
    x: np.ndarray,
    mask: np.ndarray,
    layer_weights: list[tuple[GateParams, GateParams]],
    *,
    dropout_rate: float = 0.0,
    mode: str = "eval",
    rng: RngStream | None = None,
):
    """Stacked bidirectional pass: per layer, concat(forward h, backward h).

    x is [n, S, in]; the output is [n, S, 2h] from the top layer. Dropout,
    when active, applies between layers only (not inside the recurrence).
    """
    n, S = x.shape[0], x.shape[1]
    if S < 1 or n < 1:
        raise ValidationError(f"bilstm needs a non-empty batch, got x {x.shape}")
    if mask.shape != (n, S):
        raise DimensionError(f"mask shape {mask.shape} vs batch {(n, S)}")
    caches = []
    inp = x
    last = len(layer_weights) - 1
    for li, (wf, wb) in enumerate(layer_weights):
        Hf, cf = lstm_layer_forward(inp, mask, wf, reverse=False)
        Hb, cb = lstm_layer_forward(inp, mask, wb, reverse=True)
        B = np.concatenate([Hf, Hb], axis=2)
        dcache = None
        if li < last:
            B, dcache = dropout_forward(B, dropout_rate, mode, rng)
        caches.append((cf, cb, dcache))
        inp = B
    return inp, caches


def bilstm_backward(dB: np.ndarray, caches):
    """Returns (dx, per-layer list of (fwd grads, bwd grads) 4-tuples)."""
    grads = [None] * len(caches)
    d = dB
    for li in range(len(caches) - 1, -1, -1):
        cf, cb, dcache = caches[li]
        if dcache is not None:
            d = dropout_backward(d, dcache)
        h = cf[2].hidden
        dxf, dWihf, dWhhf, dbihf, dbhhf = lstm_layer_backward(d[:, :, :h], cf)
        dxb, dWihb, dWhhb, dbihb, dbhhb = lstm_layer_backward(d[:, :, h:], cb)
        grads[li] = (
            (dWihf, dWhhf, dbihf, dbhhf),
            (dWihb, dWhhb, dbihb, dbhhb),
        )
        d = dxf + dxb
    return d, grads


def bilstm_forward_seq(seq: np.ndarray, layer_weights) -> np.ndarray:
    """Single unpadded sequence [S, in] -> [S, 2h], initial states zero."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValidationError(f"sequence must be [S, in] with S >= 1, got {seq.shape}")
    mask = np.ones((1, seq.shape[0]))
    B, _ = bilstm_forward(seq[None, :, :], mask, layer_weights)
    return B[0]
