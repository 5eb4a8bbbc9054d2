"""One local-global LSTM layer.

Each position of an H x W map runs K spatial LSTMs (one per neighbor
direction, shared weights) plus one depth LSTM, all reading the same
assembled input state: [global cells | K incoming directional hidden cells |
depth hidden cell].  Outgoing directional hidden cells are routed to the
neighbor they point at; memory cells stay at their position across layers.

Because gates depend only on the shared input state, one gate evaluation per
weight set serves every direction at a position; only the per-direction
memory streams differ.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .lstm_core import GateWeights, Gates, gates_backward, gates_forward
from .numerics import grid_max_pool, grid_max_pool_backward

# Fixed direction orders: offsets are (drow, dcol); a position emits toward
# offset n and receives from the neighbor at position - offset_n.
DIRECTIONS = {
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
    2: ((-1, 0), (0, -1)),
    4: ((-1, 0), (0, -1), (-1, -1), (-1, 1)),
}

GLOBAL_GRIDS = 9


def direction_offsets(k):
    try:
        return DIRECTIONS[k]
    except KeyError:
        raise ConfigError(f"unsupported direction count {k}, expected one of {sorted(DIRECTIONS)}") from None


def input_state_size(d, k, use_global):
    """Length of the assembled per-position input state."""
    return ((GLOBAL_GRIDS if use_global else 0) + k + 1) * d


@dataclass
class LayerState:
    """Per-position maps flowing between stacked layers.

    h_spatial_in  [H, W, K, d]: incoming directional hidden cells (routed).
    h_depth       [H, W, d]:    depth hidden cells.
    m_spatial     [H, W, K, d]: per-direction memory cells (stay at position).
    m_depth       [H, W, d]:    depth memory cells.
    h_spatial_out [H, W, K, d]: outgoing directional hidden cells (pre-routing).
    """

    h_spatial_in: np.ndarray
    h_depth: np.ndarray
    m_spatial: np.ndarray
    m_depth: np.ndarray
    h_spatial_out: np.ndarray

    @classmethod
    def zeros(cls, height, width, k, d, dtype):
        sp = (height, width, k, d)
        dp = (height, width, d)
        return cls(np.zeros(sp, dtype), np.zeros(dp, dtype), np.zeros(sp, dtype),
                   np.zeros(dp, dtype), np.zeros(sp, dtype))

    @property
    def grid_shape(self):
        return self.m_spatial.shape  # (H, W, K, d)


@dataclass
class GlobalCells:
    """Flattened nine-grid pooling of the depth hidden map: values has length
    9*d in (grid_row, grid_col, channel) order."""

    values: np.ndarray
    argmax: np.ndarray


@dataclass
class LayerWeights:
    """The single shared weight pair of the whole layer stack: ws drives all
    K spatial LSTMs, we the depth LSTM."""

    ws: GateWeights
    we: GateWeights


def compute_global_cells(h_depth):
    """Nine-grid max pooling of the depth hidden map, flattened to 9*d."""
    pooled, argmax = grid_max_pool(h_depth)
    return GlobalCells(values=pooled.reshape(-1), argmax=argmax)


def assemble_input_state(state, global_cells, pos):
    """The input state consumed at one position: [global | spatial 1..K | depth]."""
    r, c = pos
    parts = []
    if global_cells is not None:
        parts.append(global_cells.values)
    k = state.h_spatial_in.shape[2]
    parts.extend(state.h_spatial_in[r, c, n] for n in range(k))
    parts.append(state.h_depth[r, c])
    return np.concatenate(parts)


def assemble_all(state, global_cells):
    """Assembled input states for every position at once: [H, W, (G+K+1)*d]."""
    h, w, k, d = state.grid_shape
    parts = []
    if global_cells is not None:
        parts.append(np.broadcast_to(global_cells.values, (h, w, GLOBAL_GRIDS * d)))
    parts.append(state.h_spatial_in.reshape(h, w, k * d))
    parts.append(state.h_depth)
    return np.concatenate(parts, axis=-1)


def route_hidden(h_out):
    """Move each outgoing directional map to the neighbor it points at.

    incoming[p, n] = h_out[p - offset_n, n] where the source is on-image,
    zero otherwise.
    """
    h, w, k, _ = h_out.shape
    offsets = direction_offsets(k)
    incoming = np.zeros_like(h_out)
    for n, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, dr), h + min(0, dr)
        c0, c1 = max(0, dc), w + min(0, dc)
        incoming[r0:r1, c0:c1, n] = h_out[r0 - dr:r1 - dr, c0 - dc:c1 - dc, n]
    return incoming


def route_hidden_backward(d_incoming):
    """Transpose of route_hidden: scatter cotangents back to source positions."""
    h, w, k, _ = d_incoming.shape
    offsets = direction_offsets(k)
    d_out = np.zeros_like(d_incoming)
    for n, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, dr), h + min(0, dr)
        c0, c1 = max(0, dc), w + min(0, dc)
        d_out[r0 - dr:r1 - dr, c0 - dc:c1 - dc, n] = d_incoming[r0:r1, c0:c1, n]
    return d_out


@dataclass
class LayerCache:
    """Everything layer_backward needs from the matching forward."""

    inputs: np.ndarray           # [H*W, d_in] assembled input states
    gates_s: Gates               # spatial gates, [H*W, d]
    gates_e: Gates               # depth gates, [H*W, d]
    m_spatial_prev: np.ndarray   # [H*W, K, d]
    m_depth_prev: np.ndarray     # [H*W, d]
    m_spatial_next: np.ndarray
    m_depth_next: np.ndarray
    global_cells: Optional[GlobalCells]
    weights: LayerWeights
    grid_shape: tuple
    mode: str


def layer_forward(state_in, weights, use_global=True, h_update="strict_paper"):
    """Run one layer over a fully populated state; returns (state_out, cache)."""
    h, w, k, d = state_in.grid_shape
    n = h * w
    global_cells = compute_global_cells(state_in.h_depth) if use_global else None
    expected = input_state_size(d, k, use_global)
    if weights.ws.input_size != expected:
        raise DimensionError(
            f"layer weights expect input size {weights.ws.input_size}, state assembles {expected}")
    inputs = assemble_all(state_in, global_cells).reshape(n, expected)

    gates_s = gates_forward(inputs, weights.ws)
    gates_e = gates_forward(inputs, weights.we)

    m_sp_prev = state_in.m_spatial.reshape(n, k, d)
    m_sp_next = gates_s.gf[:, None, :] * m_sp_prev + (gates_s.gu * gates_s.gc)[:, None, :]
    m_e_prev = state_in.m_depth.reshape(n, d)
    m_e_next = gates_e.gf * m_e_prev + gates_e.gu * gates_e.gc
    if h_update == "strict_paper":
        h_sp = np.tanh(gates_s.go[:, None, :] * m_sp_prev)
        h_e = np.tanh(gates_e.go * m_e_prev)
    elif h_update == "standard":
        h_sp = gates_s.go[:, None, :] * np.tanh(m_sp_next)
        h_e = gates_e.go * np.tanh(m_e_next)
    else:
        raise ConfigError(f"unknown h_update mode {h_update!r}")

    h_spatial_out = h_sp.reshape(h, w, k, d)
    state_out = LayerState(
        h_spatial_in=route_hidden(h_spatial_out),
        h_depth=h_e.reshape(h, w, d),
        m_spatial=m_sp_next.reshape(h, w, k, d),
        m_depth=m_e_next.reshape(h, w, d),
        h_spatial_out=h_spatial_out,
    )
    cache = LayerCache(inputs=inputs, gates_s=gates_s, gates_e=gates_e,
                       m_spatial_prev=m_sp_prev, m_depth_prev=m_e_prev,
                       m_spatial_next=m_sp_next, m_depth_next=m_e_next,
                       global_cells=global_cells, weights=weights,
                       grid_shape=(h, w, k, d), mode=h_update)
    return state_out, cache


def layer_backward(cache, d_state_out):
    """Exact adjoint of layer_forward.

    d_state_out is a LayerState-shaped cotangent on the forward's output
    (fields not reached by the loss may be zero).  Returns (d_state_in,
    d_ws, d_we); weight gradients are summed over positions and directions.
    """
    h, w, k, d = cache.grid_shape
    if d_state_out.grid_shape != cache.grid_shape:
        raise ContractError(
            f"cotangent shape {d_state_out.grid_shape} does not match cache {cache.grid_shape}")
    n = h * w
    gs, ge = cache.gates_s, cache.gates_e

    d_h_sp = (d_state_out.h_spatial_out
              + route_hidden_backward(d_state_out.h_spatial_in)).reshape(n, k, d)
    d_h_e = d_state_out.h_depth.reshape(n, d)

    if cache.mode == "strict_paper":
        t_sp = np.tanh(gs.go[:, None, :] * cache.m_spatial_prev)
        d_pre = d_h_sp * (1.0 - t_sp * t_sp)
        d_go_s = (d_pre * cache.m_spatial_prev).sum(axis=1)
        d_m_sp_prev = d_pre * gs.go[:, None, :]
        d_m_sp = d_state_out.m_spatial.reshape(n, k, d).copy()

        t_e = np.tanh(ge.go * cache.m_depth_prev)
        d_pre_e = d_h_e * (1.0 - t_e * t_e)
        d_go_e = d_pre_e * cache.m_depth_prev
        d_m_e_prev = d_pre_e * ge.go
        d_m_e = d_state_out.m_depth.reshape(n, d).copy()
    else:
        t_sp = np.tanh(cache.m_spatial_next)
        d_go_s = (d_h_sp * t_sp).sum(axis=1)
        d_m_sp = (d_state_out.m_spatial.reshape(n, k, d)
                  + d_h_sp * gs.go[:, None, :] * (1.0 - t_sp * t_sp))
        d_m_sp_prev = np.zeros_like(cache.m_spatial_prev)

        t_e = np.tanh(cache.m_depth_next)
        d_go_e = d_h_e * t_e
        d_m_e = (d_state_out.m_depth.reshape(n, d)
                 + d_h_e * ge.go * (1.0 - t_e * t_e))
        d_m_e_prev = np.zeros_like(cache.m_depth_prev)

    d_gf_s = (d_m_sp * cache.m_spatial_prev).sum(axis=1)
    d_m_sp_prev = d_m_sp_prev + d_m_sp * gs.gf[:, None, :]
    d_m_total = d_m_sp.sum(axis=1)
    d_gu_s = d_m_total * gs.gc
    d_gc_s = d_m_total * gs.gu

    d_gf_e = d_m_e * cache.m_depth_prev
    d_m_e_prev = d_m_e_prev + d_m_e * ge.gf
    d_gu_e = d_m_e * ge.gc
    d_gc_e = d_m_e * ge.gu

    d_in_s, d_ws = gates_backward(Gates(d_gu_s, d_gf_s, d_go_s, d_gc_s), gs,
                                  cache.inputs, cache.weights.ws)
    d_in_e, d_we = gates_backward(Gates(d_gu_e, d_gf_e, d_go_e, d_gc_e), ge,
                                  cache.inputs, cache.weights.we)
    d_inputs = (d_in_s + d_in_e).reshape(h, w, -1)

    d_state_in = LayerState.zeros(h, w, k, d, cache.inputs.dtype)
    base = 0
    if cache.global_cells is not None:
        g_len = GLOBAL_GRIDS * d
        d_flat = d_inputs[..., :g_len].sum(axis=(0, 1))
        d_state_in.h_depth += grid_max_pool_backward(
            d_flat.reshape(3, 3, d), cache.global_cells.argmax, (h, w, d))
        base = g_len
    d_state_in.h_spatial_in = d_inputs[..., base:base + k * d].reshape(h, w, k, d).copy()
    d_state_in.h_depth += d_inputs[..., base + k * d:]
    d_state_in.m_spatial = d_m_sp_prev.reshape(h, w, k, d)
    d_state_in.m_depth = d_m_e_prev.reshape(h, w, d)
    return d_state_in, d_ws, d_we
