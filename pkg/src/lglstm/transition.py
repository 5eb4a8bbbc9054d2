"""Transition layer: adapts stem convolutional features into the first
layer state.

Every position feeds its feature vector to K spatial LSTMs (one shared
weight set) and one depth LSTM, all starting from zero memory.  Because the
spatial weight set is shared and all K updates read the same features and
the same zero memory, their outputs coincide; directions only start to
differ once routing moves them to different neighbors.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .lstm_core import GateWeights, Gates, gates_backward, gates_forward
from .layer import LayerState, route_hidden, route_hidden_backward


@dataclass
class TransitionWeights:
    """ws drives the K spatial transition LSTMs, we the depth one; both read
    raw stem features, so their input size differs from the layer stack's."""

    ws: GateWeights
    we: GateWeights


@dataclass
class TransitionCache:
    features: np.ndarray      # [H*W, D_conv]
    gates_s: Gates
    gates_e: Gates
    m_next_s: np.ndarray      # [H*W, d], identical across directions
    m_next_e: np.ndarray
    weights: TransitionWeights
    grid_shape: tuple
    mode: str


def transition_forward(features, weights, k, h_update="strict_paper"):
    """Build the first LayerState from a [H, W, D_conv] feature map."""
    if features.ndim != 3:
        raise DimensionError(f"features must be [H, W, C], got {features.shape}")
    if features.shape[2] != weights.ws.input_size:
        raise DimensionError(
            f"feature channels {features.shape[2]} != transition input size {weights.ws.input_size}")
    h, w, _ = features.shape
    d = weights.ws.hidden_size
    n = h * w
    flat = np.ascontiguousarray(features.reshape(n, -1))

    gates_s = gates_forward(flat, weights.ws)
    gates_e = gates_forward(flat, weights.we)
    # memory inputs are identically zero here
    m_next_s = gates_s.gu * gates_s.gc
    m_next_e = gates_e.gu * gates_e.gc
    if h_update == "strict_paper":
        h_s = np.zeros_like(m_next_s)  # tanh(g_out * 0)
        h_e = np.zeros_like(m_next_e)
    elif h_update == "standard":
        h_s = gates_s.go * np.tanh(m_next_s)
        h_e = gates_e.go * np.tanh(m_next_e)
    else:
        raise ConfigError(f"unknown h_update mode {h_update!r}")

    h_spatial_out = np.broadcast_to(h_s.reshape(h, w, 1, d), (h, w, k, d)).copy()
    state = LayerState(
        h_spatial_in=route_hidden(h_spatial_out),
        h_depth=h_e.reshape(h, w, d),
        m_spatial=np.broadcast_to(m_next_s.reshape(h, w, 1, d), (h, w, k, d)).copy(),
        m_depth=m_next_e.reshape(h, w, d),
        h_spatial_out=h_spatial_out,
    )
    cache = TransitionCache(features=flat, gates_s=gates_s, gates_e=gates_e,
                            m_next_s=m_next_s, m_next_e=m_next_e, weights=weights,
                            grid_shape=(h, w, k, d), mode=h_update)
    return state, cache


def transition_backward(cache, d_state):
    """Exact adjoint of transition_forward: returns (d_features, d_ws, d_we)."""
    h, w, k, d = cache.grid_shape
    if d_state.grid_shape != cache.grid_shape:
        raise ContractError(
            f"cotangent shape {d_state.grid_shape} does not match cache {cache.grid_shape}")
    n = h * w
    gs, ge = cache.gates_s, cache.gates_e

    d_h_sp = (d_state.h_spatial_out
              + route_hidden_backward(d_state.h_spatial_in)).reshape(n, k, d)
    d_h_e = d_state.h_depth.reshape(n, d)
    d_m_sp = d_state.m_spatial.reshape(n, k, d)
    d_m_e = d_state.m_depth.reshape(n, d)

    if cache.mode == "strict_paper":
        # h == tanh(g_out * 0): flat in g_out, so hidden cotangents vanish
        d_go_s = np.zeros_like(gs.go)
        d_go_e = np.zeros_like(ge.go)
        d_m_total_s = d_m_sp.sum(axis=1)
        d_m_total_e = d_m_e.copy()
    else:
        t_s = np.tanh(cache.m_next_s)
        d_go_s = (d_h_sp * t_s[:, None, :]).sum(axis=1)
        d_m_total_s = d_m_sp.sum(axis=1) + (d_h_sp.sum(axis=1)) * gs.go * (1.0 - t_s * t_s)
        t_e = np.tanh(cache.m_next_e)
        d_go_e = d_h_e * t_e
        d_m_total_e = d_m_e + d_h_e * ge.go * (1.0 - t_e * t_e)

    # with zero memory in, m_next = g_update * g_cell and the forget path is flat
    d_gu_s = d_m_total_s * gs.gc
    d_gc_s = d_m_total_s * gs.gu
    d_gf_s = np.zeros_like(gs.gf)
    d_gu_e = d_m_total_e * ge.gc
    d_gc_e = d_m_total_e * ge.gu
    d_gf_e = np.zeros_like(ge.gf)

    d_in_s, d_ws = gates_backward(Gates(d_gu_s, d_gf_s, d_go_s, d_gc_s), gs,
                                  cache.features, cache.weights.ws)
    d_in_e, d_we = gates_backward(Gates(d_gu_e, d_gf_e, d_go_e, d_gc_e), ge,
                                  cache.features, cache.weights.we)
    d_features = (d_in_s + d_in_e).reshape(h, w, -1)
    return d_features, d_ws, d_we
