"""The single LSTM transition shared by the transition layer and every
spatial/depth update.

Gates are functions of the concatenated input state only (the previous hidden
content is already part of that concatenation), so one gate evaluation can be
broadcast across all memory streams that share weights.  Two hidden-update
rules are supported:

* ``strict_paper`` (default): h_next = tanh(g_out * m_prev) -- the hidden
  cell reads the output gate against the *previous* memory.
* ``standard``: h_next = g_out * tanh(m_next) -- the conventional rule.

Both rules share m_next = g_forget * m_prev + g_update * g_cell.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import sigmoid

MODES = ("strict_paper", "standard")

GATE_NAMES = ("wu", "wf", "wo", "wc")
BIAS_NAMES = ("bu", "bf", "bo", "bc")


@dataclass
class GateWeights:
    """The four gate matrices (update, forget, output, cell) of one LSTM,
    all shaped [d, d_in], with optional length-d biases."""

    wu: np.ndarray
    wf: np.ndarray
    wo: np.ndarray
    wc: np.ndarray
    bu: Optional[np.ndarray] = None
    bf: Optional[np.ndarray] = None
    bo: Optional[np.ndarray] = None
    bc: Optional[np.ndarray] = None

    @property
    def hidden_size(self):
        return self.wu.shape[0]

    @property
    def input_size(self):
        return self.wu.shape[1]

    @property
    def has_biases(self):
        return self.bu is not None

    def zeros_like(self):
        return GateWeights(
            np.zeros_like(self.wu), np.zeros_like(self.wf),
            np.zeros_like(self.wo), np.zeros_like(self.wc),
            *(None if b is None else np.zeros_like(b)
              for b in (self.bu, self.bf, self.bo, self.bc)))

    def add_(self, other):
        """In-place accumulation of another GateWeights of identical layout."""
        self.wu += other.wu
        self.wf += other.wf
        self.wo += other.wo
        self.wc += other.wc
        if self.has_biases:
            self.bu += other.bu
            self.bf += other.bf
            self.bo += other.bo
            self.bc += other.bc
        return self


def zero_gate_weights(d, d_in, biases, dtype):
    mats = [np.zeros((d, d_in), dtype=dtype) for _ in range(4)]
    bias = [np.zeros(d, dtype=dtype) for _ in range(4)] if biases else [None] * 4
    return GateWeights(*mats, *bias)


@dataclass
class Gates:
    """Activated gate values; arrays of shape [..., d]."""

    gu: np.ndarray
    gf: np.ndarray
    go: np.ndarray
    gc: np.ndarray


def gates_forward(inputs, w):
    """Evaluate all four gates for a [N, d_in] batch of input states."""
    if inputs.shape[-1] != w.input_size:
        raise DimensionError(
            f"input state size {inputs.shape[-1]} != weight input size {w.input_size}")

    def gate(mat, bias, squash):
        z = inputs @ mat.T
        if bias is not None:
            z = z + bias
        return squash(z)

    return Gates(
        gu=gate(w.wu, w.bu, sigmoid),
        gf=gate(w.wf, w.bf, sigmoid),
        go=gate(w.wo, w.bo, sigmoid),
        gc=gate(w.wc, w.bc, np.tanh),
    )


def gates_backward(d_gates, gates, inputs, w):
    """Map gate cotangents back to (d_inputs, d_w) for a [N, d_in] batch.

    Sigmoid and tanh derivatives are evaluated from the cached gate values.
    """
    dzu = d_gates.gu * gates.gu * (1.0 - gates.gu)
    dzf = d_gates.gf * gates.gf * (1.0 - gates.gf)
    dzo = d_gates.go * gates.go * (1.0 - gates.go)
    dzc = d_gates.gc * (1.0 - gates.gc * gates.gc)
    d_w = GateWeights(
        wu=dzu.T @ inputs, wf=dzf.T @ inputs, wo=dzo.T @ inputs, wc=dzc.T @ inputs,
        bu=dzu.sum(0) if w.has_biases else None,
        bf=dzf.sum(0) if w.has_biases else None,
        bo=dzo.sum(0) if w.has_biases else None,
        bc=dzc.sum(0) if w.has_biases else None,
    )
    d_inputs = dzu @ w.wu + dzf @ w.wf + dzo @ w.wo + dzc @ w.wc
    return d_inputs, d_w


@dataclass
class CellIO:
    """Forward result of one LSTM update plus everything backward needs."""

    input_state: np.ndarray
    m_prev: np.ndarray
    h_next: np.ndarray
    m_next: np.ndarray
    gates: Gates
    mode: str


def _check_mode(mode):
    if mode not in MODES:
        raise ContractError(f"unknown h_update mode {mode!r}, expected one of {MODES}")


def lstm_forward(input_state, m_prev, w, mode="strict_paper"):
    """One LSTM transition on a single input-state vector.

    input_state: [d_in]; m_prev: [d].  Returns a CellIO carrying h_next,
    m_next and the gate cache for the paired backward.
    """
    _check_mode(mode)
    if m_prev.shape != (w.hidden_size,):
        raise DimensionError(
            f"memory size {m_prev.shape} != weight hidden size ({w.hidden_size},)")
    gates = gates_forward(input_state[None, :], w)
    gates = Gates(gates.gu[0], gates.gf[0], gates.go[0], gates.gc[0])
    m_next = gates.gf * m_prev + gates.gu * gates.gc
    if mode == "strict_paper":
        h_next = np.tanh(gates.go * m_prev)
    else:
        h_next = gates.go * np.tanh(m_next)
    return CellIO(input_state=input_state, m_prev=m_prev, h_next=h_next,
                  m_next=m_next, gates=gates, mode=mode)


def lstm_backward(cell, d_h_next, d_m_next, w, mode="strict_paper"):
    """Exact adjoint of lstm_forward.

    Returns (d_input_state, d_m_prev, d_w).  Weight gradients are for this
    single call; callers accumulate across positions/directions/layers
    because weights are shared.
    """
    _check_mode(mode)
    if cell.mode != mode:
        raise ContractError(
            f"cache was produced in mode {cell.mode!r} but backward asked for {mode!r}")
    g = cell.gates
    if mode == "strict_paper":
        pre = g.go * cell.m_prev
        t = np.tanh(pre)
        d_pre = d_h_next * (1.0 - t * t)
        d_go = d_pre * cell.m_prev
        d_m_prev = d_pre * g.go
        d_m = np.array(d_m_next, copy=True)
    else:
        t = np.tanh(cell.m_next)
        d_go = d_h_next * t
        d_m = d_m_next + d_h_next * g.go * (1.0 - t * t)
        d_m_prev = np.zeros_like(cell.m_prev)
    d_gf = d_m * cell.m_prev
    d_m_prev = d_m_prev + d_m * g.gf
    d_gu = d_m * g.gc
    d_gc = d_m * g.gu
    d_gates = Gates(gu=d_gu[None, :], gf=d_gf[None, :], go=d_go[None, :], gc=d_gc[None, :])
    gates_b = Gates(g.gu[None, :], g.gf[None, :], g.go[None, :], g.gc[None, :])
    d_inputs, d_w = gates_backward(d_gates, gates_b, cell.input_state[None, :], w)
    return d_inputs[0], d_m_prev, d_w
