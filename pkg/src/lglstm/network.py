"""Full model: conv stem -> transition -> stacked local-global LSTM layers
-> per-layer 1x1 classifier heads with one cross-entropy loss per layer.

Each head reads the same assembled per-position input state that the next
layer consumes (global cells | K directional hidden cells | depth hidden
cell), so supervision reaches every layer directly.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .lstm_core import zero_gate_weights
from .layer import (GLOBAL_GRIDS, LayerState, LayerWeights, assemble_all,
                    compute_global_cells, direction_offsets, input_state_size,
                    layer_backward, layer_forward)
from .numerics import (conv2d, conv2d_backward, grid_max_pool_backward,
                       pointwise, pointwise_backward, resolve_dtype,
                       softmax_xent_map)
from .transition import TransitionWeights, transition_backward, transition_forward


@dataclass
class ModelConfig:
    d: int = 64                      # hidden size per LSTM
    layers: int = 5                  # stacked local-global layers
    classes: int = 5
    directions: int = 8              # 2 | 4 | 8
    use_global: bool = True
    h_update: str = "strict_paper"   # strict_paper | standard
    biases: bool = True
    stem_channels: tuple = (32, 32)  # 3x3 conv + relu per entry; may be empty
    precision: str = "wide"          # wide (f64) | narrow (f32)
    in_channels: int = 1
    init_gate_scale: float = 0.1     # gate matrices ~ Uniform(-scale, scale)
    init_conv_std: float = 0.001     # conv kernels ~ Normal(0, std^2)

    def validate(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        direction_offsets(self.directions)
        if self.h_update not in ("strict_paper", "standard"):
            raise ConfigError(f"unknown h_update {self.h_update!r}")
        resolve_dtype(self.precision)
        if any(c < 1 for c in self.stem_channels):
            raise ConfigError(f"stem channels must be >= 1, got {self.stem_channels}")
        if self.init_gate_scale <= 0 or self.init_conv_std <= 0:
            raise ConfigError("initialization scales must be positive")
        return self

    @property
    def dtype(self):
        return resolve_dtype(self.precision)

    @property
    def input_state_size(self):
        return input_state_size(self.d, self.directions, self.use_global)

    @property
    def feature_channels(self):
        """Channel count the transition layer consumes."""
        return self.stem_channels[-1] if self.stem_channels else self.in_channels


@dataclass
class Model:
    stem: List[np.ndarray]           # [Cout, 3, 3, Cin] per stem layer
    transition: TransitionWeights
    lglstm: LayerWeights             # the ONE shared pair for the whole stack
    heads: List[np.ndarray]          # [C, 1, 1, input_state_size] per layer
    config: ModelConfig

    def named_parameters(self):
        """Ordered name -> array view of every trainable tensor.

        The namespace is fixed: stem.{i}.kernel, transition.{ws|we}.{gate},
        lglstm.{ws|we}.{gate}, head.{i}.kernel; gate order wu, wf, wo, wc
        then bu, bf, bo, bc when biases are enabled.
        """
        params = {}
        for i, kern in enumerate(self.stem):
            params[f"stem.{i}.kernel"] = kern
        for prefix, gw in (("transition.ws", self.transition.ws),
                           ("transition.we", self.transition.we),
                           ("lglstm.ws", self.lglstm.ws),
                           ("lglstm.we", self.lglstm.we)):
            params[f"{prefix}.wu"] = gw.wu
            params[f"{prefix}.wf"] = gw.wf
            params[f"{prefix}.wo"] = gw.wo
            params[f"{prefix}.wc"] = gw.wc
            if gw.has_biases:
                params[f"{prefix}.bu"] = gw.bu
                params[f"{prefix}.bf"] = gw.bf
                params[f"{prefix}.bo"] = gw.bo
                params[f"{prefix}.bc"] = gw.bc
        for i, kern in enumerate(self.heads):
            params[f"head.{i}.kernel"] = kern
        return params

    def set_parameters(self, values):
        """Copy a name -> array mapping into the model tensors (shapes must match)."""
        params = self.named_parameters()
        for name, arr in values.items():
            params[name][...] = arr


def parameter_count(config):
    """Closed-form trainable parameter count for a config.

    stem:        sum over layers of Cout*9*Cin
    transition:  2 * 4 * d * D_conv   (+ 2*4*d biases)
    layer stack: 2 * 4 * d * input_state_size (+ 2*4*d biases); independent of L
    heads:       L * C * input_state_size
    """
    cin = config.in_channels
    total = 0
    for cout in config.stem_channels:
        total += cout * 9 * cin
        cin = cout
    bias = 4 * config.d if config.biases else 0
    total += 2 * (4 * config.d * config.feature_channels + bias)
    total += 2 * (4 * config.d * config.input_state_size + bias)
    total += config.layers * config.classes * config.input_state_size
    return total


def init_model(config, seed):
    """Seeded model initialization.

    By default, LSTM gate matrices (and nothing else) draw from
    Uniform(-0.1, 0.1) and conv kernels from Normal(0, 0.001^2); biases
    start at zero.  The scales are config defaults: desk-scale runs without
    a pretrained backbone may need warmer ones (see init_gate_scale /
    init_conv_std).  Tensors are filled in named_parameters order from a
    single stream, so equal seeds give bit-identical models.
    """
    from .training import Prng  # local import: training builds on this module

    config.validate()
    dtype = config.dtype
    rng = Prng(seed)
    stem = []
    cin = config.in_channels
    for cout in config.stem_channels:
        stem.append(rng.normal_array((cout, 3, 3, cin), 0.0, config.init_conv_std, dtype))
        cin = cout

    def gate_weights(d_in):
        gw = zero_gate_weights(config.d, d_in, config.biases, dtype)
        scale = config.init_gate_scale
        for mat in (gw.wu, gw.wf, gw.wo, gw.wc):
            mat[...] = rng.uniform_array(mat.shape, -scale, scale, dtype)
        return gw

    transition = TransitionWeights(ws=gate_weights(config.feature_channels),
                                   we=gate_weights(config.feature_channels))
    lglstm = LayerWeights(ws=gate_weights(config.input_state_size),
                          we=gate_weights(config.input_state_size))
    heads = [rng.normal_array((config.classes, 1, 1, config.input_state_size),
                              0.0, config.init_conv_std, dtype)
             for _ in range(config.layers)]
    return Model(stem=stem, transition=transition, lglstm=lglstm, heads=heads,
                 config=config)


@dataclass
class ForwardTrace:
    """Everything model_backward (and predict) needs from a forward pass."""

    image: np.ndarray
    stem_inputs: List[np.ndarray]
    stem_outputs: List[np.ndarray]
    transition_cache: object
    layer_caches: List[object]
    head_inputs: List[np.ndarray]    # assembled [H, W, input_state_size] per layer
    head_pool_argmax: List[Optional[np.ndarray]]
    logits: List[np.ndarray]         # [H, W, C] per layer
    labels: Optional[np.ndarray] = None
    losses: Optional[List[float]] = None
    loss_grads: Optional[List[np.ndarray]] = None
    total_loss: Optional[float] = None


def model_forward(model, image, labels=None):
    """Forward pass over one image; per-layer losses when labels are given."""
    cfg = model.config
    if image.ndim != 3 or image.shape[2] != cfg.in_channels:
        raise DimensionError(
            f"image must be [H, W, {cfg.in_channels}], got {image.shape}")
    x = np.ascontiguousarray(image, dtype=cfg.dtype)

    stem_inputs, stem_outputs = [], []
    for kern in model.stem:
        stem_inputs.append(x)
        x = pointwise("relu", conv2d(x, kern))
        stem_outputs.append(x)

    state, t_cache = transition_forward(x, model.transition, cfg.directions, cfg.h_update)
    layer_caches, head_inputs, head_argmax, logits = [], [], [], []
    for i in range(cfg.layers):
        state, cache = layer_forward(state, model.lglstm,
                                     use_global=cfg.use_global, h_update=cfg.h_update)
        layer_caches.append(cache)
        if cfg.use_global:
            cells = compute_global_cells(state.h_depth)
            head_argmax.append(cells.argmax)
        else:
            cells = None
            head_argmax.append(None)
        assembled = assemble_all(state, cells)
        head_inputs.append(assembled)
        head_w = model.heads[i].reshape(cfg.classes, -1)
        logits.append(assembled @ head_w.T)

    trace = ForwardTrace(image=image, stem_inputs=stem_inputs, stem_outputs=stem_outputs,
                         transition_cache=t_cache, layer_caches=layer_caches,
                         head_inputs=head_inputs, head_pool_argmax=head_argmax,
                         logits=logits)
    if labels is not None:
        labels = np.asarray(labels)
        losses, grads = [], []
        for lg in logits:
            loss, d_logits = softmax_xent_map(lg, labels)
            losses.append(loss)
            grads.append(d_logits)
        trace.labels = labels
        trace.losses = losses
        trace.loss_grads = grads
        trace.total_loss = float(sum(losses))
    return trace


def model_backward(model, trace, loss_weights=None):
    """Exact adjoint of the total (deep-supervision) loss.

    Returns gradients as a name -> array dict matching named_parameters.
    Shared layer-stack weights accumulate over positions, directions and all
    layers; optional loss_weights rescale each per-layer loss (default 1).
    """
    if trace.losses is None:
        raise ContractError("trace has no losses; run model_forward with labels")
    cfg = model.config
    n_layers = cfg.layers
    if loss_weights is None:
        loss_weights = [1.0] * n_layers
    h, w, _ = trace.logits[0].shape
    d, k = cfg.d, cfg.directions
    dtype = cfg.dtype

    grads = {name: np.zeros_like(p) for name, p in model.named_parameters().items()}
    d_state = LayerState.zeros(h, w, k, d, dtype)
    d_ws_total = model.lglstm.ws.zeros_like()
    d_we_total = model.lglstm.we.zeros_like()

    for i in reversed(range(n_layers)):
        d_logits = trace.loss_grads[i] * loss_weights[i]
        assembled = trace.head_inputs[i]
        head_w = model.heads[i].reshape(cfg.classes, -1)
        grads[f"head.{i}.kernel"] += np.einsum("hwc,hwd->cd", d_logits, assembled)\
            .reshape(model.heads[i].shape)
        d_assembled = d_logits @ head_w

        base = 0
        if cfg.use_global:
            g_len = GLOBAL_GRIDS * d
            d_flat = d_assembled[..., :g_len].sum(axis=(0, 1))
            d_state.h_depth += grid_max_pool_backward(
                d_flat.reshape(3, 3, d), trace.head_pool_argmax[i], (h, w, d))
            base = g_len
        d_state.h_spatial_in += d_assembled[..., base:base + k * d].reshape(h, w, k, d)
        d_state.h_depth += d_assembled[..., base + k * d:]

        d_state, d_ws, d_we = layer_backward(trace.layer_caches[i], d_state)
        d_ws_total.add_(d_ws)
        d_we_total.add_(d_we)

    d_features, d_wst, d_wet = transition_backward(trace.transition_cache, d_state)
    _store_gate_grads(grads, "lglstm.ws", d_ws_total)
    _store_gate_grads(grads, "lglstm.we", d_we_total)
    _store_gate_grads(grads, "transition.ws", d_wst)
    _store_gate_grads(grads, "transition.we", d_wet)

    d_x = d_features
    for i in reversed(range(len(model.stem))):
        d_pre = pointwise_backward("relu", d_x, trace.stem_outputs[i])
        d_x, d_kern = conv2d_backward(d_pre, trace.stem_inputs[i], model.stem[i])
        grads[f"stem.{i}.kernel"] += d_kern
    return grads


def _store_gate_grads(grads, prefix, gw):
    grads[f"{prefix}.wu"] += gw.wu
    grads[f"{prefix}.wf"] += gw.wf
    grads[f"{prefix}.wo"] += gw.wo
    grads[f"{prefix}.wc"] += gw.wc
    if gw.has_biases:
        grads[f"{prefix}.bu"] += gw.bu
        grads[f"{prefix}.bf"] += gw.bf
        grads[f"{prefix}.bo"] += gw.bo
        grads[f"{prefix}.bc"] += gw.bc


def argmax_labels(logits):
    """Per-pixel argmax over the class axis; ties go to the smallest index."""
    return np.argmax(logits, axis=-1)


def predict(model, image):
    """Label map from the last layer's logits."""
    trace = model_forward(model, image)
    return argmax_labels(trace.logits[-1])
