"""Seeded PRNG, SGD-with-momentum, the training loop, and the
finite-difference gradient-check harness."""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import ConfigError, DimensionError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO53 = float(1 << 53)


class Prng:
    """SplitMix64 stream with uniform/normal variates.

    Pure-integer state updates make the stream identical on every platform:
    state += 0x9E3779B97F4A7C15; z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
    z = (z ^ z>>27) * 0x94D049BB133111EB; out = z ^ z>>31.  Floats use the top
    53 bits; normals come from Box-Muller with the second value cached.
    """

    def __init__(self, seed):
        self.state = seed & _MASK64
        self._cached_normal = None

    def next_u64(self):
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_float(self):
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) / _TWO53

    def uniform(self, lo, hi):
        return lo + (hi - lo) * self.next_float()

    def normal(self, mu=0.0, sigma=1.0):
        if self._cached_normal is not None:
            z = self._cached_normal
            self._cached_normal = None
            return mu + sigma * z
        # u1 in (0, 1] so the log never sees zero
        u1 = ((self.next_u64() >> 11) + 1) / _TWO53
        u2 = self.next_float()
        r = math.sqrt(-2.0 * math.log(u1))
        self._cached_normal = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def randint(self, lo, hi):
        """Uniform integer in [lo, hi] inclusive (modulo reduction)."""
        if hi < lo:
            raise ConfigError(f"randint: empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def shuffle(self, seq):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(0, i)
            seq[i], seq[j] = seq[j], seq[i]
        return seq

    def uniform_array(self, shape, lo, hi, dtype=np.float64):
        n = int(np.prod(shape))
        out = np.fromiter((self.uniform(lo, hi) for _ in range(n)),
                          dtype=np.float64, count=n)
        return out.reshape(shape).astype(dtype, copy=False)

    def normal_array(self, shape, mu, sigma, dtype=np.float64):
        n = int(np.prod(shape))
        out = np.fromiter((self.normal(mu, sigma) for _ in range(n)),
                          dtype=np.float64, count=n)
        return out.reshape(shape).astype(dtype, copy=False)


@dataclass
class OptState:
    """SGD-with-momentum hyperparameters and velocity buffers."""

    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 2
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def _decayed(name):
    # weight decay applies to conv kernels and gate matrices, not biases
    return not name.rsplit(".", 1)[-1].startswith("b")


def sgd_step(params, grads, opt):
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            opt.velocity[name] = v
        step = g
        if opt.weight_decay and _decayed(name):
            step = step + opt.weight_decay * p
        v *= opt.momentum
        v += step
        p -= opt.lr * v


@dataclass
class TrainResult:
    model: object
    loss_trace: List[Tuple[int, float]]
    metric_trace: List[Tuple[int, float, float]]  # (step, pixel_acc, mean_iou)
    steps: int


def train(model, dataset, opt, epochs, seed, eval_every=0, max_steps=None,
          stop_acc=None, stop_iou=None):
    """Epoch loop with seeded shuffling and mean-over-batch gradients.

    Records (step, mean batch loss) per step and, every `eval_every` steps,
    (step, pixel accuracy, mean IoU) over the whole dataset.  Optional
    stop_acc/stop_iou end training early once BOTH thresholds are met at an
    evaluation point.
    """
    from . import network  # local import: this module is below network

    if not dataset:
        raise ConfigError("training dataset is empty")
    rng = Prng(seed)
    params = model.named_parameters()
    loss_trace, metric_trace = [], []
    order = list(range(len(dataset)))
    step = 0
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), opt.batch_size):
            batch = order[start:start + opt.batch_size]
            batch_loss = 0.0
            grads = None
            for idx in batch:
                sample = dataset[idx]
                trace = network.model_forward(model, sample.image, sample.labels)
                g = network.model_backward(model, trace)
                batch_loss += trace.total_loss
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] += g[name]
            scale = 1.0 / len(batch)
            for name in grads:
                grads[name] *= scale
            sgd_step(params, grads, opt)
            step += 1
            loss_trace.append((step, batch_loss * scale))
            if eval_every and step % eval_every == 0:
                acc, miou = _dataset_metrics(model, dataset)
                metric_trace.append((step, acc, miou))
                if (stop_acc is not None and stop_iou is not None
                        and acc >= stop_acc and miou >= stop_iou):
                    return TrainResult(model, loss_trace, metric_trace, step)
            if max_steps is not None and step >= max_steps:
                return TrainResult(model, loss_trace, metric_trace, step)
    return TrainResult(model, loss_trace, metric_trace, step)


def _dataset_metrics(model, dataset):
    from . import dataio, network

    preds = [network.predict(model, s.image) for s in dataset]
    gts = [s.labels for s in dataset]
    report = dataio.evaluate(preds, gts, model.config.classes)
    return report.pixel_acc, report.mean_iou


@dataclass
class GradCheckReport:
    n_coords: int
    eps: float
    tol: float
    abs_floor: float
    max_rel_err: float
    worst_name: str
    worst_index: int
    worst_analytic: float
    worst_numeric: float
    passed: bool


def tiny_gradcheck_config(**overrides):
    """The default desk-size gradient-check model configuration."""
    from .network import ModelConfig

    base = dict(d=4, layers=2, classes=3, directions=8, use_global=True,
                h_update="strict_paper", biases=True, stem_channels=(8, 8),
                precision="wide")
    base.update(overrides)
    return ModelConfig(**base)


def grad_check(config=None, seed=0, n_coords=200, eps=1e-5, tol=1e-5,
               height=6, width=6, abs_floor=None):
    """Compare model_backward against central finite differences.

    Builds a small random model and sample, then for n_coords randomly
    chosen parameter coordinates compares the analytic gradient with
    (loss(p+eps) - loss(p-eps)) / (2*eps).  Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-8), except that |a - n| <= abs_floor counts
    as exact agreement.

    abs_floor defaults to 32x the finite-difference measurement resolution:
    one loss evaluation carries ~machine-eps * |loss| of rounding noise, so
    a central difference cannot resolve gradient differences below roughly
    that noise / (2*eps) (~1e-10 here).  Coordinates whose true gradient
    sits under the resolution would otherwise report pure roundoff as
    mismatch at any tolerance; genuine adjoint bugs perturb the loss far
    above it and still fail.

    Gate and head parameters are redrawn from Uniform(-0.5, 0.5); stem
    kernels from Uniform(0.1, 0.6), which keeps relu pre-activations away
    from the kink so the loss stays differentiable along every probe.
    """
    from . import network

    if config is None:
        config = tiny_gradcheck_config()
    if config.precision != "wide":
        raise ConfigError("gradient checking requires wide precision")
    rng = Prng(seed)
    model = network.init_model(config, seed)
    params = model.named_parameters()
    for name, p in params.items():
        if name.startswith("stem."):
            p[...] = rng.uniform_array(p.shape, 0.1, 0.6, p.dtype)
        else:
            p[...] = rng.uniform_array(p.shape, -0.5, 0.5, p.dtype)
    image = rng.uniform_array((height, width, config.in_channels), 0.0, 1.0)
    labels = np.array([[rng.randint(0, config.classes - 1) for _ in range(width)]
                       for _ in range(height)], dtype=np.int64)

    base = network.model_forward(model, image, labels)
    analytic = network.model_backward(model, base)
    if abs_floor is None:
        noise = np.finfo(np.float64).eps * max(1.0, abs(base.total_loss)) / (2.0 * eps)
        abs_floor = 32.0 * noise

    names = list(params)
    sizes = [params[name].size for name in names]
    total = sum(sizes)
    worst = (0.0, names[0], 0, 0.0, 0.0)
    for _ in range(n_coords):
        flat = rng.randint(0, total - 1)
        for name, size in zip(names, sizes):
            if flat < size:
                break
            flat -= size
        p = params[name]
        original = p.flat[flat]
        p.flat[flat] = original + eps
        loss_plus = network.model_forward(model, image, labels).total_loss
        p.flat[flat] = original - eps
        loss_minus = network.model_forward(model, image, labels).total_loss
        p.flat[flat] = original
        numeric = (loss_plus - loss_minus) / (2.0 * eps)
        a = float(analytic[name].flat[flat])
        diff = abs(a - numeric)
        rel = 0.0 if diff <= abs_floor else diff / max(abs(a), abs(numeric), 1e-8)
        if rel > worst[0]:
            worst = (rel, name, flat, a, numeric)
    return GradCheckReport(n_coords=n_coords, eps=eps, tol=tol,
                           abs_floor=abs_floor,
                           max_rel_err=worst[0], worst_name=worst[1],
                           worst_index=worst[2], worst_analytic=worst[3],
                           worst_numeric=worst[4], passed=worst[0] <= tol)
