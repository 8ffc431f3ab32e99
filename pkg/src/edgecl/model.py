"""Tiny dense detectors: forward pass, weighted-loss training, fault scoring.

Two heads are supported.  The reconstruction head ("ae") is a linear-output
autoencoder scored by normalised reconstruction error; the classifier head
("mlp") ends in a single sigmoid unit.  Weights are stored float32 (that is
what goes over the wire); gradient and update arithmetic run in float64 so
the finite-difference checks hold at tight tolerances.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

HEAD_AE = "ae"
HEAD_MLP = "mlp"

DEFAULT_LAMBDA_FAULT = -0.1
DEFAULT_LAMBDA_NORMAL = 1.0

# Per-round epoch rule: 2000 / (window size), floored, clamped to [5, 16].
EPOCH_BUDGET = 2000
EPOCH_MIN = 5
EPOCH_MAX = 16

E_REF_PERCENTILE = 95.0
E_REF_FLOOR = 1e-12
_SIGMOID_EPS = 1e-7


class ModelError(ValueError):
    pass


def epochs_for_window(w: int) -> int:
    return int(np.clip(EPOCH_BUDGET // (2 * w + 1), EPOCH_MIN, EPOCH_MAX))


@dataclass
class TrainBatch:
    """Feature rows with their binary fault labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs)
        self.labels = np.asarray(self.labels)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ModelError("batch inputs and labels must align")

    def __len__(self):
        return len(self.inputs)


@dataclass
class DenseModel:
    """Feed-forward detector with ReLU hidden layers and compression metadata.

    ``weights[i]`` is (out, in) float32; ``e_ref`` is the reconstruction-error
    reference used by the AE score mapping; ``act_scales`` holds per-layer
    activation grid steps once the model has been 8-bit quantized.
    """

    layer_dims: list
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    head: str = HEAD_AE
    e_ref: float | None = None
    p_l: float = 0.0
    q_l: int = 32
    act_scales: list | None = None

    def __post_init__(self):
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ModelError("layer_dims needs at least input and output sizes")
        if self.head == HEAD_AE and self.layer_dims[-1] != self.layer_dims[0]:
            raise ModelError("reconstruction head needs output dim == input dim")
        if self.head == HEAD_MLP and self.layer_dims[-1] != 1:
            raise ModelError("classifier head needs a single output unit")
        if self.head not in (HEAD_AE, HEAD_MLP):
            raise ModelError(f"unknown head {self.head!r}")
        if self.weights:
            expect = list(zip(self.layer_dims[1:], self.layer_dims[:-1]))
            got = [w.shape for w in self.weights]
            if got != expect:
                raise ModelError(f"weight shapes {got} do not chain over {self.layer_dims}")

    @classmethod
    def fresh(cls, layer_dims, head: str, seed: int) -> "DenseModel":
        """He-scaled random initialisation, deterministic per seed."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)).astype(np.float32))
            biases.append(np.zeros(fan_out, dtype=np.float32))
        return cls(list(layer_dims), weights, biases, head)

    def copy(self) -> "DenseModel":
        return copy.deepcopy(self)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def weight_count(self) -> int:
        return int(sum(a * b for a, b in zip(self.layer_dims[1:], self.layer_dims[:-1])))

    def parameter_count(self) -> int:
        """Weights plus biases."""
        return self.weight_count() + int(sum(self.layer_dims[1:]))

    def mac_count(self) -> int:
        """Multiply-accumulates per forward pass."""
        return self.weight_count()

    def activation_count(self) -> int:
        return int(sum(self.layer_dims[1:]))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _quantize_activation(h, scale):
    if scale <= 0.0:
        return h
    return np.clip(np.round(h / scale), -127, 127) * scale


def forward_batch(model: DenseModel, x: np.ndarray) -> np.ndarray:
    """Vectorised forward pass over rows of ``x``."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ModelError(f"expected inputs of width {model.input_dim}, got {x.shape}")
    if not model.weights:
        raise ModelError("model has no weights")
    scales = model.act_scales
    h = x.astype(np.float32, copy=False)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        if i < last:
            h = np.maximum(z, 0.0)
        elif model.head == HEAD_MLP:
            h = _sigmoid(z)
        else:
            h = z
        if scales is not None and (i < last or model.head == HEAD_AE):
            h = _quantize_activation(h, scales[i])
    return h


def forward(model: DenseModel, x: np.ndarray) -> np.ndarray:
    """Single-sample forward pass."""
    return forward_batch(model, np.asarray(x).reshape(1, -1))[0]


def fault_score_batch(model: DenseModel, x: np.ndarray) -> np.ndarray:
    """Fault score in (0, 1) per row; for the AE, p = e / (e + e_ref)."""
    out = forward_batch(model, x)
    if model.head == HEAD_MLP:
        return out[:, 0].astype(np.float64)
    if model.e_ref is None or model.e_ref <= 0.0:
        raise ModelError("reconstruction head is not calibrated (e_ref unset)")
    x = np.asarray(x, dtype=np.float64)
    err = np.mean((x - out.astype(np.float64)) ** 2, axis=1)
    return err / (err + model.e_ref)


def fault_score(model: DenseModel, x: np.ndarray) -> float:
    return float(fault_score_batch(model, np.asarray(x).reshape(1, -1))[0])


def classify_batch(model: DenseModel, x: np.ndarray, tau_th: float) -> np.ndarray:
    return (fault_score_batch(model, x) > tau_th).astype(np.uint8)


def classify(model: DenseModel, x: np.ndarray, tau_th: float) -> int:
    return int(fault_score(model, x) > tau_th)


def ae_loss(x, x_hat, label: int,
            lambda_fault: float = DEFAULT_LAMBDA_FAULT,
            lambda_normal: float = DEFAULT_LAMBDA_NORMAL) -> float:
    """Label-weighted mean squared reconstruction error for one sample.

    Faulty samples get weight ``lambda_fault`` (negative by default, which
    pushes the weights away from reconstructing fault patterns).
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ModelError("sample and reconstruction must have equal shape")
    weight = lambda_fault if label == 1 else lambda_normal
    return float(weight * np.mean((x - x_hat) ** 2))


def _forward_trace(weights, biases, x, head):
    """Float64 forward pass that keeps layer activations for backprop."""
    acts = [x]
    pre = []
    last = len(weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif head == HEAD_MLP:
            h = _sigmoid(z)
        else:
            h = z
        acts.append(h)
    return acts, pre


def _batch_loss_and_delta(out, x, labels, head,
                          lambda_fault=DEFAULT_LAMBDA_FAULT,
                          lambda_normal=DEFAULT_LAMBDA_NORMAL):
    """Mean loss over the batch and dL/d(pre-activation) at the output."""
    n_batch = len(x)
    if head == HEAD_AE:
        n_feat = x.shape[1]
        w = np.where(labels == 1, lambda_fault, lambda_normal)
        diff = out - x
        loss = float(np.mean(w * np.mean(diff ** 2, axis=1)))
        delta = (w[:, None] * 2.0 * diff) / (n_feat * n_batch)
        return loss, delta
    p = np.clip(out[:, 0], _SIGMOID_EPS, 1.0 - _SIGMOID_EPS)
    y = labels.astype(np.float64)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    # d(BCE)/dz for a sigmoid output collapses to (p - y).
    delta = ((p - y) / n_batch)[:, None]
    return loss, delta


def batch_loss(model: DenseModel, batch: TrainBatch,
               lambda_fault: float = DEFAULT_LAMBDA_FAULT,
               lambda_normal: float = DEFAULT_LAMBDA_NORMAL) -> float:
    """Mean head loss of the model on a batch (float64 path)."""
    w64 = [w.astype(np.float64) for w in model.weights]
    b64 = [b.astype(np.float64) for b in model.biases]
    x = np.asarray(batch.inputs, dtype=np.float64)
    acts, _ = _forward_trace(w64, b64, x, model.head)
    loss, _ = _batch_loss_and_delta(acts[-1], x, batch.labels, model.head,
                                    lambda_fault, lambda_normal)
    return loss


def gradient(model: DenseModel, batch: TrainBatch,
             lambda_fault: float = DEFAULT_LAMBDA_FAULT,
             lambda_normal: float = DEFAULT_LAMBDA_NORMAL):
    """Exact mean-loss gradients (float64) for every weight and bias tensor."""
    if len(batch) == 0:
        raise ModelError("empty batch")
    w64 = [w.astype(np.float64) for w in model.weights]
    b64 = [b.astype(np.float64) for b in model.biases]
    x = np.asarray(batch.inputs, dtype=np.float64)
    labels = np.asarray(batch.labels)
    loss, gw, gb = _gradient_core(w64, b64, x, labels, model.head,
                                  lambda_fault, lambda_normal)
    return loss, gw, gb


def _gradient_core(w64, b64, x, labels, head, lambda_fault, lambda_normal):
    acts, pre = _forward_trace(w64, b64, x, head)
    loss, delta = _batch_loss_and_delta(acts[-1], x, labels, head,
                                        lambda_fault, lambda_normal)
    grads_w = [None] * len(w64)
    grads_b = [None] * len(w64)
    for i in range(len(w64) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w64[i]) * (pre[i - 1] > 0.0)
    return loss, grads_w, grads_b


def train(model: DenseModel, batch: TrainBatch, epochs: int, lr: float,
          seed: int = 0,
          lambda_fault: float = DEFAULT_LAMBDA_FAULT,
          lambda_normal: float = DEFAULT_LAMBDA_NORMAL) -> DenseModel:
    """Full-batch gradient descent; returns a new model.

    The seed only matters for a fresh (weightless) model, where it drives
    the initialisation.  After training, a reconstruction head has its
    ``e_ref`` recalibrated to the 95th percentile of errors over the
    normal-labelled part of the batch.
    """
    if epochs < 1:
        raise ModelError("epochs must be >= 1")
    if len(batch) == 0:
        raise ModelError("empty batch")
    if model.weights:
        model = model.copy()
    else:
        model = DenseModel.fresh(model.layer_dims, model.head, seed)
    if batch.inputs.shape[1] != model.input_dim:
        raise ModelError("batch width does not match model input dim")

    w64 = [w.astype(np.float64) for w in model.weights]
    b64 = [b.astype(np.float64) for b in model.biases]
    x = np.asarray(batch.inputs, dtype=np.float64)
    labels = np.asarray(batch.labels)
    for _ in range(epochs):
        loss, gw, gb = _gradient_core(w64, b64, x, labels, model.head,
                                      lambda_fault, lambda_normal)
        if not np.isfinite(loss):
            raise ModelError(f"loss diverged (non-finite at lr={lr})")
        for i in range(len(w64)):
            w64[i] -= lr * gw[i]
            b64[i] -= lr * gb[i]

    model.weights = [w.astype(np.float32) for w in w64]
    model.biases = [b.astype(np.float32) for b in b64]
    model.act_scales = None  # training always yields a dense float model
    model.q_l = 32
    if model.head == HEAD_AE:
        _recalibrate(model, batch)
    return model


def _recalibrate(model: DenseModel, batch: TrainBatch):
    normal = np.asarray(batch.labels) == 0
    if not normal.any():
        return  # no normal data: keep the previous reference
    x = np.asarray(batch.inputs, dtype=np.float64)[normal]
    out = forward_batch(model, x).astype(np.float64)
    errors = np.mean((x - out) ** 2, axis=1)
    model.e_ref = max(float(np.percentile(errors, E_REF_PERCENTILE)), E_REF_FLOOR)
