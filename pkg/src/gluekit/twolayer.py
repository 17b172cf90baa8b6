"""Two-layer network testbed: exact full-batch training rules and the
conventional feature-learning metrics computed alongside capacity/geometry.

The network is f(x) = (alpha / sqrt(N)) a . sigma(W x) per readout, trained by
full-batch gradient steps on a 1/alpha^2-scaled loss; the readout learning
rate carries an extra factor c (c = 0 freezes the readouts).  The recorded
effective learning rate is eta_bar = eta / alpha, and the raw eta is scaled
by sqrt(N) internally, so eta_bar alone sets the hidden-weight dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .activations import Activation, get_activation
from .glue import GlueReport, estimate_geometry
from .model import ManifoldEnsemble, RngStream

__all__ = [
    "TwoLayerNet",
    "TrainConfig",
    "LabeledData",
    "CheckpointMetrics",
    "MetricTrace",
    "AlignmentMetrics",
    "init_net",
    "forward",
    "hidden_features",
    "grad_step",
    "train",
    "activation_stability",
    "weight_change",
    "ntk_gram",
    "cka",
    "alignment_metrics",
    "make_labeled_data",
]


@dataclass(frozen=True)
class TwoLayerNet:
    """Hidden weights W (N x d), K readout rows (K x N), output scale alpha."""

    W: np.ndarray
    readouts: np.ndarray
    scale_alpha: float
    activation: Activation
    W0: np.ndarray
    readouts0: np.ndarray

    @property
    def n_hidden(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def n_readouts(self) -> int:
        return self.readouts.shape[0]


def init_net(d: int, N: int, K: int, alpha: float, activation, rng: RngStream) -> TwoLayerNet:
    """W and readout entries N(0, 1/N)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    act = get_activation(activation)
    g = rng.generator()
    W = g.standard_normal((N, d)) / np.sqrt(N)
    A = g.standard_normal((K, N)) / np.sqrt(N)
    return TwoLayerNet(W, A, float(alpha), act, W.copy(), A.copy())


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    readout_lr_factor: float = 0.0
    loss: str = "mse"                  # 'mse' (labels +/-1) or 'bce' (labels {0,1})
    epochs: int = 10_000
    checkpoint_epochs: tuple | None = None   # default: 50 log-spaced
    seed: int = 0
    glue_draws: int = 100
    glue_draws_final: int = 200
    glue_enabled: bool = True

    def __post_init__(self):
        if self.loss not in ("mse", "bce"):
            raise ValueError("loss must be 'mse' or 'bce'")
        if self.eta < 0 or self.readout_lr_factor < 0:
            raise ValueError("learning rates must be nonnegative")

    def effective_lr(self, alpha: float) -> float:
        return self.eta / alpha


@dataclass(frozen=True)
class LabeledData:
    """Flat batch plus the manifold structure it came from."""

    X: np.ndarray              # (B, d)
    y: np.ndarray              # (B,) +/-1
    ensemble: ManifoldEnsemble
    manifold_labels: np.ndarray  # (P,) +/-1 per manifold


def make_labeled_data(ensemble: ManifoldEnsemble, manifold_labels) -> LabeledData:
    labels = np.asarray(manifold_labels, dtype=np.float64).ravel()
    if labels.shape[0] != ensemble.n_manifolds:
        raise ValueError("one label per manifold required")
    if not np.all(np.abs(labels) == 1.0):
        raise ValueError("manifold labels must be +/-1")
    X, owner = ensemble.stacked_points()
    return LabeledData(X, labels[owner], ensemble, labels)


def hidden_features(net: TwoLayerNet, X: np.ndarray) -> np.ndarray:
    return net.activation(X @ net.W.T)


def forward(net: TwoLayerNet, X: np.ndarray) -> np.ndarray:
    """Per-readout outputs, shape (B, K)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"batch shape {X.shape} incompatible with input dim {net.input_dim}")
    phi = hidden_features(net, X)
    return (net.scale_alpha / np.sqrt(net.n_hidden)) * phi @ net.readouts.T


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _gradients(W, A, alpha, act, X, y, loss):
    """Exact full-batch gradients; returns (GW, gA, outputs).

    GW is the ascent direction (the update is W + eta_int * GW); gA rows are
    the per-readout ascent directions without the 1/K average.
    """
    B = X.shape[0]
    N = W.shape[0]
    K = A.shape[0]
    scale = alpha / np.sqrt(N)
    pre = X @ W.T
    phi = act(pre)
    out = scale * phi @ A.T                       # (B, K)
    if loss == "mse":
        resid = y[:, None] - out
    else:
        resid = y[:, None] - _sigmoid(out)
    back = act.deriv(pre) * (resid @ A)           # (B, N)
    GW = (back.T @ X) / (alpha * B * K * np.sqrt(N))
    gA = (resid.T @ phi) / (alpha * B * np.sqrt(N))   # (K, N)
    return GW, gA, out


def scaled_loss(net: TwoLayerNet, X, y, loss: str = "mse") -> float:
    """(1/alpha^2) * mean over samples and readouts of the pointwise loss."""
    out = forward(net, X)
    if loss == "mse":
        vals = 0.5 * (out - y[:, None]) ** 2
    else:
        # y in {0,1}: y log(1 + e^-z) + (1-y) log(1 + e^z), computed stably
        z = out
        vals = y[:, None] * np.logaddexp(0.0, -z) + (1.0 - y[:, None]) * np.logaddexp(0.0, z)
    return float(vals.mean()) / net.scale_alpha**2


def grad_step(net: TwoLayerNet, X, y, config: TrainConfig) -> TwoLayerNet:
    """One full-batch update; eta is scaled by sqrt(N) internally."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    GW, gA, _ = _gradients(net.W, net.readouts, net.scale_alpha, net.activation, X, y, config.loss)
    if not (np.all(np.isfinite(GW)) and np.all(np.isfinite(gA))):
        raise FloatingPointError("non-finite gradient")
    eta_int = config.eta * np.sqrt(net.n_hidden)
    W = net.W + eta_int * GW
    A = net.readouts + config.readout_lr_factor * eta_int * gA
    return replace(net, W=W, readouts=A)


def activation_stability(net: TwoLayerNet, X) -> float:
    """Fraction of strictly positive hidden features."""
    return float(np.mean(hidden_features(net, X) > 0))


def weight_change(W_t: np.ndarray, W_0: np.ndarray) -> float:
    denom = np.linalg.norm(W_0)
    if denom == 0:
        raise ValueError("reference weights have zero norm")
    return float(np.linalg.norm(W_t - W_0) / denom)


def ntk_gram(net: TwoLayerNet, X, c: float | None = None) -> np.ndarray:
    """Tangent-kernel Gram over the batch, readout term scaled by c.

    Per readout, Theta_W(x, x') = (alpha^2/N) <a . sigma'(Wx), a . sigma'(Wx')> <x, x'>
    and Theta_a = (alpha^2/N) <phi(x), phi(x')>; readouts are averaged.
    """
    if c is None:
        c = 0.0
    X = np.asarray(X, dtype=np.float64)
    pre = X @ net.W.T
    phi = net.activation(pre)
    S = net.activation.deriv(pre)
    w = np.sum(net.readouts**2, axis=0)           # (N,) sum_j a_jk^2
    scale = net.scale_alpha**2 / net.n_hidden
    K = net.n_readouts
    theta_w = ((S * w[None, :]) @ S.T) * (X @ X.T) / K
    theta = scale * theta_w
    if c != 0.0:
        theta = theta + c * scale * (phi @ phi.T)
    return theta


def cka(K1, K2) -> float:
    """Centered kernel alignment: HSIC(K1,K2)/sqrt(HSIC(K1,K1) HSIC(K2,K2))."""
    K1 = np.asarray(K1, dtype=np.float64)
    K2 = np.asarray(K2, dtype=np.float64)
    n = K1.shape[0]
    if K1.shape != (n, n) or K2.shape != (n, n):
        raise ValueError("cka needs two square matrices of equal size")

    def center(M):
        M = M - M.mean(axis=0, keepdims=True)
        return M - M.mean(axis=1, keepdims=True)

    C1, C2 = center(K1), center(K2)
    h12 = np.sum(C1 * C2)
    h11 = np.sum(C1 * C1)
    h22 = np.sum(C2 * C2)
    if h11 <= 0 or h22 <= 0:
        raise ValueError("zero-norm centered kernel; CKA undefined")
    return float(h12 / np.sqrt(h11 * h22))


@dataclass(frozen=True)
class AlignmentMetrics:
    ntk_change: float
    kernel_alignment: float
    rep_similarity: float
    cka_rep_label: float
    cka_ntk_label: float


def alignment_metrics(theta_t, theta_0, gram_t, gram_0, y) -> AlignmentMetrics:
    """Kernel/representation drift and label alignments for one checkpoint."""
    y = np.asarray(y, dtype=np.float64).ravel()
    yy = np.outer(y, y)

    def fro_cos(A, B):
        na, nb = np.linalg.norm(A), np.linalg.norm(B)
        if na == 0 or nb == 0:
            raise ValueError("zero-norm reference matrix")
        return float(np.sum(A * B) / (na * nb))

    n0 = np.linalg.norm(theta_0)
    if n0 == 0:
        raise ValueError("zero-norm reference matrix")
    return AlignmentMetrics(
        ntk_change=float(np.linalg.norm(theta_t - theta_0) / n0),
        kernel_alignment=fro_cos(theta_t, theta_0),
        rep_similarity=fro_cos(gram_t, gram_0),
        cka_rep_label=cka(gram_t, yy),
        cka_ntk_label=cka(theta_t, yy),
    )


@dataclass(frozen=True)
class CheckpointMetrics:
    epoch: int
    train_accuracy: float
    test_accuracy: float
    loss: float
    weight_change: float
    activation_stability: float
    rep_similarity: float
    ntk_change: float
    kernel_alignment: float
    cka_rep_label: float
    cka_ntk_label: float
    glue: GlueReport | None


@dataclass
class MetricTrace:
    config: TrainConfig
    effective_lr: float
    checkpoints: list = field(default_factory=list)
    diverged: bool = False

    def epochs(self):
        return [c.epoch for c in self.checkpoints]

    def series(self, name: str):
        return [getattr(c, name) for c in self.checkpoints]

    def final(self) -> CheckpointMetrics:
        return self.checkpoints[-1]


def default_checkpoints(epochs: int, count: int = 50) -> tuple:
    """0 plus ~count epochs uniform in log scale up to `epochs`."""
    if epochs < 1:
        return (0,)
    pts = np.unique(np.round(np.geomspace(1, epochs, count - 1)).astype(int))
    return tuple([0] + pts.tolist())


def _accuracy(out: np.ndarray, y: np.ndarray, loss: str) -> float:
    if loss == "mse":
        preds = np.where(out >= 0, 1.0, -1.0)
        return float(np.mean(preds == y[:, None]))
    preds = (out >= 0).astype(np.float64)
    return float(np.mean(preds == y[:, None]))


def train(net: TwoLayerNet, train_data: LabeledData, test_data: LabeledData, config: TrainConfig) -> MetricTrace:
    """Full-batch gradient descent with checkpointed metrics on the test set.

    BCE mode maps the +/-1 manifold labels to {0,1} for the loss and
    gradients.  Divergence (non-finite loss) aborts with the partial trace.
    """
    act = net.activation
    alpha = net.scale_alpha
    K = net.n_readouts
    Xtr, Xte = train_data.X, test_data.X
    ytr_pm, yte_pm = train_data.y, test_data.y
    if config.loss == "bce":
        ytr = (ytr_pm + 1.0) / 2.0
        yte = (yte_pm + 1.0) / 2.0
    else:
        ytr, yte = ytr_pm, yte_pm

    checkpoints = config.checkpoint_epochs
    if checkpoints is None:
        checkpoints = default_checkpoints(config.epochs)
    checkpoints = sorted(set(int(e) for e in checkpoints))
    if any(e < 0 or e > config.epochs for e in checkpoints):
        raise ValueError("checkpoint epochs must lie in [0, epochs]")

    W = net.W.copy()
    A = net.readouts.copy()
    W0, A0 = net.W0, net.readouts0
    net0 = replace(net, W=W0.copy(), readouts=A0.copy())
    theta_0 = ntk_gram(net0, Xte, config.readout_lr_factor)
    gram_0 = hidden_features(net0, Xte) @ hidden_features(net0, Xte).T

    trace = MetricTrace(config=config, effective_lr=config.effective_lr(alpha))
    eta_int = config.eta * np.sqrt(net.n_hidden)
    ck_set = set(checkpoints)
    last_ck = max(checkpoints)

    def record(epoch):
        cur = replace(net, W=W.copy(), readouts=A.copy())
        out_tr = forward(cur, Xtr)
        out_te = forward(cur, Xte)
        loss_val = scaled_loss(cur, Xtr, ytr, config.loss)
        phi_te = hidden_features(cur, Xte)
        theta_t = ntk_gram(cur, Xte, config.readout_lr_factor)
        align = alignment_metrics(theta_t, theta_0, phi_te @ phi_te.T, gram_0, yte_pm)
        glue_report = None
        if config.glue_enabled:
            n_draws = config.glue_draws_final if epoch == last_ck else config.glue_draws
            feat_ens = test_data.ensemble.transform(lambda pts: act(pts @ W.T))
            glue_report = estimate_geometry(feat_ens, n_draws, RngStream(config.seed, 77_000 + epoch))
        trace.checkpoints.append(
            CheckpointMetrics(
                epoch=epoch,
                train_accuracy=_accuracy(out_tr, ytr, config.loss),
                test_accuracy=_accuracy(out_te, yte, config.loss),
                loss=loss_val,
                weight_change=weight_change(W, W0),
                activation_stability=activation_stability(cur, Xtr),
                rep_similarity=align.rep_similarity,
                ntk_change=align.ntk_change,
                kernel_alignment=align.kernel_alignment,
                cka_rep_label=align.cka_rep_label,
                cka_ntk_label=align.cka_ntk_label,
                glue=glue_report,
            )
        )
        return loss_val

    if 0 in ck_set:
        record(0)
    for epoch in range(1, config.epochs + 1):
        GW, gA, _ = _gradients(W, A, alpha, act, Xtr, ytr, config.loss)
        W += eta_int * GW
        if config.readout_lr_factor != 0.0:
            A += config.readout_lr_factor * eta_int * gA
        if epoch in ck_set:
            loss_val = record(epoch)
            if not np.isfinite(loss_val):
                trace.diverged = True
                break
        elif epoch % 500 == 0:
            # cheap divergence sentinel between checkpoints
            if not np.all(np.isfinite(W)):
                trace.diverged = True
                break
    return trace
