"""Siamese LSTM metric model.

Both branches share one :class:`LstmParams`. A sequence is embedded as the final
hidden state of a single-layer LSTM; two embeddings are compared with
``exp(-||v1 - v2||_1)`` and trained with binary cross entropy. Gradients are
computed analytically by backpropagation through time.

Gate blocks are stacked in the order input, forget, output, candidate.
"""

import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from graml.dataset import EncodedSequence, EncodingMode, PairSample, encode_trace, input_dim
from graml.env import GridEnv
from graml.errors import ContractViolation, MetricTrainingError
from graml.log import get_logger
from graml.rl import Trace

logger = get_logger(__name__)

Embedding = NDArray[np.float64]

BCE_EPSILON = 1e-12
GRAD_CHECK_FLOOR = 1e-4
_GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Stacked gate weights: ``W`` is (4k, input_dim), ``U`` is (4k, k), ``b`` is (4k,)."""

    W: NDArray[np.float64]
    U: NDArray[np.float64]
    b: NDArray[np.float64]

    def __post_init__(self) -> None:
        k4 = self.b.shape[0]
        if k4 % 4 or self.W.shape[0] != k4 or self.U.shape != (k4, k4 // 4):
            raise ContractViolation(
                "inconsistent LSTM parameter shapes",
                W=self.W.shape,
                U=self.U.shape,
                b=self.b.shape,
            )

    @property
    def hidden_dim(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return int(self.W.shape[1])

    def gate(
        self, name: str
    ) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        """Views ``(W_name, U_name, b_name)`` of one gate block."""
        k = self.hidden_dim
        block = slice(_GATES.index(name) * k, (_GATES.index(name) + 1) * k)
        return self.W[block], self.U[block], self.b[block]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(
            W=np.zeros((4 * hidden_dim, input_dim)),
            U=np.zeros((4 * hidden_dim, hidden_dim)),
            b=np.zeros(4 * hidden_dim),
        )

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        forget_bias: float = 1.0,
    ) -> "LstmParams":
        """Uniform(-1/sqrt(k), 1/sqrt(k)) weights, zero biases except the forget gate."""
        if input_dim < 1 or hidden_dim < 1:
            raise ContractViolation(
                "dimensions must be positive", input_dim=input_dim, k=hidden_dim
            )
        bound = 1.0 / math.sqrt(hidden_dim)
        params = cls(
            W=rng.uniform(-bound, bound, size=(4 * hidden_dim, input_dim)),
            U=rng.uniform(-bound, bound, size=(4 * hidden_dim, hidden_dim)),
            b=np.zeros(4 * hidden_dim),
        )
        params.b[hidden_dim : 2 * hidden_dim] = forget_bias
        return params

    def arrays(self) -> dict[str, NDArray[np.float64]]:
        return {"W": self.W, "U": self.U, "b": self.b}

    def copy(self) -> "LstmParams":
        return LstmParams(W=self.W.copy(), U=self.U.copy(), b=self.b.copy())

    def zeros_like(self) -> "LstmParams":
        return LstmParams(W=np.zeros_like(self.W), U=np.zeros_like(self.U), b=np.zeros_like(self.b))

    def add_(self, other: "LstmParams") -> "LstmParams":
        self.W += other.W
        self.U += other.U
        self.b += other.b
        return self

    def scale_(self, factor: float) -> "LstmParams":
        self.W *= factor
        self.U *= factor
        self.b *= factor
        return self

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(a * a)) for a in self.arrays().values()))


@dataclass
class _StepCache:
    x: NDArray[np.float64]
    h_prev: NDArray[np.float64]
    c_prev: NDArray[np.float64]
    i: NDArray[np.float64]
    f: NDArray[np.float64]
    o: NDArray[np.float64]
    g: NDArray[np.float64]
    tanh_c: NDArray[np.float64]


def _forward_batch(
    params: LstmParams, x: NDArray[np.float64]
) -> tuple[NDArray[np.float64], list[_StepCache]]:
    """Run equal-length sequences ``x`` of shape (B, T, d); returns (h_T, caches)."""
    batch, length, _ = x.shape
    k = params.hidden_dim
    h = np.zeros((batch, k))
    c = np.zeros((batch, k))
    caches = []
    for t in range(length):
        x_t = x[:, t]
        z = x_t @ params.W.T + h @ params.U.T + params.b
        i = expit(z[:, :k])
        f = expit(z[:, k : 2 * k])
        o = expit(z[:, 2 * k : 3 * k])
        g = np.tanh(z[:, 3 * k :])
        c_next = f * c + i * g
        tanh_c = np.tanh(c_next)
        caches.append(_StepCache(x_t, h, c, i, f, o, g, tanh_c))
        h = o * tanh_c
        c = c_next
    return h, caches


def _backward_batch(
    params: LstmParams, caches: list[_StepCache], dh: NDArray[np.float64]
) -> LstmParams:
    """Backpropagate ``dL/dh_T`` (B, k) through time into parameter gradients."""
    grads = params.zeros_like()
    dc = np.zeros_like(dh)
    for step in reversed(caches):
        do = dh * step.tanh_c
        dc = dc + dh * step.o * (1.0 - step.tanh_c**2)
        di = dc * step.g
        dg = dc * step.i
        df = dc * step.c_prev
        dz = np.concatenate(
            [
                di * step.i * (1.0 - step.i),
                df * step.f * (1.0 - step.f),
                do * step.o * (1.0 - step.o),
                dg * (1.0 - step.g**2),
            ],
            axis=1,
        )
        grads.W += dz.T @ step.x
        grads.U += dz.T @ step.h_prev
        grads.b += dz.sum(axis=0)
        dh = dz @ params.U
        dc = dc * step.f
    return grads


def _check_sequence(params: LstmParams, seq: EncodedSequence) -> None:
    if len(seq) == 0:
        raise ContractViolation("cannot embed an empty sequence")
    if seq.input_dim != params.input_dim:
        raise ContractViolation(
            "sequence dimension does not match the model",
            sequence_dim=seq.input_dim,
            input_dim=params.input_dim,
        )


def lstm_forward(params: LstmParams, seq: EncodedSequence) -> Embedding:
    """Final hidden state of the LSTM run from zero state over ``seq``."""
    _check_sequence(params, seq)
    h, _ = _forward_batch(params, seq.steps[None, :, :])
    return h[0]


def similarity(v1: Embedding, v2: Embedding) -> float:
    """exp(-sum_i |v1[i] - v2[i]|)."""
    v1, v2 = np.asarray(v1, dtype=np.float64), np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ContractViolation("embedding dimensions differ", left=v1.shape, right=v2.shape)
    return math.exp(-float(np.abs(v1 - v2).sum()))


def bce_loss(y_hat: float, y: int) -> float:
    """Binary cross entropy with ``y_hat`` clamped to [eps, 1 - eps]."""
    p = min(max(float(y_hat), BCE_EPSILON), 1.0 - BCE_EPSILON)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def _pair_losses(
    v1: NDArray[np.float64], v2: NDArray[np.float64], labels: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Per-pair losses, predictions, and ``dL/dv1`` for batched embeddings (B, k)."""
    diff = v1 - v2
    y_hat = np.exp(-np.abs(diff).sum(axis=1))
    clipped = np.clip(y_hat, BCE_EPSILON, 1.0 - BCE_EPSILON)
    losses = -(labels * np.log(clipped) + (1.0 - labels) * np.log(1.0 - clipped))
    # dL/dd for d = ||v1 - v2||_1; zero where the clamp is active
    inside = (y_hat > BCE_EPSILON) & (y_hat < 1.0 - BCE_EPSILON)
    dl_dd = np.where(inside, labels - (1.0 - labels) * clipped / (1.0 - clipped), 0.0)
    dv1 = dl_dd[:, None] * np.sign(diff)
    return losses, y_hat, dv1


@dataclass(frozen=True)
class EncodedPair:
    a: EncodedSequence
    b: EncodedSequence
    label: int


def encode_pair(sample: PairSample, env: GridEnv, mode: EncodingMode) -> EncodedPair:
    return EncodedPair(
        a=encode_trace(sample.trace_a, env, mode),
        b=encode_trace(sample.trace_b, env, mode),
        label=sample.label,
    )


def pair_loss(params: LstmParams, pair: EncodedPair) -> float:
    v1 = lstm_forward(params, pair.a)
    v2 = lstm_forward(params, pair.b)
    return bce_loss(similarity(v1, v2), pair.label)


def branch_backward(params: LstmParams, seq: EncodedSequence, dh: Embedding) -> LstmParams:
    """Gradients of one branch given ``dL/dh_T`` for that branch."""
    _check_sequence(params, seq)
    _, caches = _forward_batch(params, seq.steps[None, :, :])
    return _backward_batch(params, caches, np.asarray(dh, dtype=np.float64)[None, :])


def backward(params: LstmParams, pair: EncodedPair) -> tuple[float, LstmParams]:
    """Loss and exact gradients for one pair; shared weights sum both branches."""
    _check_sequence(params, pair.a)
    _check_sequence(params, pair.b)
    h_a, cache_a = _forward_batch(params, pair.a.steps[None, :, :])
    h_b, cache_b = _forward_batch(params, pair.b.steps[None, :, :])
    losses, _, dv1 = _pair_losses(h_a, h_b, np.array([float(pair.label)]))
    grads = _backward_batch(params, cache_a, dv1)
    grads.add_(_backward_batch(params, cache_b, -dv1))
    return float(losses[0]), grads


def grad_check(params: LstmParams, pair: EncodedPair, h: float = 1e-5) -> float:
    """Max relative error of :func:`backward` against central differences.

    Relative error is ``|a - n| / max(|a| + |n|, GRAD_CHECK_FLOOR)``.
    """
    if h <= 0:
        raise ContractViolation("finite-difference step must be positive", h=h)
    _, analytic = backward(params, pair)
    probe = params.copy()
    analytic_arrays = analytic.arrays()
    worst = 0.0
    for name, array in probe.arrays().items():
        grad = analytic_arrays[name]
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            plus = pair_loss(probe, pair)
            array[index] = original - h
            minus = pair_loss(probe, pair)
            array[index] = original
            numeric = (plus - minus) / (2.0 * h)
            exact = grad[index]
            error = abs(exact - numeric) / max(abs(exact) + abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, error)
    return worst


def _group_by_length(seqs: Sequence[EncodedSequence]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for position, seq in enumerate(seqs):
        groups[len(seq)].append(position)
    return groups


def _embed_batch(
    params: LstmParams, seqs: Sequence[EncodedSequence]
) -> tuple[NDArray[np.float64], dict[int, tuple[list[int], list[_StepCache]]]]:
    embeddings = np.zeros((len(seqs), params.hidden_dim))
    caches = {}
    for length, positions in _group_by_length(seqs).items():
        x = np.stack([seqs[p].steps for p in positions])
        h, cache = _forward_batch(params, x)
        embeddings[positions] = h
        caches[length] = (positions, cache)
    return embeddings, caches


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 2e-3
    grad_clip: float = 5.0
    hidden_dim: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ContractViolation(
                "learning_rate must be positive", learning_rate=self.learning_rate
            )
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ContractViolation("epochs, batch_size and hidden_dim must be sensible")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ContractViolation("validation_fraction must lie in [0, 1)")


@dataclass
class MetricModel:
    """A trained Siamese embedder; one parameter set serves both branches."""

    params: LstmParams
    encoding: EncodingMode
    env_id: str
    loss_history: list[float] = field(default_factory=list)
    held_out_accuracy: float | None = None

    @property
    def hidden_dim(self) -> int:
        return self.params.hidden_dim

    def embed(self, seq: EncodedSequence) -> Embedding:
        return lstm_forward(self.params, seq)

    def embed_trace(self, trace: Trace, env: GridEnv) -> Embedding:
        return self.embed(encode_trace(trace, env, self.encoding))

    def embed_many(self, seqs: Sequence[EncodedSequence]) -> list[Embedding]:
        """Embed several sequences, batching equal lengths together."""
        if not seqs:
            return []
        for seq in seqs:
            _check_sequence(self.params, seq)
        embeddings, _ = _embed_batch(self.params, seqs)
        return list(embeddings)

    def predict(self, pair: EncodedPair) -> float:
        return similarity(self.embed(pair.a), self.embed(pair.b))


def pair_accuracy(params: LstmParams, pairs: Sequence[EncodedPair]) -> float:
    """Fraction of pairs classified correctly at similarity >= 0.5."""
    if not pairs:
        return float("nan")
    embeddings, _ = _embed_batch(params, [p.a for p in pairs] + [p.b for p in pairs])
    n = len(pairs)
    labels = np.array([float(p.label) for p in pairs])
    _, y_hat, _ = _pair_losses(embeddings[:n], embeddings[n:], labels)
    return float(np.mean((y_hat >= 0.5) == (labels == 1.0)))


def _minibatch_gradients(
    params: LstmParams, pairs: Sequence[EncodedPair]
) -> tuple[float, LstmParams]:
    """Mean loss and its gradient over a minibatch."""
    n = len(pairs)
    seqs = [p.a for p in pairs] + [p.b for p in pairs]
    embeddings, caches = _embed_batch(params, seqs)
    labels = np.array([float(p.label) for p in pairs])
    losses, _, dv1 = _pair_losses(embeddings[:n], embeddings[n:], labels)
    d_embeddings = np.concatenate([dv1, -dv1]) / n
    grads = params.zeros_like()
    for positions, cache in caches.values():
        grads.add_(_backward_batch(params, cache, d_embeddings[positions]))
    return float(losses.mean()), grads


class _Adam:
    def __init__(self, params: LstmParams, cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: LstmParams, grads: LstmParams) -> None:
        cfg = self.cfg
        self.t += 1
        correction1 = 1.0 - cfg.beta1**self.t
        correction2 = 1.0 - cfg.beta2**self.t
        moments = zip(
            params.arrays().values(),
            grads.arrays().values(),
            self.m.arrays().values(),
            self.v.arrays().values(),
            strict=True,
        )
        for param, grad, m, v in moments:
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * grad * grad
            update = (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_epsilon)
            param -= cfg.learning_rate * update


def train(
    dataset: Sequence[PairSample],
    cfg: TrainConfig,
    env: GridEnv,
    encoding: EncodingMode = EncodingMode.ONE_HOT,
    initial: LstmParams | None = None,
) -> MetricModel:
    """Minibatch Adam with gradient-norm clipping over labeled trace pairs."""
    if not dataset:
        raise ContractViolation("training needs at least one pair")
    encoding = EncodingMode(encoding)
    rng = np.random.default_rng(cfg.seed)
    dim = input_dim(env, encoding)
    params = (
        initial.copy() if initial is not None else LstmParams.initialize(dim, cfg.hidden_dim, rng)
    )
    if params.input_dim != dim:
        raise ContractViolation(
            "initial parameters do not match the encoding", input_dim=params.input_dim
        )

    encoded = [encode_pair(sample, env, encoding) for sample in dataset]
    n_val = int(len(encoded) * cfg.validation_fraction) if len(encoded) >= 10 else 0
    order = rng.permutation(len(encoded))
    validation = [encoded[i] for i in order[:n_val]]
    training = [encoded[i] for i in order[n_val:]]

    optimizer = _Adam(params, cfg)
    history: list[float] = []
    last_finite = float("nan")
    for epoch in range(cfg.epochs):
        epoch_losses = []
        shuffled = rng.permutation(len(training))
        for batch_number, start in enumerate(range(0, len(training), cfg.batch_size)):
            batch = [training[i] for i in shuffled[start : start + cfg.batch_size]]
            loss, grads = _minibatch_gradients(params, batch)
            norm = grads.global_norm()
            if not math.isfinite(loss) or not math.isfinite(norm):
                raise MetricTrainingError(
                    "metric training diverged",
                    epoch=epoch,
                    batch=batch_number,
                    grad_norm=norm,
                    loss=loss,
                    last_finite_loss=last_finite,
                )
            if norm > cfg.grad_clip:
                grads.scale_(cfg.grad_clip / norm)
            optimizer.step(params, grads)
            epoch_losses.append(loss)
            last_finite = loss
        history.append(float(np.mean(epoch_losses)))
        logger.debug("metric_epoch", epoch=epoch, loss=history[-1])

    accuracy = pair_accuracy(params, validation) if validation else None
    logger.info(
        "metric_model_trained",
        pairs=len(encoded),
        epochs=cfg.epochs,
        hidden_dim=params.hidden_dim,
        final_loss=history[-1] if history else None,
        held_out_accuracy=accuracy,
    )
    return MetricModel(
        params=params,
        encoding=encoding,
        env_id=env.env_id,
        loss_history=history,
        held_out_accuracy=accuracy,
    )
