"""Preference predictor, hand-written backpropagation, Adam, and the three training losses.

The network maps one defendant's one-hot features to a softmax row over the
slots; a pool's predicted preference matrix stacks those rows. Decision
losses route through the matching layer's blackbox backward pass.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from fairsched.core import DataError, GroupPartition, InvalidInputError, NumericError
from fairsched.datagen import CATEGORIES, FEATURES, Dataset, Pool
from fairsched.matching import BlackboxConfig, matching_backward, solve_assignment, solve_perm
from fairsched.owa import MoreauConfig, gini_weights, moreau_gradient, owa_subgradient, owa_value

LOSS_KINDS = ("two_stage", "tu_dq", "owa_dq")
ENCODING = {name: list(CATEGORIES[name]) for name in FEATURES}
INPUT_DIM = sum(len(c) for c in CATEGORIES.values())


def encode_features(codes) -> np.ndarray:
    """One-hot encode an ``(n, 8)`` array of category codes into ``(n, 19)``."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] != len(FEATURES):
        raise InvalidInputError(f"expected (n, {len(FEATURES)}) feature codes, got {codes.shape}")
    out = np.zeros((codes.shape[0], INPUT_DIM))
    offset = 0
    for k, name in enumerate(FEATURES):
        out[np.arange(codes.shape[0]), offset + codes[:, k]] = 1.0
        offset += len(CATEGORIES[name])
    return out


@dataclass
class MlpModel:
    """ReLU network ``d -> h1 -> h1/2 -> n`` followed by a row softmax.

    ``params`` holds ``[W1, b1, W2, b2, W3, b3]`` with ``W`` of shape (fan_in, fan_out).
    """

    layer_dims: tuple[int, int, int, int]
    params: list[np.ndarray]

    def __post_init__(self):
        d, h1, h2, n = self.layer_dims
        if h1 % 2 or h2 != h1 // 2:
            raise InvalidInputError("second hidden layer must be half the first")
        shapes = [(d, h1), (h1,), (h1, h2), (h2,), (h2, n), (n,)]
        if [p.shape for p in self.params] != shapes:
            raise InvalidInputError(f"parameter shapes do not match layer_dims {self.layer_dims}")
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise NumericError("model parameters must be finite")

    @property
    def n_slots(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_dims, [p.copy() for p in self.params])


def init_model(input_dim: int, n_slots: int, hidden: int = 64, seed: int = 0) -> MlpModel:
    rng = np.random.default_rng([seed, 0])
    dims = (input_dim, hidden, hidden // 2, n_slots)
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    # zero output layer: every initial prediction is the uniform row
    params[-2][:] = 0.0
    return MlpModel(dims, params)


def _forward(model: MlpModel, x: np.ndarray):
    w1, b1, w2, b2, w3, b3 = model.params
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ w3 + b3
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    yhat = e / e.sum(axis=1, keepdims=True)
    return yhat, (x, z1, a1, z2, a2, yhat)


def _backward(model: MlpModel, cache, dyhat: np.ndarray) -> list[np.ndarray]:
    x, z1, a1, z2, a2, yhat = cache
    _, _, w2, _, w3, _ = model.params
    dlogits = yhat * (dyhat - np.sum(dyhat * yhat, axis=1, keepdims=True))
    dw3 = a2.T @ dlogits
    db3 = dlogits.sum(axis=0)
    dz2 = (dlogits @ w3.T) * (z2 > 0)
    dw2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return [dw1, db1, dw2, db2, dw3, db3]


def _inputs(model: MlpModel, features) -> np.ndarray:
    x = np.asarray(features)
    if x.ndim == 2 and x.shape[1] == len(FEATURES) and model.layer_dims[0] == INPUT_DIM:
        x = encode_features(x)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise InvalidInputError(f"features of shape {x.shape} do not fit input dim {model.layer_dims[0]}")
    return x


def predict_pool(model: MlpModel, features) -> np.ndarray:
    """Predicted preference matrix for one pool; rows are softmax-normalized.

    ``features`` is either raw ``(n, 8)`` category codes or an already
    encoded ``(n, d)`` matrix.
    """
    return _forward(model, _inputs(model, features))[0]


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "owa_dq"
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 300
    seed: int = 0
    lam: float = 10.0
    beta: float | None = None
    partition_attribute: str = "individual"
    hidden: int = 64
    patience: int = 30
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidInputError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.lam <= 0:
            raise InvalidInputError("learning rate, batch size and lambda must be positive")
        if self.beta is not None and self.beta <= 0:
            raise InvalidInputError("beta must be positive when set")
        if not 0 <= self.val_fraction < 1 or self.patience < 1 or self.hidden < 2:
            raise InvalidInputError("invalid validation / early-stopping settings")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_regret: list[float] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)


# Per-pool loss heads: each returns (loss, dL/dYhat).

def _head_two_stage(yhat, prefs, groups=None, cfg=None):
    r = yhat - prefs
    return float(np.sum(r * r)), 2.0 * r


def _head_tu(yhat, prefs, groups, cfg):
    sol = solve_assignment(yhat)
    n = prefs.shape[0]
    loss = -float(prefs[np.arange(n), sol.perm].sum())
    return loss, matching_backward(yhat, sol, -prefs, BlackboxConfig(cfg.lam))


def _owa_upstream(prefs, sol, partition: GroupPartition, weights, beta):
    """Loss value and dL/dPi for ``L = -OWA(group utilities)``."""
    n = prefs.shape[0]
    u = prefs[np.arange(n), sol.perm]
    gu = np.bincount(partition.group_of, weights=u, minlength=len(partition)) / partition.sizes
    if beta is None:
        g = owa_subgradient(weights, gu)
    else:
        g = moreau_gradient(weights, gu, MoreauConfig(beta))
    scale = (g / partition.sizes)[partition.group_of]
    return -owa_value(weights, gu), -scale[:, None] * prefs


def _head_owa(yhat, prefs, groups, cfg, weights=None):
    partition = GroupPartition.from_labels(groups)
    weights = weights if weights is not None else gini_weights(len(partition))
    sol = solve_assignment(yhat)
    loss, upstream = _owa_upstream(prefs, sol, partition, weights, cfg.beta)
    return loss, matching_backward(yhat, sol, upstream, BlackboxConfig(cfg.lam))


_HEADS = {"two_stage": _head_two_stage, "tu_dq": _head_tu, "owa_dq": _head_owa}


def _pool_loss(model, pool: Pool, head, cfg):
    yhat, cache = _forward(model, _inputs(model, pool.features))
    loss, dyhat = head(yhat, np.asarray(pool.prefs, dtype=float), pool.groups, cfg)
    return loss, _backward(model, cache, dyhat)


def loss_two_stage(model: MlpModel, pool: Pool):
    """Squared Frobenius residual of the predicted preference matrix, with its gradient."""
    return _pool_loss(model, pool, _head_two_stage, None)


def loss_tu_dq(model: MlpModel, pool: Pool, cfg: TrainConfig):
    """Negative true total utility of the matching-layer schedule, with its blackbox gradient."""
    return _pool_loss(model, pool, _head_tu, cfg)


def loss_owa_dq(model: MlpModel, pool: Pool, cfg: TrainConfig, weights=None):
    """Negative Gini-OWA of true group utilities under the matching-layer schedule.

    ``weights`` overrides the Gini weights (their length must match the
    number of groups in the pool).
    """
    head = lambda yh, y, g, c: _head_owa(yh, y, g, c, weights)  # noqa: E731
    return _pool_loss(model, pool, head, cfg)


@dataclass
class AdamState:
    t: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise InvalidInputError("gradient shapes do not match parameters")
    t = state.t + 1
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(t, ms, vs)


def matching_regret(model: MlpModel, pools: list[Pool], encoded=None) -> float:
    """Mean OWA shortfall of the matching-layer schedule on predictions vs. on truth.

    Cheap validation signal; can be negative since the matching layer is not
    OWA-optimal.
    """
    if not pools:
        return 0.0
    total = 0.0
    for k, pool in enumerate(pools):
        x = encoded[k] if encoded is not None else _inputs(model, pool.features)
        y = np.asarray(pool.prefs, dtype=float)
        partition = GroupPartition.from_labels(pool.groups)
        w = gini_weights(len(partition))
        rows = np.arange(y.shape[0])
        u_ref = y[rows, solve_perm(y)]
        u_hat = y[rows, solve_perm(_forward(model, x)[0])]
        gm = lambda u: np.bincount(partition.group_of, weights=u) / partition.sizes  # noqa: E731
        total += owa_value(w, gm(u_ref)) - owa_value(w, gm(u_hat))
    return total / len(pools)


def split_validation(n_pools: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.val_fraction == 0 or n_pools < 2:
        return np.arange(n_pools), np.arange(0)
    n_val = min(n_pools - 1, max(1, int(round(cfg.val_fraction * n_pools))))
    order = np.random.default_rng([cfg.seed, 2]).permutation(n_pools)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(dataset: Dataset, cfg: TrainConfig, val: Dataset | None = None,
          model: MlpModel | None = None) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch Adam on the chosen loss with early stopping on validation regret.

    Pools are reshuffled every epoch; per-pool gradients are averaged over the
    batch. The parameters with the lowest validation regret are returned.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if dataset.metadata.get("partition_attribute", cfg.partition_attribute) != cfg.partition_attribute:
        dataset = dataset.regroup(cfg.partition_attribute)
        if val is not None:
            val = val.regroup(cfg.partition_attribute)
    n = dataset.n
    if model is None:
        model = init_model(INPUT_DIM, n, cfg.hidden, cfg.seed)
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history

    if val is None:
        train_idx, val_idx = split_validation(len(dataset), cfg)
        train_pools = [dataset.pools[i] for i in train_idx]
        val_pools = [dataset.pools[i] for i in val_idx]
    else:
        train_pools, val_pools = list(dataset.pools), list(val.pools)
    x_train = [_inputs(model, p.features) for p in train_pools]
    x_val = [_inputs(model, p.features) for p in val_pools]
    prefs = [np.asarray(p.prefs, dtype=float) for p in train_pools]
    weights = [gini_weights(len(np.unique(p.groups))) for p in train_pools]
    head = _HEADS[cfg.loss_kind]

    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState.zeros_like(model.params)
    best_model, best_regret, since_best = model.copy(), np.inf, 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_pools))
        epoch_loss = 0.0
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            xb = np.concatenate([x_train[i] for i in batch])
            yhat, cache = _forward(model, xb)
            dyhat = np.empty_like(yhat)
            batch_loss = 0.0
            for k, i in enumerate(batch):
                rows = slice(k * n, (k + 1) * n)
                if cfg.loss_kind == "owa_dq":
                    loss, dy = _head_owa(yhat[rows], prefs[i], train_pools[i].groups, cfg, weights[i])
                else:
                    loss, dy = head(yhat[rows], prefs[i], train_pools[i].groups, cfg)
                batch_loss += loss
                dyhat[rows] = dy
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite {cfg.loss_kind} loss at epoch {epoch}, batch {b // cfg.batch_size}"
                )
            grads = _backward(model, cache, dyhat / len(batch))
            params, state = adam_step(model.params, grads, state, cfg.learning_rate)
            model = MlpModel(model.layer_dims, params)
            epoch_loss += batch_loss
        history.train_loss.append(epoch_loss / len(train_pools))
        regret = matching_regret(model, val_pools, x_val) if val_pools else history.train_loss[-1]
        history.val_regret.append(regret)
        history.wall_clock.append(time.perf_counter() - start)
        if regret < best_regret - 1e-12:
            best_model, best_regret, since_best = model.copy(), regret, 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best_model, history


def _train_one(args):
    return train(*args)


def train_many(dataset: Dataset, cfgs: list[TrainConfig], workers: int = 1) -> list[tuple[MlpModel, TrainHistory]]:
    """Independent ``train`` runs, in ``workers`` processes; results keep ``cfgs`` order."""
    jobs = [(dataset, cfg) for cfg in cfgs]
    if workers <= 1 or len(jobs) <= 1:
        return [_train_one(j) for j in jobs]
    with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
        return list(pool.map(_train_one, jobs))


def save_model(model: MlpModel, path, config: dict | None = None) -> None:
    payload = {
        "layer_dims": list(model.layer_dims),
        "weights": [p.tolist() for p in model.params[0::2]],
        "biases": [p.tolist() for p in model.params[1::2]],
        "encoding": ENCODING,
        "config": config or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_model(path) -> tuple[MlpModel, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text())
        params = []
        for w, b in zip(payload["weights"], payload["biases"]):
            params += [np.array(w, dtype=float), np.array(b, dtype=float)]
        model = MlpModel(tuple(payload["layer_dims"]), params)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid checkpoint ({exc})") from None
    if payload.get("encoding", ENCODING) != ENCODING:
        raise DataError(f"{path}: checkpoint feature encoding differs from this version")
    return model, payload.get("config", {})


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
