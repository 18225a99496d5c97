"""
Goal-conditioned behaviour cloning: a small feed-forward classifier
p(a | s, s_g) over the 14 discrete actions, trained by maximum likelihood
(softmax cross-entropy) with hand-written backpropagation and Adam.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from dataset import ACTION_COUNT, DemoDataset
from errors import DataError

logger = logging.getLogger('demobot')

MODEL_FORMAT = 'demobot-gcbc'
MODEL_VERSION = 1
PARAM_NAMES = ('W1', 'b1', 'W2', 'b2', 'W3', 'b3')

DEFAULT_HPARAMS = {
    "hidden": 64,
    "learning_rate": 0.001,
    "epochs": 200,
    "batch_size": 64,
}

Params = Dict[str, np.ndarray]


@dataclass
class GCBCModel:
    params: Params
    mean: np.ndarray
    std: np.ndarray
    hparams: Dict[str, Any] = field(default_factory=dict)
    final_loss: float = float('nan')
    loss_curve: List[float] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return int(self.params['W1'].shape[0])

    @property
    def feature_dim(self) -> int:
        return self.input_dim // 2


def init_params(input_dim: int, hidden: int, rng: np.random.Generator, output_dim: int = ACTION_COUNT) -> Params:
    params = {}
    sizes = [(input_dim, hidden), (hidden, hidden), (hidden, output_dim)]
    for layer, (fan_in, fan_out) in enumerate(sizes, start=1):
        params[f'W{layer}'] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f'b{layer}'] = np.zeros(fan_out)
    return params


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(params: Params, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    z1 = x @ params['W1'] + params['b1']
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params['W2'] + params['b2']
    h2 = np.maximum(z2, 0.0)
    logits = h2 @ params['W3'] + params['b3']
    return logits, {'x': x, 'z1': z1, 'h1': h1, 'z2': z2, 'h2': h2}


def loss_and_grads(params: Params, x: np.ndarray, y: np.ndarray) -> Tuple[float, Params]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    logits, cache = forward(params, x)
    probs = softmax(logits)
    count = x.shape[0]
    rows = np.arange(count)
    loss = float(-np.mean(np.log(np.maximum(probs[rows, y], 1e-300))))

    dlogits = probs.copy()
    dlogits[rows, y] -= 1.0
    dlogits /= count
    grads = {
        'W3': cache['h2'].T @ dlogits,
        'b3': dlogits.sum(axis=0),
    }
    dz2 = (dlogits @ params['W3'].T) * (cache['z2'] > 0)
    grads['W2'] = cache['h1'].T @ dz2
    grads['b2'] = dz2.sum(axis=0)
    dz1 = (dz2 @ params['W2'].T) * (cache['z1'] > 0)
    grads['W1'] = cache['x'].T @ dz1
    grads['b1'] = dz1.sum(axis=0)
    return loss, grads


class Adam:

    def __init__(self, params: Params, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {name: np.zeros_like(value) for name, value in params.items()}
        self._v = {name: np.zeros_like(value) for name, value in params.items()}
        self._t = 0

    def update(self, params: Params, grads: Params) -> None:
        self._t += 1
        correction1 = 1.0 - self.beta1 ** self._t
        correction2 = 1.0 - self.beta2 ** self._t
        for name in PARAM_NAMES:
            self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * grads[name]
            self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * grads[name] ** 2
            m_hat = self._m[name] / correction1
            v_hat = self._v[name] / correction2
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


TupleSampler = Callable[[np.random.Generator], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def _fit(sampler: TupleSampler, mean: np.ndarray, std: np.ndarray, hparams: Dict[str, Any],
         rng: np.random.Generator) -> GCBCModel:
    hp = dict(DEFAULT_HPARAMS, **hparams)
    states, goals, actions = sampler(rng)
    params = init_params(states.shape[1] * 2, int(hp['hidden']), rng)
    optimiser = Adam(params, float(hp['learning_rate']))
    batch_size = int(hp['batch_size'])
    curve = []
    for epoch in range(int(hp['epochs'])):
        if epoch:
            states, goals, actions = sampler(rng)
        x = (np.concatenate([states, goals], axis=1) - mean) / std
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        for start in range(0, x.shape[0], batch_size):
            rows = order[start:start + batch_size]
            loss, grads = loss_and_grads(params, x[rows], actions[rows])
            optimiser.update(params, grads)
            epoch_loss += loss * rows.size
        curve.append(epoch_loss / x.shape[0])
    x = (np.concatenate([states, goals], axis=1) - mean) / std
    final_loss, _ = loss_and_grads(params, x, actions)
    return GCBCModel(params, mean, std, hp, final_loss, curve)


def _standardisation(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std < 1e-12] = 1.0
    return np.concatenate([mean, mean]), np.concatenate([std, std])


def fit_tuples(states, goals, actions, hparams: Optional[Dict[str, Any]] = None, seed: int = 0) -> GCBCModel:
    """Trains on a fixed set of (s, s_g, a) tuples."""
    states = np.asarray(states, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    if states.shape[0] < 1 or states.shape != goals.shape or actions.shape != (states.shape[0],):
        raise DataError("training tuples must hold at least one aligned (s, s_g, a) row")
    mean, std = _standardisation(np.concatenate([states, goals], axis=0))
    model = _fit(lambda rng: (states, goals, actions), mean, std, hparams or {}, np.random.default_rng(seed))
    logger.info(f"Trained GCBC on {states.shape[0]} tuples, final cross-entropy {model.final_loss:.4f}")
    return model


def hindsight_tuples(dataset: DemoDataset, goal_horizon: int,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One (s_t, s_{t+h}, a) tuple per non-final step, h uniform in
    [1, min(goal_horizon, n - t)]. The action executed at s_t is the one stored
    on step t + 1, since each step records the command that produced it.
    """
    states, goals, actions = [], [], []
    for traj_id in dataset.traj_ids:
        traj = dataset.trajectory(traj_id)
        features = traj.features
        n = len(traj)
        for t in range(1, n):
            h = int(rng.integers(1, min(goal_horizon, n - t) + 1))
            states.append(features[t - 1])
            goals.append(features[t - 1 + h])
            actions.append(traj.steps[t].action)
    if not states:
        raise DataError("degenerate dataset: GCBC needs at least one trajectory with two steps")
    return np.stack(states), np.stack(goals), np.asarray(actions, dtype=np.int64)


def gcbc_train(dataset: DemoDataset, goal_horizon: int = 10, hparams: Optional[Dict[str, Any]] = None,
               seed: int = 0) -> GCBCModel:
    if goal_horizon < 1:
        raise DataError(f"goal_horizon must be >= 1, got {goal_horizon}")
    rng = np.random.default_rng(seed)
    all_features = np.concatenate([dataset.trajectory(i).features for i in dataset.traj_ids], axis=0)
    mean, std = _standardisation(all_features)
    hp = {key: value for key, value in (hparams or {}).items() if key in DEFAULT_HPARAMS}
    model = _fit(lambda r: hindsight_tuples(dataset, goal_horizon, r), mean, std, hp, rng)
    model.hparams.update(goal_horizon=goal_horizon, seed=seed)
    logger.info(f"Trained GCBC on {len(dataset)} trajectories for {model.hparams['epochs']} epochs, "
                f"final cross-entropy {model.final_loss:.4f}")
    return model


def gcbc_train_from_config(dataset: DemoDataset, config: Dict[str, Any]) -> GCBCModel:
    section = config['gcbc']
    hparams = {key: section[key] for key in DEFAULT_HPARAMS}
    return gcbc_train(dataset, section['goal_horizon'], hparams, section['seed'])


def predict_proba(model: GCBCModel, s, s_g) -> np.ndarray:
    x = _model_input(model, s, s_g)
    logits, _ = forward(model.params, x[None, :])
    return softmax(logits)[0]


def _model_input(model: GCBCModel, s, s_g) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    s_g = np.asarray(s_g, dtype=np.float64)
    if s.shape != (model.feature_dim,) or s_g.shape != (model.feature_dim,):
        raise DataError(f"dimension mismatch: model expects {model.feature_dim}, "
                        f"got {s.shape} and {s_g.shape}")
    return (np.concatenate([s, s_g]) - model.mean) / model.std


def gcbc_action(model: GCBCModel, s, s_g) -> int:
    """Argmax-logit action; equal logits resolve to the lowest action id."""
    logits, _ = forward(model.params, _model_input(model, s, s_g)[None, :])
    return int(np.argmax(logits[0]))


def training_accuracy(model: GCBCModel, states, goals, actions) -> float:
    x = (np.concatenate([np.asarray(states), np.asarray(goals)], axis=1) - model.mean) / model.std
    logits, _ = forward(model.params, x)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(actions)))


def save_model(model: GCBCModel, path: str) -> None:
    document = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "shapes": {name: list(model.params[name].shape) for name in PARAM_NAMES},
        "params": {name: model.params[name].ravel().tolist() for name in PARAM_NAMES},
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "hparams": model.hparams,
        "final_loss": model.final_loss,
    }
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(document, f, sort_keys=True)
        f.write('\n')
    logger.info(f"Saved GCBC model to {path}")


def load_model(path: str) -> GCBCModel:
    try:
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise DataError("file not found", path=path) from e
    except ValueError as e:
        raise DataError(f"malformed model file ({e})", path=path) from e
    if document.get('format') != MODEL_FORMAT:
        raise DataError(f"not a {MODEL_FORMAT} file", path=path)
    params = {}
    for name in PARAM_NAMES:
        shape = tuple(document['shapes'][name])
        values = np.asarray(document['params'][name], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise DataError(f"parameter {name} holds {values.size} values, shape {shape}", path=path)
        params[name] = values.reshape(shape)
    return GCBCModel(params, np.asarray(document['mean'], dtype=np.float64),
                     np.asarray(document['std'], dtype=np.float64),
                     document.get('hparams', {}), document.get('final_loss', float('nan')))
