"""Data normalization, loss, optimizers, the training loop and random search.

The four storm inputs are standardized feature-by-feature with statistics
from the training storms only. Surge labels are squashed through
tanh(y / y_scale) so they sit in (-1, 1); the scale is chosen from the
training distribution at preparation time and stored with the model.

The loss is the root of the mean squared error over every (storm, step,
save point) element, so its magnitude is comparable across grid sizes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError, TrainingDivergedError
from .model import ArchitectureConfig, ModelParams, forward_sequence, save_params

TRAIN_FORMAT_VERSION = 1

SIGMA_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# input standardization
# ---------------------------------------------------------------------------

@dataclass
class StandardizationStats:
    """Per-feature mean and population standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.asarray(d["mu"], dtype=np.float64), np.asarray(d["sigma"], dtype=np.float64))


def fit_standardization(train_inputs, sigma_floor: float = SIGMA_FLOOR) -> StandardizationStats:
    """Per-feature mean/std over all storms and steps (population convention).

    Features whose raw spread falls below ``sigma_floor`` are clamped to the
    floor, so constant features transform to zeros instead of blowing up.
    """
    x = np.asarray(train_inputs, dtype=np.float64)
    if x.size == 0:
        raise ContractError("fit_standardization: empty input")
    flat = x.reshape(-1, x.shape[-1])
    if flat.shape[0] < 2:
        raise ContractError(f"fit_standardization: need at least 2 samples, got {flat.shape[0]}")
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)  # population (ddof=0)
    sigma = np.maximum(sigma, sigma_floor)
    return StandardizationStats(mu=mu, sigma=sigma)


def apply_standardization(inputs, stats: StandardizationStats) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[-1] != stats.mu.shape[0]:
        raise ShapeError(
            f"apply_standardization: {x.shape[-1]} features, stats have {stats.mu.shape[0]}"
        )
    return (x - stats.mu) / stats.sigma


# ---------------------------------------------------------------------------
# label normalization
# ---------------------------------------------------------------------------

@dataclass
class LabelTransform:
    """Squash surge values (meters) into (-1, 1) via tanh(y / y_scale)."""

    y_scale: float

    def __post_init__(self):
        if not np.isfinite(self.y_scale) or self.y_scale <= 0:
            raise ConfigError(f"label scale must be positive, got {self.y_scale}")


_ATANH_CLIP = 1.0 - 1e-9


def fit_label_transform(train_labels, quantile: float = 0.95, factor: float = 3.0) -> LabelTransform:
    """Pick y_scale = factor * the |surge| quantile of the training set."""
    y = np.asarray(train_labels, dtype=np.float64)
    if y.size == 0:
        raise ContractError("fit_label_transform: empty labels")
    scale = factor * float(np.quantile(np.abs(y), quantile))
    return LabelTransform(y_scale=scale)


def normalize_labels(y, transform: LabelTransform) -> np.ndarray:
    return np.tanh(np.asarray(y, dtype=np.float64) / transform.y_scale)


def denormalize_labels(y_norm, transform: LabelTransform) -> np.ndarray:
    clipped = np.clip(np.asarray(y_norm, dtype=np.float64), -_ATANH_CLIP, _ATANH_CLIP)
    return transform.y_scale * np.arctanh(clipped)


# ---------------------------------------------------------------------------
# combined data preparation
# ---------------------------------------------------------------------------

@dataclass
class PreprocessBundle:
    """Input standardization plus label normalization, fit on the training
    storms and stored with the trained model."""

    stats: StandardizationStats
    label_transform: LabelTransform

    @classmethod
    def fit(cls, train_inputs, train_labels) -> "PreprocessBundle":
        return cls(
            stats=fit_standardization(train_inputs),
            label_transform=fit_label_transform(train_labels),
        )

    def transform_inputs(self, inputs) -> np.ndarray:
        return apply_standardization(inputs, self.stats)

    def transform_labels(self, labels) -> np.ndarray:
        return normalize_labels(labels, self.label_transform)

    def invert_labels(self, labels_norm) -> np.ndarray:
        return denormalize_labels(labels_norm, self.label_transform)

    def to_dict(self) -> dict:
        return {
            "stats": self.stats.to_dict(),
            "label_transform": {"y_scale": self.label_transform.y_scale},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessBundle":
        try:
            return cls(
                stats=StandardizationStats.from_dict(d["stats"]),
                label_transform=LabelTransform(float(d["label_transform"]["y_scale"])),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"preprocess section is malformed: {e}") from e


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def l2_loss(pred: Tensor, label) -> Tensor:
    """Root-mean-square mismatch over all elements, differentiable."""
    lab = label if isinstance(label, Tensor) else Tensor(label)
    if pred.shape != lab.shape:
        raise ShapeError(f"l2_loss: prediction {pred.shape} vs label {lab.shape}")
    diff = ad.sub(pred, lab)
    return ad.sqrt(ad.mean_all(ad.mul(diff, diff)))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class Sgd:
    """Plain mini-batch gradient descent."""

    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Momentum(Sgd):
    """Gradient descent with classical momentum."""

    def __init__(self, params: list[Tensor], lr: float, beta: float = 0.9):
        super().__init__(params, lr)
        self.beta = beta
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.beta
            v += p.grad
            p.data -= self.lr * v


class Adam(Sgd):
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"sgd": Sgd, "momentum": Momentum, "adam": Adam}


def make_optimizer(name: str, params: list[Tensor], cfg: "TrainConfig"):
    if name == "sgd":
        return Sgd(params, cfg.learning_rate)
    if name == "momentum":
        return Momentum(params, cfg.learning_rate, beta=cfg.momentum_beta)
    if name == "adam":
        return Adam(params, cfg.learning_rate, beta1=cfg.adam_beta1,
                    beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    raise ConfigError(f"unknown optimizer '{name}', choose from {sorted(OPTIMIZERS)}")


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    momentum_beta: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoint files; 0 disables
    log_every: int = 0  # epochs between progress lines; 0 disables

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "momentum_beta": self.momentum_beta,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)


def train(params: ModelParams, inputs, labels, cfg: TrainConfig,
          checkpoint_dir: str | None = None, progress=None):
    """Mini-batch training of the surge network.

    ``inputs`` [S, T, n_features] must already be standardized and
    ``labels`` [S, T, n_sp] label-normalized. Storms are reshuffled every
    epoch with a generator seeded from cfg.seed, so a fixed seed gives a
    bit-identical run. Returns (params, per-epoch mean loss history); the
    best-loss checkpoint is written to ``checkpoint_dir`` when one is given.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    arch = params.config
    if x.ndim != 3 or y.ndim != 3 or x.shape[:2] != y.shape[:2]:
        raise ShapeError(f"train: inputs {x.shape} and labels {y.shape} do not align")
    if y.shape[2] != arch.n_sp or x.shape[2] != arch.n_features:
        raise ShapeError(f"train: data {x.shape}/{y.shape} does not match the architecture")
    n_storms = x.shape[0]
    if cfg.batch_size > n_storms:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds {n_storms} training storms")

    weights = params.parameters()
    optimizer = make_optimizer(cfg.optimizer, weights, cfg)
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    best_loss = np.inf

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_storms)
        batch_losses = []
        for start in range(0, n_storms, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred = forward_sequence(x[idx], params)
            loss = l2_loss(pred, y[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // cfg.batch_size + 1}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(value)
        epoch_loss = float(np.mean(batch_losses))
        history.append(epoch_loss)

        if checkpoint_dir is not None and epoch_loss < best_loss:
            save_params(params, os.path.join(checkpoint_dir, "best.json"))
        best_loss = min(best_loss, epoch_loss)
        if checkpoint_dir is not None and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            save_params(params, os.path.join(checkpoint_dir, f"checkpoint_{epoch + 1:06d}.json"))
        if progress is not None and cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            progress(epoch + 1, epoch_loss)

    return params, history


def write_loss_history(history: list[float], path):
    with open(path, "w") as f:
        f.write("epoch,mean_loss\n")
        for i, value in enumerate(history):
            f.write(f"{i + 1},{value!r}\n")


def read_loss_history(path) -> list[float]:
    with open(path) as f:
        lines = f.read().strip().splitlines()
    return [float(line.split(",")[1]) for line in lines[1:]]


# ---------------------------------------------------------------------------
# random hyperparameter search
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    index: int
    settings: dict
    val_loss: float
    train_loss: float
    status: str  # "ok" or "diverged"
    error: str = ""


@dataclass
class RandomSearchReport:
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def best(self) -> TrialResult | None:
        ok = [t for t in self.trials if t.status == "ok"]
        return ok[0] if ok else None

    def ranked(self) -> list[TrialResult]:
        return self.trials


def _sample_setting(rng: np.random.Generator, name: str, spec):
    """One draw from a space entry.

    Tuples (low, high) and {"range": [low, high]} are continuous ranges,
    uniform except for the learning rate which is drawn log-uniformly.
    Plain lists and {"choices": [...]} pick uniformly from the values.
    """
    if isinstance(spec, dict):
        if "range" in spec:
            spec = tuple(spec["range"])
        elif "choices" in spec:
            spec = list(spec["choices"])
        else:
            raise ConfigError(f"search entry for '{name}' needs a 'range' or 'choices' key")
    if isinstance(spec, tuple):
        if len(spec) != 2:
            raise ConfigError(f"range for '{name}' must be (low, high), got {spec}")
        low, high = float(spec[0]), float(spec[1])
        if low > high:
            raise ConfigError(f"range for '{name}' is empty: {spec}")
        if name == "learning_rate":
            if low <= 0:
                raise ConfigError("learning_rate range must be positive for log-uniform draws")
            return float(np.exp(rng.uniform(np.log(low), np.log(high))))
        return float(rng.uniform(low, high))
    if isinstance(spec, list):
        if not spec:
            raise ConfigError(f"choice list for '{name}' is empty")
        return spec[int(rng.integers(len(spec)))]
    raise ConfigError(f"search space entry for '{name}' must be a tuple, list or dict")


def random_search(arch: ArchitectureConfig, inputs, labels, space: dict,
                  budget: int, trial_epochs: int, seed: int = 0,
                  progress=None) -> RandomSearchReport:
    """Sample ``budget`` configurations, train each briefly, rank by
    validation loss.

    Learning rates are drawn log-uniformly, other numeric ranges uniformly,
    lists by choice. The last 10% of the training storms (by index) are held
    out for validation. Diverging trials are recorded as failed rather than
    raising. Fully reproducible from ``seed``.
    """
    if budget < 1:
        raise ContractError(f"random_search: budget must be >= 1, got {budget}")
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n_storms = x.shape[0]
    n_val = max(1, n_storms // 10)
    if n_val >= n_storms:
        raise ContractError(f"random_search: {n_storms} storms leave no training split")
    x_train, y_train = x[: n_storms - n_val], y[: n_storms - n_val]
    x_val, y_val = x[n_storms - n_val :], y[n_storms - n_val :]

    rng = np.random.default_rng(seed)
    trials: list[TrialResult] = []
    for index in range(budget):
        settings = {name: _sample_setting(rng, name, spec) for name, spec in sorted(space.items())}
        trial_arch = arch
        if "dt" in settings:
            trial_arch = replace(arch, dt=float(settings["dt"]))
        # one shared training seed: identical settings give identical trials
        cfg = TrainConfig(
            epochs=trial_epochs,
            batch_size=int(settings.get("batch_size", min(16, len(x_train)))),
            learning_rate=float(settings.get("learning_rate", 1e-4)),
            optimizer=str(settings.get("optimizer", "adam")),
            seed=seed,
        )
        params = ModelParams.init(trial_arch, seed=cfg.seed)
        try:
            _, history = train(params, x_train, y_train, cfg)
            val_loss = l2_loss(forward_sequence(x_val, params), y_val).item()
            trials.append(TrialResult(index, settings, float(val_loss),
                                      float(history[-1]) if history else np.inf, "ok"))
        except TrainingDivergedError as e:
            trials.append(TrialResult(index, settings, np.inf, np.inf, "diverged", str(e)))
        if progress is not None:
            progress(index + 1, trials[-1])

    trials.sort(key=lambda t: (t.status != "ok", t.val_loss, t.index))
    return RandomSearchReport(trials=trials)


def write_search_report(report: RandomSearchReport, path):
    with open(path, "w") as f:
        f.write("rank,trial,status,val_loss,train_loss,settings\n")
        for rank, t in enumerate(report.ranked(), start=1):
            f.write(f"{rank},{t.index},{t.status},{t.val_loss!r},{t.train_loss!r},"
                    f"\"{json.dumps(t.settings)}\"\n")
