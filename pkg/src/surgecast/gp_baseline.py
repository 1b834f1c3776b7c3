"""PCA + Gaussian-process comparison emulator.

The baseline characterizes a storm by its instantaneous parameters in a
window around landfall, compresses the flattened space-time surge fields
with principal component analysis, and fits one independent
squared-exponential (ARD) GP per retained component. Prediction is the
standard posterior mean, reconstructed through the PCA basis.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConditioningError, ConfigError, ContractError, DataError, VersionError
from .storm_data import StormRecord
from .training import (
    LabelTransform,
    StandardizationStats,
    apply_standardization,
    denormalize_labels,
    fit_standardization,
    normalize_labels,
)

GP_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# storm feature vectors
# ---------------------------------------------------------------------------

def feature_steps(landfall_step: int, n_steps: int, offsets=(10,)) -> list[int]:
    """Sample steps: landfall plus +-each offset, clipped into the series."""
    steps = [landfall_step]
    for k in offsets:
        steps.append(landfall_step - int(k))
        steps.append(landfall_step + int(k))
    return [int(np.clip(s, 0, n_steps - 1)) for s in sorted(steps)]


def storm_features(inputs: np.ndarray, landfall_step: int, offsets=(10,)) -> np.ndarray:
    """Concatenated storm parameters at the landfall-window steps.

    Dimension is 4 * (2 * len(offsets) + 1).
    """
    x = np.asarray(inputs, dtype=np.float64)
    steps = feature_steps(landfall_step, x.shape[0], offsets)
    return x[steps].reshape(-1)


def feature_matrix(records: list[StormRecord], offsets=(10,)) -> np.ndarray:
    return np.stack([storm_features(r.inputs, r.landfall_step, offsets) for r in records])


# ---------------------------------------------------------------------------
# principal component analysis
# ---------------------------------------------------------------------------

@dataclass
class PCABasis:
    """Mean field plus orthonormal component rows from an SVD of the
    centered training matrix."""

    mean: np.ndarray  # [D]
    components: np.ndarray  # [k, D], orthonormal rows
    singular_values: np.ndarray  # [k], non-increasing
    n_samples: int

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def explained_variance_ratio(self) -> np.ndarray:
        var = self.singular_values**2
        total = var.sum()
        return var / total if total > 0 else var


def pca_fit(fields: np.ndarray, n_components: int) -> PCABasis:
    """Top-``n_components`` basis of the [n_storms, D] training matrix."""
    x = np.asarray(fields, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"pca_fit: need a 2-D matrix, got shape {x.shape}")
    max_rank = min(x.shape)
    if not (1 <= n_components <= max_rank):
        raise ContractError(
            f"pca_fit: n_components {n_components} outside [1, {max_rank}] for shape {x.shape}"
        )
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    return PCABasis(mean=mean, components=vt[:n_components],
                    singular_values=s[:n_components], n_samples=x.shape[0])


def pca_project(basis: PCABasis, fields: np.ndarray) -> np.ndarray:
    x = np.asarray(fields, dtype=np.float64)
    if x.shape[-1] != basis.mean.shape[0]:
        raise ContractError(
            f"pca_project: field length {x.shape[-1]} vs basis {basis.mean.shape[0]}"
        )
    return (x - basis.mean) @ basis.components.T


def pca_reconstruct(basis: PCABasis, coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients, dtype=np.float64)
    if c.shape[-1] != basis.n_components:
        raise ContractError(
            f"pca_reconstruct: {c.shape[-1]} coefficients vs {basis.n_components} components"
        )
    return basis.mean + c @ basis.components


def components_for_variance(singular_values: np.ndarray, threshold: float = 0.99,
                            cap: int | None = None) -> int:
    """Smallest component count explaining ``threshold`` of the variance."""
    var = np.asarray(singular_values, dtype=np.float64) ** 2
    total = var.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(var) / total
    n = int(np.searchsorted(cum, threshold) + 1)
    if cap is not None:
        n = min(n, cap)
    return max(1, n)


# ---------------------------------------------------------------------------
# squared-exponential GP, one per retained component
# ---------------------------------------------------------------------------

@dataclass
class KernelConfig:
    """Hyperparameter choices for gp_fit. ``None`` fields fall back to
    data-driven defaults; ``optimize`` switches on the seeded multi-start
    coordinate search (off by default so fits are exactly reproducible)."""

    signal_variance: float | None = None  # default: variance of the targets
    length_scales: np.ndarray | None = None  # default: sqrt(F) * median |dx| per dim
    noise_variance: float | None = None  # default: 1e-6 * signal
    optimize: bool = False
    n_restarts: int = 8
    seed: int = 0


@dataclass
class ComponentGP:
    signal_variance: float
    length_scales: np.ndarray
    noise_variance: float
    alpha: np.ndarray  # (K + noise I)^-1 targets


@dataclass
class GPModel:
    train_features: np.ndarray  # standardized [n_storms, F]
    components: list[ComponentGP]
    cholesky: list[np.ndarray]  # lower factors, in-memory convenience


def se_kernel(xa: np.ndarray, xb: np.ndarray, signal_variance: float,
              length_scales: np.ndarray) -> np.ndarray:
    """k(a, b) = signal * exp(-0.5 sum_d ((a_d - b_d) / l_d)^2)."""
    sa = np.asarray(xa, dtype=np.float64) / length_scales
    sb = np.asarray(xb, dtype=np.float64) / length_scales
    d2 = np.sum(sa**2, axis=-1)[:, None] + np.sum(sb**2, axis=-1)[None, :] - 2.0 * (sa @ sb.T)
    return signal_variance * np.exp(-0.5 * np.maximum(d2, 0.0))


def default_length_scales(features: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """sqrt(F) times the median per-dimension pairwise separation."""
    x = np.asarray(features, dtype=np.float64)
    n, f = x.shape
    iu = np.triu_indices(n, k=1)
    scales = np.empty(f)
    for d in range(f):
        diffs = np.abs(x[:, d][:, None] - x[:, d][None, :])[iu]
        med = np.median(diffs) if diffs.size else 0.0
        scales[d] = med if med > 0 else 1.0
    return np.maximum(scales * np.sqrt(f), floor)


def _chol_with_jitter(k: np.ndarray, noise_variance: float, component: int):
    """Cholesky of K + noise I, escalating jitter up to 1e-6 * trace / n."""
    n = k.shape[0]
    base = k + noise_variance * np.eye(n)
    mean_diag = np.trace(k) / n
    jitter = 0.0
    while True:
        try:
            lower = np.linalg.cholesky(base + jitter * np.eye(n))
            return lower, jitter
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = 1e-12 * mean_diag
            else:
                jitter *= 10.0
            if jitter > 1e-6 * mean_diag:
                raise ConditioningError(
                    f"kernel matrix for component {component} stayed indefinite "
                    f"after jitter escalation to {jitter:.3e}"
                ) from None


def _log_marginal_likelihood(x: np.ndarray, y: np.ndarray, signal: float,
                             scales: np.ndarray, noise: float, component: int) -> float:
    k = se_kernel(x, x, signal, scales)
    lower, _ = _chol_with_jitter(k, noise, component)
    alpha = linalg.cho_solve((lower, True), y)
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(lower))) - 0.5 * len(y) * np.log(2 * np.pi)
    )


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, lo: float, hi: float, iters: int = 20) -> float:
    """Maximize a 1-D function on [lo, hi] by golden-section search."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _optimize_component(x: np.ndarray, y: np.ndarray, signal: float, scales: np.ndarray,
                        noise: float, n_restarts: int, seed: int, component: int):
    """Coordinate-wise golden-section ascent of the log marginal likelihood
    over log(signal), log(noise) and each log length scale."""
    rng = np.random.default_rng([seed, component])
    base = np.concatenate([[np.log(signal), np.log(noise)], np.log(scales)])

    def lml(vec) -> float:
        try:
            return _log_marginal_likelihood(x, y, np.exp(vec[0]), np.exp(vec[2:]),
                                            np.exp(vec[1]), component)
        except ConditioningError:
            return -np.inf

    best_vec, best_val = base.copy(), lml(base)
    for restart in range(n_restarts):
        vec = base.copy()
        if restart > 0:
            vec += rng.normal(0.0, 0.5, size=vec.shape)
        for _ in range(2):  # two sweeps over the coordinates
            for i in range(len(vec)):
                def f1(v, i=i, vec=vec):
                    trial = vec.copy()
                    trial[i] = v
                    return lml(trial)

                vec[i] = _golden_section(f1, vec[i] - 2.0, vec[i] + 2.0)
        val = lml(vec)
        if val > best_val:
            best_vec, best_val = vec, val
    return np.exp(best_vec[0]), np.exp(best_vec[2:]), np.exp(best_vec[1])


def gp_fit(features: np.ndarray, targets: np.ndarray,
           kernel: KernelConfig | None = None) -> GPModel:
    """Fit one GP per target column.

    ``features`` [n_storms, F] should already be standardized with the
    training-set statistics; ``targets`` [n_storms, K] are the PCA
    coefficients (or any per-storm scalars).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ContractError(f"gp_fit: features {x.shape} and targets {y.shape} do not align")
    if x.shape[0] < 2:
        raise ContractError(f"gp_fit: need at least 2 storms, got {x.shape[0]}")
    kernel = kernel or KernelConfig()

    shared_scales = kernel.length_scales
    if shared_scales is None:
        shared_scales = default_length_scales(x)
    shared_scales = np.asarray(shared_scales, dtype=np.float64)
    if shared_scales.shape != (x.shape[1],):
        raise ConfigError(
            f"length scales {shared_scales.shape} do not match {x.shape[1]} feature dims"
        )

    comps: list[ComponentGP] = []
    chols: list[np.ndarray] = []
    for j in range(y.shape[1]):
        yj = y[:, j]
        signal = kernel.signal_variance
        if signal is None:
            signal = float(max(yj.var(), 1e-12))
        noise = kernel.noise_variance
        if noise is None:
            noise = 1e-6 * signal
        scales = shared_scales.copy()
        if kernel.optimize:
            signal, scales, noise = _optimize_component(
                x, yj, signal, scales, noise, kernel.n_restarts, kernel.seed, j
            )
        k = se_kernel(x, x, signal, scales)
        lower, jitter = _chol_with_jitter(k, noise, j)
        alpha = linalg.cho_solve((lower, True), yj)
        comps.append(ComponentGP(signal_variance=float(signal), length_scales=scales,
                                 noise_variance=float(noise + jitter), alpha=alpha))
        chols.append(lower)
    return GPModel(train_features=x, components=comps, cholesky=chols)


def gp_posterior_mean(model: GPModel, features: np.ndarray) -> np.ndarray:
    """Posterior means [n_query, K] at standardized query features."""
    q = np.asarray(features, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.shape[1] != model.train_features.shape[1]:
        raise ContractError(
            f"gp_posterior_mean: {q.shape[1]} feature dims, trained on "
            f"{model.train_features.shape[1]}"
        )
    out = np.empty((q.shape[0], len(model.components)))
    for j, comp in enumerate(model.components):
        k_star = se_kernel(q, model.train_features, comp.signal_variance, comp.length_scales)
        out[:, j] = k_star @ comp.alpha
    return out[0] if single else out


def gp_predict(model: GPModel, basis: PCABasis, feature: np.ndarray,
               n_steps: int, n_sp: int,
               label_transform: LabelTransform | None = None) -> np.ndarray:
    """Surge field [T, n_sp] for one standardized feature vector."""
    coeffs = gp_posterior_mean(model, np.asarray(feature, dtype=np.float64))
    field = pca_reconstruct(basis, coeffs)
    if field.size != n_steps * n_sp:
        raise ContractError(
            f"gp_predict: basis of length {field.size} cannot form a {n_steps}x{n_sp} field"
        )
    field = field.reshape(n_steps, n_sp)
    if label_transform is not None:
        field = denormalize_labels(field, label_transform)
    return field


# ---------------------------------------------------------------------------
# end-to-end emulator
# ---------------------------------------------------------------------------

@dataclass
class GpEmulator:
    """The packaged baseline: feature windowing, standardization, label
    normalization, PCA and the per-component GPs."""

    offsets: tuple[int, ...]
    feature_stats: StandardizationStats
    basis: PCABasis
    model: GPModel
    label_transform: LabelTransform | None
    n_steps: int
    n_sp: int

    @classmethod
    def fit(cls, records: list[StormRecord], offsets=(10,),
            n_components: int | None = None, variance_threshold: float = 0.99,
            label_transform: LabelTransform | None = None,
            kernel: KernelConfig | None = None) -> "GpEmulator":
        if len(records) < 2:
            raise ContractError(f"GpEmulator.fit: need at least 2 storms, got {len(records)}")
        offsets = tuple(int(k) for k in offsets)
        n_steps = records[0].n_steps
        n_sp = records[0].labels.shape[1]

        raw_features = feature_matrix(records, offsets)
        stats = fit_standardization(raw_features)
        features = apply_standardization(raw_features, stats)

        fields = np.stack([r.labels.reshape(-1) for r in records])
        if label_transform is not None:
            fields = normalize_labels(fields, label_transform)
        if n_components is None:
            probe = pca_fit(fields, min(fields.shape))
            n_components = components_for_variance(
                probe.singular_values, variance_threshold, cap=len(records) - 1
            )
        basis = pca_fit(fields, n_components)
        targets = pca_project(basis, fields)
        model = gp_fit(features, targets, kernel)
        return cls(offsets=offsets, feature_stats=stats, basis=basis, model=model,
                   label_transform=label_transform, n_steps=n_steps, n_sp=n_sp)

    def predict(self, record: StormRecord) -> np.ndarray:
        """Surge field [T, n_sp] in raw units for one storm's inputs."""
        raw = storm_features(record.inputs, record.landfall_step, self.offsets)
        feature = apply_standardization(raw, self.feature_stats)
        return gp_predict(self.model, self.basis, feature, self.n_steps, self.n_sp,
                          self.label_transform)

    def save(self, path):
        doc = {
            "format_version": GP_FORMAT_VERSION,
            "kind": "surgecast-gp",
            "offsets": list(self.offsets),
            "n_steps": self.n_steps,
            "n_sp": self.n_sp,
            "feature_stats": self.feature_stats.to_dict(),
            "label_transform": (
                {"y_scale": self.label_transform.y_scale} if self.label_transform else None
            ),
            "pca": {
                "mean": self.basis.mean.tolist(),
                "components": self.basis.components.tolist(),
                "singular_values": self.basis.singular_values.tolist(),
                "n_samples": self.basis.n_samples,
            },
            "train_features": self.model.train_features.tolist(),
            "components": [
                {
                    "signal_variance": c.signal_variance,
                    "length_scales": c.length_scales.tolist(),
                    "noise_variance": c.noise_variance,
                    "alpha": c.alpha.tolist(),
                }
                for c in self.model.components
            ],
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "GpEmulator":
        if not os.path.exists(path):
            raise DataError(f"no GP model file at {path}")
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"GP model file {path} is not valid JSON: {e}") from e
        if doc.get("format_version") != GP_FORMAT_VERSION:
            raise VersionError(
                f"GP model file {path} has format version {doc.get('format_version')}, "
                f"this build reads {GP_FORMAT_VERSION}"
            )
        try:
            basis = PCABasis(
                mean=np.asarray(doc["pca"]["mean"], dtype=np.float64),
                components=np.asarray(doc["pca"]["components"], dtype=np.float64),
                singular_values=np.asarray(doc["pca"]["singular_values"], dtype=np.float64),
                n_samples=int(doc["pca"]["n_samples"]),
            )
            comps = [
                ComponentGP(
                    signal_variance=float(c["signal_variance"]),
                    length_scales=np.asarray(c["length_scales"], dtype=np.float64),
                    noise_variance=float(c["noise_variance"]),
                    alpha=np.asarray(c["alpha"], dtype=np.float64),
                )
                for c in doc["components"]
            ]
            model = GPModel(
                train_features=np.asarray(doc["train_features"], dtype=np.float64),
                components=comps,
                cholesky=[],
            )
            transform = None
            if doc.get("label_transform"):
                transform = LabelTransform(float(doc["label_transform"]["y_scale"]))
            return cls(
                offsets=tuple(int(k) for k in doc["offsets"]),
                feature_stats=StandardizationStats.from_dict(doc["feature_stats"]),
                basis=basis,
                model=model,
                label_transform=transform,
                n_steps=int(doc["n_steps"]),
                n_sp=int(doc["n_sp"]),
            )
        except (KeyError, TypeError) as e:
            raise DataError(f"GP model file {path} is malformed: {e}") from e
