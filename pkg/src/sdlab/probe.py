"""Multi-class softmax probes with label corruption and distillation.

Linear softmax classifiers trained by full-batch gradient descent on an
L2-regularized cross-entropy objective, against hard labels, soft targets,
or a xi-weighted mix of a teacher's predictions and the observed labels
(the mix is itself a valid target matrix: rows always sum to one, so the
mixed objective stays convex for every real xi).  Includes the three label
corruption schemes used to stress the teacher: resampling uniformly over
all other classes, over the true class's superclass, or over the classes a
cleanly trained teacher confuses most with the true one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from . import seeding
from .exceptions import InvalidInputError, StepSizeError
from .validation import as_float_array, as_label_array, positive_scalar, require

CORRUPTION_KINDS = ("random", "hierarchical", "adversarial")

# step sizes tried when tuning instead of fixing one
STEP_SIZE_GRID = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5)


@dataclass(frozen=True)
class CorruptionSpec:
    """How to resample training labels: scheme, level in [0, 1], seed."""

    kind: str
    level: float
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        require(self.kind in CORRUPTION_KINDS, f"kind must be one of {CORRUPTION_KINDS}")
        require(0.0 <= float(self.level) <= 1.0, "level must lie in [0, 1]")
        require(int(self.k) >= 1, "k must be a positive integer")
        object.__setattr__(self, "level", float(self.level))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class ProbeConfig:
    """Optimizer settings shared by teacher and student fits."""

    lam: float = 1e-3
    xi: float = 1.0
    step_size: float = 0.1
    epochs: int = 300
    batch_size: int = 0
    seed: int = 0

    def __post_init__(self):
        positive_scalar(self.lam, "lam")
        positive_scalar(self.step_size, "step_size")
        require(int(self.epochs) >= 1, "epochs must be at least 1")
        require(int(self.batch_size) >= 0, "batch_size must be nonnegative (0 = full batch)")
        object.__setattr__(self, "epochs", int(self.epochs))
        object.__setattr__(self, "batch_size", int(self.batch_size))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class FeatureDataset:
    """Feature matrix with integer labels, class count, splits, superclasses."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    superclass: np.ndarray | None = None

    def __post_init__(self):
        features = as_float_array(self.features, "features", ndim=2)
        labels = as_label_array(self.labels, "labels", n_classes=int(self.n_classes))
        require(labels.size == features.shape[0], "labels must match the feature rows")
        train = np.asarray(self.train_idx, dtype=np.int64)
        test = np.asarray(self.test_idx, dtype=np.int64)
        require(np.intersect1d(train, test).size == 0, "train and test must be disjoint")
        if self.superclass is not None:
            sc = np.asarray(self.superclass, dtype=np.int64)
            require(sc.size == int(self.n_classes), "superclass map must cover all classes")
            object.__setattr__(self, "superclass", sc)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", int(self.n_classes))
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "test_idx", test)


@dataclass(frozen=True)
class ProbeResult:
    """Outcome of one teacher/student pair at a single imitation weight."""

    xi: float
    teacher_test_acc: float
    student_test_acc: float
    improvement: float
    per_class_variability: tuple[tuple[float, float], ...]
    teacher_grad_norm: float = float("nan")
    student_grad_norm: float = float("nan")


# ---------------------------------------------------------------------------
# label corruption
# ---------------------------------------------------------------------------

def hard_class_sets(confusion: np.ndarray, k: int) -> np.ndarray:
    """Per class, the k classes with the largest confusion scores, excluding itself.

    Ties are broken toward the smaller class index.
    """
    confusion = as_float_array(confusion, "confusion", ndim=2)
    n_classes = confusion.shape[0]
    require(confusion.shape == (n_classes, n_classes), "confusion must be square")
    require(k <= n_classes - 1, "k must leave at least one alternative class")
    sets = np.empty((n_classes, k), dtype=np.int64)
    for c in range(n_classes):
        order = sorted((i for i in range(n_classes) if i != c),
                       key=lambda i: (-confusion[c, i], i))
        sets[c] = order[:k]
    return sets


def corrupt_labels(labels, spec: CorruptionSpec, n_classes: int,
                   superclass=None, confusion=None) -> np.ndarray:
    """Independently resample each label with probability ``spec.level``.

    A resampled label is drawn uniformly over the scheme's alternative set:
    every other class, the superclass minus the true class, or the true
    class's hard-class set derived from ``confusion``.  Deterministic given
    ``spec.seed``.
    """
    labels = as_label_array(labels, "labels", n_classes=n_classes)
    if spec.kind == "hierarchical":
        if superclass is None:
            raise InvalidInputError("hierarchical corruption needs a superclass map")
        superclass = np.asarray(superclass, dtype=np.int64)
        options = []
        for c in range(n_classes):
            group = np.flatnonzero(superclass == superclass[c])
            group = group[group != c]
            if group.size == 0:
                raise InvalidInputError(
                    f"class {c} is alone in its superclass; no flip target exists"
                )
            options.append(group)
    elif spec.kind == "adversarial":
        if confusion is None:
            raise InvalidInputError("adversarial corruption needs a confusion profile")
        sets = hard_class_sets(np.asarray(confusion, dtype=np.float64), spec.k)
        options = [sets[c] for c in range(n_classes)]
    else:
        options = [np.setdiff1d(np.arange(n_classes), [c]) for c in range(n_classes)]

    rng = seeding.stream(spec.seed, 0)
    flip = rng.random(labels.size) < spec.level
    pick = rng.random(labels.size)
    out = labels.copy()
    for i in np.flatnonzero(flip):
        alts = options[labels[i]]
        out[i] = alts[int(pick[i] * alts.size)]
    return out


# ---------------------------------------------------------------------------
# softmax objective and gradient descent
# ---------------------------------------------------------------------------

def as_target_matrix(targets, n_classes: int, n_samples: int) -> np.ndarray:
    """One-hot encode hard labels; validate soft rows sum to one."""
    arr = np.asarray(targets)
    if arr.ndim == 1:
        labels = as_label_array(arr, "targets", n_classes=n_classes)
        require(labels.size == n_samples, "targets must match the sample count")
        onehot = np.zeros((n_samples, n_classes))
        onehot[np.arange(n_samples), labels] = 1.0
        return onehot
    soft = as_float_array(arr, "targets", ndim=2)
    require(soft.shape == (n_samples, n_classes), "soft targets have the wrong shape")
    require(bool(np.all(np.abs(soft.sum(axis=1) - 1.0) <= 1e-6)),
            "soft target rows must sum to 1")
    return soft


def softmax_objective(weights, features, targets, lam: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against target rows plus (lam/2)||W||_F^2, with gradient."""
    logits = features @ weights.T
    logp = log_softmax(logits, axis=1)
    n = features.shape[0]
    loss = float(-np.sum(targets * logp) / n + 0.5 * lam * np.sum(weights**2))
    grad = (np.exp(logp) - targets).T @ features / n + lam * weights
    return loss, grad


def predict_probabilities(weights, features) -> np.ndarray:
    return softmax(features @ weights.T, axis=1)


def _descend(features, target_matrix, lam, config: ProbeConfig):
    n, d = features.shape
    n_classes = target_matrix.shape[1]
    weights = np.zeros((n_classes, d))
    step = config.step_size

    if config.batch_size:
        rng = seeding.stream(config.seed, 1)
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                batch = order[start:start + config.batch_size]
                _, grad = softmax_objective(weights, features[batch],
                                            target_matrix[batch], lam)
                weights = weights - step * grad
                if not np.all(np.isfinite(weights)):
                    raise StepSizeError("weights diverged; reduce the step size")
        loss, grad = softmax_objective(weights, features, target_matrix, lam)
        return weights, {"loss": loss, "grad_norm": float(np.linalg.norm(grad))}

    loss, grad = softmax_objective(weights, features, target_matrix, lam)
    for _ in range(config.epochs):
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= 1e-12 * (1.0 + abs(loss)):
            break
        for _ in range(60):
            proposal = weights - step * grad
            new_loss, new_grad = softmax_objective(proposal, features, target_matrix, lam)
            if np.isfinite(new_loss) and new_loss <= loss:
                weights, loss, grad = proposal, new_loss, new_grad
                break
            step *= 0.5
        else:
            raise StepSizeError(f"loss stopped decreasing at step size {step:g}")
    return weights, {"loss": loss, "grad_norm": float(np.linalg.norm(grad))}


def fit_softmax(features, targets, lam: float, config: ProbeConfig) -> np.ndarray:
    """Minimize the regularized cross-entropy; returns the class-by-dim weights."""
    features = as_float_array(features, "features", ndim=2)
    lam = positive_scalar(lam, "lam")
    arr = np.asarray(targets)
    n_classes = arr.shape[1] if arr.ndim == 2 else int(arr.max()) + 1
    target_matrix = as_target_matrix(targets, n_classes, features.shape[0])
    weights, _ = _descend(features, target_matrix, lam, config)
    return weights


def mixed_targets(labels, teacher_probs, xi: float, n_classes: int) -> np.ndarray:
    """xi-weighted mix of teacher rows and one-hot labels; rows still sum to 1."""
    teacher_probs = as_float_array(teacher_probs, "teacher_probs", ndim=2)
    onehot = as_target_matrix(labels, n_classes, teacher_probs.shape[0])
    return float(xi) * teacher_probs + (1.0 - float(xi)) * onehot


def distill(features, labels, teacher_probs, xi: float, lam: float,
            config: ProbeConfig) -> np.ndarray:
    """Fit a student on the xi-mixed objective.

    The xi-weighted sum of the two cross-entropies equals the cross-entropy
    against the mixed target rows, so the same descent path is reused; at
    xi = 0 this coincides with :func:`fit_softmax` on the hard labels.
    """
    features = as_float_array(features, "features", ndim=2)
    n_classes = np.asarray(teacher_probs).shape[1]
    targets = mixed_targets(labels, teacher_probs, xi, n_classes)
    weights, _ = _descend(features, targets, positive_scalar(lam, "lam"), config)
    return weights


def pick_step_size(features, targets, lam: float, config: ProbeConfig,
                   grid=STEP_SIZE_GRID) -> float:
    """Step size from ``grid`` reaching the lowest training loss."""
    best = None
    for step in grid:
        trial = ProbeConfig(lam=config.lam, xi=config.xi, step_size=step,
                            epochs=config.epochs, batch_size=config.batch_size,
                            seed=config.seed)
        arr = np.asarray(targets)
        n_classes = arr.shape[1] if arr.ndim == 2 else int(arr.max()) + 1
        matrix = as_target_matrix(targets, n_classes, np.asarray(features).shape[0])
        try:
            _, info = _descend(as_float_array(features, "features", ndim=2),
                               matrix, lam, trial)
        except StepSizeError:
            continue
        if best is None or info["loss"] < best[1]:
            best = (step, info["loss"])
    if best is None:
        raise StepSizeError("every step size in the grid diverged")
    return best[0]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def accuracy(weights, features, labels) -> float:
    predictions = np.argmax(features @ weights.T, axis=1)
    return float(np.mean(predictions == labels))


def per_class_variability(probabilities, labels, c: int) -> float:
    """Range of the true-class probability over the samples of class ``c``."""
    labels = np.asarray(labels)
    mask = labels == c
    if not np.any(mask):
        raise InvalidInputError(f"class {c} has no samples in the evaluation split")
    values = np.asarray(probabilities)[mask, c]
    return float(values.max() - values.min())


def confusion_profiles(probabilities, labels, n_classes: int) -> np.ndarray:
    """Mean predicted distribution per true class (rows indexed by true class)."""
    labels = as_label_array(labels, "labels", n_classes=n_classes)
    out = np.zeros((n_classes, n_classes))
    for c in range(n_classes):
        mask = labels == c
        if not np.any(mask):
            raise InvalidInputError(f"class {c} has no samples to profile")
        out[c] = np.asarray(probabilities)[mask].mean(axis=0)
    return out


def xi_sweep(dataset: FeatureDataset, corruption: CorruptionSpec, xi_grid,
             config: ProbeConfig) -> list[ProbeResult]:
    """Train one teacher on corrupted labels, then one student per xi.

    Teacher and student share the penalty and the optimizer schedule.  The
    adversarial scheme derives its hard-class sets from a teacher trained on
    the clean labels first.
    """
    xi_grid = [float(x) for x in xi_grid]
    require(len(xi_grid) > 0, "xi grid must be non-empty")
    X_train = dataset.features[dataset.train_idx]
    y_train = dataset.labels[dataset.train_idx]
    X_test = dataset.features[dataset.test_idx]
    y_test = dataset.labels[dataset.test_idx]

    confusion = None
    if corruption.kind == "adversarial":
        clean_weights = fit_softmax(X_train, _padded(y_train, dataset.n_classes),
                                    config.lam, config)
        confusion = confusion_profiles(predict_probabilities(clean_weights, X_train),
                                       y_train, dataset.n_classes)

    observed = corrupt_labels(y_train, corruption, dataset.n_classes,
                              superclass=dataset.superclass, confusion=confusion)
    target_matrix = as_target_matrix(observed, dataset.n_classes, observed.size)
    teacher_weights, teacher_info = _descend(X_train, target_matrix, config.lam, config)
    teacher_probs_train = predict_probabilities(teacher_weights, X_train)
    teacher_probs_test = predict_probabilities(teacher_weights, X_test)
    teacher_acc = accuracy(teacher_weights, X_test, y_test)

    results = []
    for xi in xi_grid:
        mixed = mixed_targets(observed, teacher_probs_train, xi, dataset.n_classes)
        student_weights, student_info = _descend(X_train, mixed, config.lam, config)
        student_probs_test = predict_probabilities(student_weights, X_test)
        student_acc = accuracy(student_weights, X_test, y_test)
        pairs = tuple(
            (per_class_variability(teacher_probs_test, y_test, c),
             per_class_variability(student_probs_test, y_test, c))
            for c in range(dataset.n_classes)
        )
        results.append(ProbeResult(
            xi=xi,
            teacher_test_acc=teacher_acc,
            student_test_acc=student_acc,
            improvement=student_acc - teacher_acc,
            per_class_variability=pairs,
            teacher_grad_norm=teacher_info["grad_norm"],
            student_grad_norm=student_info["grad_norm"],
        ))
    return results


def _padded(labels, n_classes: int) -> np.ndarray:
    """One-hot labels with an explicit class count (some class may be absent)."""
    labels = as_label_array(labels, "labels", n_classes=n_classes)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def gaussian_clusters(n_classes: int = 10, dim: int = 50, train_per_class: int = 500,
                      test_per_class: int = 100, separation: float = 3.0,
                      seed: int = 0, superclass_size: int = 2) -> FeatureDataset:
    """Isotropic Gaussian clusters with configurable mean separation.

    Class means are random directions scaled to norm ``separation``; samples
    add unit-variance noise.  Classes are grouped into consecutive
    superclasses of ``superclass_size`` for the hierarchical scheme (a
    trailing smaller group is tolerated here and rejected only if
    hierarchical corruption actually needs to flip within it).
    """
    require(int(superclass_size) >= 1, "superclass_size must be positive")
    rng = seeding.stream(seed, 2)
    means = rng.standard_normal((n_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    per_split = []
    for count in (train_per_class, test_per_class):
        X = np.vstack([means[c] + rng.standard_normal((count, dim))
                       for c in range(n_classes)])
        y = np.repeat(np.arange(n_classes), count)
        per_split.append((X, y))
    (X_train, y_train), (X_test, y_test) = per_split
    features = np.vstack([X_train, X_test])
    labels = np.concatenate([y_train, y_test])
    n_train = X_train.shape[0]
    return FeatureDataset(
        features=features,
        labels=labels,
        n_classes=n_classes,
        train_idx=np.arange(n_train),
        test_idx=np.arange(n_train, n_train + X_test.shape[0]),
        superclass=np.arange(n_classes) // int(superclass_size),
    )


# ---------------------------------------------------------------------------
# estimator front-ends
# ---------------------------------------------------------------------------

class SoftmaxProbe(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier fit by full-batch gradient descent.

    Parameters mirror :class:`ProbeConfig`; ``alpha`` is the L2 penalty.
    """

    def __init__(self, alpha: float = 1e-3, step_size: float = 0.1,
                 epochs: int = 300, seed: int = 0):
        self.alpha = alpha
        self.step_size = step_size
        self.epochs = epochs
        self.seed = seed

    def _config(self) -> ProbeConfig:
        return ProbeConfig(lam=self.alpha, step_size=self.step_size,
                           epochs=self.epochs, seed=self.seed)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.coef_ = fit_softmax(X, _padded(encoded, self.classes_.size),
                                 self.alpha, self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        if not hasattr(self, "coef_"):
            raise NotFittedError("fit must be called before predict_proba")
        return predict_probabilities(self.coef_, check_array(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class DistilledSoftmaxProbe(SoftmaxProbe):
    """Teacher-then-student softmax pair sharing one penalty.

    Fits a plain probe on the given labels, then refits on the xi-weighted
    mix of that teacher's predicted distributions and the labels.  A
    pre-computed ``teacher_probs`` row matrix may be passed to ``fit``.
    """

    def __init__(self, alpha: float = 1e-3, xi: float = 1.0, step_size: float = 0.1,
                 epochs: int = 300, seed: int = 0):
        super().__init__(alpha=alpha, step_size=step_size, epochs=epochs, seed=seed)
        self.xi = xi

    def fit(self, X, y, teacher_probs=None):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if teacher_probs is None:
            self.teacher_coef_ = fit_softmax(X, _padded(encoded, self.classes_.size),
                                             self.alpha, self._config())
            teacher_probs = predict_probabilities(self.teacher_coef_, X)
        self.coef_ = distill(X, encoded, teacher_probs, self.xi, self.alpha,
                             self._config())
        self.n_features_in_ = X.shape[1]
        return self
