"""Embedding-quality and style-matching evaluation.

- PCA baseline features and a random-forest effect classifier, comparing
  encoder embeddings against PCA of the raw spectrograms.
- CCA of embeddings against effect parameters and the per-parameter
  maximum mutual information (MMI) over the canonical axes.
- End-to-end MRSTFT scores of the style matcher against the no-effect
  baseline and a random-parameter condition.

Embeddings are always the deterministic mu vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
from sklearn.decomposition import PCA
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, mutual_info_score
from sklearn.model_selection import train_test_split
from tqdm import tqdm

from . import dafx
from .audio import level_match, peak_normalize
from .config import RunConfig
from .controller import StyleMatcher
from .datagen import Corpus, generate_examples, synth_source
from .errors import ConfigError, DataError, DegenerateCovariance, SingleClass
from .losses import mrstft
from .trainer import spectrograms
from .types import AudioBuffer, PairedExample, ParamVector, SourceKind
from .utils import derive_rng
from .vae import SpectroVae

log = logging.getLogger(__name__)

STREAM_CLASSIFIER = 41
STREAM_MMI = 42
STREAM_EVAL = 43
STREAM_RANDOM_THETA = 44
STREAM_FIXED_AUDIO = 45

_CHUNK = 64


@dataclass
class EmbeddingSet:
    """Feature rows with their effect labels and (optionally) parameters."""
    matrix: np.ndarray
    labels: np.ndarray
    thetas: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.matrix.ndim != 2 or self.labels.shape != (self.matrix.shape[0],):
            raise DataError(f"embedding matrix {self.matrix.shape} does not match {self.labels.shape[0]} labels")
        if self.thetas is not None and np.shape(self.thetas)[0] != self.matrix.shape[0]:
            raise DataError("theta rows do not match embedding rows")

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def subset(self, index: np.ndarray) -> "EmbeddingSet":
        thetas = None if self.thetas is None else np.asarray(self.thetas)[index]
        return EmbeddingSet(self.matrix[index], self.labels[index], thetas)


@dataclass
class PcaModel:
    mean:        np.ndarray
    components:  np.ndarray
    eigenvalues: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


@dataclass
class ClassifierReport:
    """Hold-out classification scores; per-class accuracy is per-class recall."""
    labels:             list[str]
    accuracy:           float
    f1_macro:           float
    per_class_accuracy: dict[str, float]
    per_class_f1:       dict[str, float]
    confusion:          np.ndarray

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "per_class_accuracy": self.per_class_accuracy,
            "per_class_f1": self.per_class_f1,
        }


@dataclass
class ClassifierComparison:
    encoder: ClassifierReport
    pca:     ClassifierReport
    n_train: int
    n_test:  int


@dataclass
class CcaResult:
    projected:    np.ndarray
    correlations: np.ndarray
    x_weights:    np.ndarray


@dataclass
class MmiReport:
    """Per-parameter MMI in nats, rows sorted by MMI descending."""
    effect_id:    str
    rows:         list[tuple[str, float]]
    correlations: list[float] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return dict(self.rows)


@dataclass
class E2eReport:
    """Mean MRSTFT against truth_seg per condition."""
    effect_id: str
    model:     float
    baseline:  float
    random:    float
    rows:      list[tuple[int, float, float, float]] = field(default_factory=list)

    def summary(self) -> dict:
        return {"effect_id": self.effect_id, "n": len(self.rows),
                "model": self.model, "baseline": self.baseline, "random": self.random}


# ----- PCA and the random forest ------------------------------------------

def pca_fit(x: np.ndarray, k: int) -> PcaModel:
    """Principal components of the rows of `x`.

    Eigenvalues are the sample variances along each component, non-increasing;
    rank-deficient data shows up as zero eigenvalues.

    Raises:
      DataError: Fewer rows than requested components + 1.
    """
    x = np.asarray(x)
    n, d = x.shape
    if n <= k or k > d:
        raise DataError(f"pca of {k} components needs more than {k} rows and at least {k} columns, got {x.shape}")
    pca = PCA(n_components=k, svd_solver="full").fit(x)
    return PcaModel(pca.mean_.astype(np.float64), pca.components_.astype(np.float64),
                    np.maximum(pca.explained_variance_.astype(np.float64), 0.0))


def rf_train(train: EmbeddingSet, trees: int = 100, max_depth: int = 16, seed: int = 0) -> RandomForestClassifier:
    """Fit a Gini random forest with bootstrap sampling and √D features per split.

    Raises:
      SingleClass: The training labels hold fewer than two classes.
    """
    if np.unique(train.labels).size < 2:
        raise SingleClass("random forest needs at least two classes in the training set")
    forest = RandomForestClassifier(
        n_estimators=trees,
        criterion="gini",
        bootstrap=True,
        max_features="sqrt",
        max_depth=max_depth,
        random_state=seed,
    )
    return forest.fit(train.matrix, train.labels)


def rf_eval(forest: RandomForestClassifier, test: EmbeddingSet) -> ClassifierReport:
    labels = [str(c) for c in forest.classes_]
    predicted = forest.predict(test.matrix)
    matrix = confusion_matrix(test.labels, predicted, labels=forest.classes_)
    support = matrix.sum(axis=1)
    recall = np.divide(np.diag(matrix), support, out=np.zeros(len(labels)), where=support > 0)
    f1 = f1_score(test.labels, predicted, labels=forest.classes_, average=None, zero_division=0)
    return ClassifierReport(
        labels=labels,
        accuracy=float(accuracy_score(test.labels, predicted)),
        f1_macro=float(np.mean(f1)),
        per_class_accuracy={c: float(r) for c, r in zip(labels, recall)},
        per_class_f1={c: float(v) for c, v in zip(labels, f1)},
        confusion=matrix,
    )


# ----- CCA and mutual information -----------------------------------------

def _inverse_sqrt(cov: np.ndarray, which: str) -> np.ndarray:
    evals, evecs = la.eigh(cov)
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
        raise DegenerateCovariance(f"{which} covariance is singular even after the ridge")
    return (evecs / np.sqrt(evals)) @ evecs.T


def cca_project(x: np.ndarray, y: np.ndarray, k: int = 2, ridge: float = 1e-6) -> CcaResult:
    """Project `x` onto its top-k canonical directions against `y`.

    Both covariances get ridge · mean(diagonal) added before whitening.

    Raises:
      DataError: Too few rows, or k exceeds either dimension.
      DegenerateCovariance: A covariance stays singular after the ridge.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, dx = x.shape
    dy = y.shape[1]
    if y.shape[0] != n:
        raise DataError(f"cca rows differ: {n} vs {y.shape[0]}")
    if n <= dx + dy:
        raise DataError(f"cca needs more than {dx + dy} rows, got {n}")
    if not 1 <= k <= min(dx, dy):
        raise DataError(f"cca k={k} must lie in [1, {min(dx, dy)}]")

    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cxx = xc.T @ xc / (n - 1)
    cyy = yc.T @ yc / (n - 1)
    cxy = xc.T @ yc / (n - 1)
    cxx += ridge * np.mean(np.diag(cxx)) * np.eye(dx)
    cyy += ridge * np.mean(np.diag(cyy)) * np.eye(dy)

    isqrt_x = _inverse_sqrt(cxx, "embedding")
    isqrt_y = _inverse_sqrt(cyy, "parameter")
    u, s, _ = la.svd(isqrt_x @ cxy @ isqrt_y, full_matrices=False)
    weights = isqrt_x @ u[:, :k]
    return CcaResult(xc @ weights, np.clip(s[:k], 0.0, 1.0), weights)


def mutual_info(a: np.ndarray, b: np.ndarray, bins: int = 32) -> float:
    """Histogram mutual information in nats over equal-width bins.

    A variable with zero range carries no information: the result is 0.

    Examples:
      >>> mutual_info(np.arange(100.0), np.ones(100))
      0.0
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DataError(f"mutual_info inputs differ in length: {a.size} vs {b.size}")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return 0.0
    counts = np.histogram2d(a, b, bins=bins)[0].astype(np.int64)
    return max(0.0, float(mutual_info_score(None, None, contingency=counts)))


def mmi_from_embeddings(
        embeddings: np.ndarray,
        thetas: np.ndarray,
        param_names: Sequence[str],
        effect_id: str = "",
        bins: int = 32,
        k: int = 2,
        ridge: float = 1e-6,
    ) -> MmiReport:
    """MMI per parameter: max over the k CCA axes of mutual_info(param, axis)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.shape[1] != len(param_names):
        raise DataError(f"{thetas.shape[1]} theta columns for {len(param_names)} parameter names")
    cca = cca_project(embeddings, thetas, k=min(k, thetas.shape[1]), ridge=ridge)
    rows = [
        (name, max(mutual_info(thetas[:, j], cca.projected[:, axis], bins) for axis in range(cca.projected.shape[1])))
        for j, name in enumerate(param_names)
    ]
    rows.sort(key=lambda r: r[1], reverse=True)
    return MmiReport(effect_id, rows, [float(c) for c in cca.correlations])


def fixed_audio(cfg: RunConfig) -> AudioBuffer:
    """The single seeded harmonic source processed by `mmi_table`."""
    rng = derive_rng(cfg.seed, STREAM_FIXED_AUDIO)
    source = synth_source(rng, SourceKind.HARMONIC, cfg.datagen.sample_rate, cfg.datagen.segment_len)
    return peak_normalize(source)


def mmi_table(effect_id: str, encoder: SpectroVae, cfg: RunConfig, n: Optional[int] = None,
              progress: bool = False) -> MmiReport:
    """Embed n random-θ renditions of one fixed segment and tabulate MMI.

    Raises:
      UnknownEffect: effect_id is not registered.
      DegenerateCovariance: The embeddings do not vary enough for CCA.
    """
    descriptor = dafx.get_descriptor(effect_id)
    n = cfg.analysis.mmi_examples if n is None else n
    stft = cfg.stft.to_stft()
    audio = fixed_audio(cfg)

    thetas = np.zeros((n, descriptor.num_params))
    embeddings = np.zeros((n, encoder.latent_dim))
    for start in tqdm(range(0, n, _CHUNK), desc=f"mmi {effect_id}", disable=not progress):
        chunk = range(start, min(n, start + _CHUNK))
        segments = []
        for i in chunk:
            theta = dafx.random_theta(effect_id, derive_rng(cfg.seed, STREAM_MMI, i))
            thetas[i] = theta.values
            segments.append(level_match(dafx.process(effect_id, audio, theta)))
        embeddings[start:start + len(chunk)] = encoder.embed(spectrograms(segments, stft))

    report = mmi_from_embeddings(
        embeddings, thetas, descriptor.param_names, effect_id,
        bins=cfg.analysis.mi_bins, k=cfg.analysis.cca_components, ridge=cfg.analysis.cca_ridge,
    )
    log.info("mmi %s: %s", effect_id, ", ".join(f"{name} {v:.3f}" for name, v in report.rows))
    return report


# ----- Classifier comparison ----------------------------------------------

@dataclass
class ClassifierDataset:
    """Effected spectrograms (flattened) with their effect labels."""
    specs:  np.ndarray
    labels: np.ndarray
    thetas: list[np.ndarray]


def build_classifier_dataset(cfg: RunConfig, corpus: Corpus, effects: Optional[Sequence[str]] = None,
                             per_effect: Optional[int] = None, progress: bool = False) -> ClassifierDataset:
    """Generate `per_effect` truth segments for each effect."""
    effects = list(cfg.vae.effects if effects is None else effects)
    per_effect = cfg.analysis.classifier_examples_per_effect if per_effect is None else per_effect
    stft = cfg.stft.to_stft()
    specs, labels, thetas = [], [], []
    for k, effect_id in enumerate(effects):
        examples = generate_examples(
            corpus, effect_id, per_effect, cfg.seed, (STREAM_CLASSIFIER, k),
            workers=cfg.datagen.workers, retries=cfg.datagen.example_retries, progress=progress,
        )
        specs.append(spectrograms([e.truth_seg for e in examples], stft))
        labels.extend([effect_id] * len(examples))
        thetas.extend(e.theta.values for e in examples)
    return ClassifierDataset(np.concatenate(specs), np.asarray(labels), thetas)


def eval_classifier(dataset: ClassifierDataset, encoder: SpectroVae, cfg: RunConfig) -> ClassifierComparison:
    """Random-forest accuracy on encoder embeddings vs PCA spectrogram features.

    Both feature sets share one stratified train/test split; PCA is fitted on
    the training rows only.
    """
    acfg = cfg.analysis
    index = np.arange(dataset.labels.shape[0])
    train_idx, test_idx = train_test_split(
        index, test_size=acfg.test_fraction, stratify=dataset.labels, random_state=cfg.seed,
    )
    embedded = EmbeddingSet(encoder.embed(dataset.specs), dataset.labels)

    flat = dataset.specs.reshape(dataset.specs.shape[0], -1)
    k = min(acfg.pca_components, train_idx.size - 1, flat.shape[1])
    pca = pca_fit(flat[train_idx], k)
    reduced = EmbeddingSet(pca.transform(flat), dataset.labels)

    reports = []
    for features in (embedded, reduced):
        forest = rf_train(features.subset(train_idx), acfg.rf_trees, acfg.rf_max_depth, cfg.seed)
        reports.append(rf_eval(forest, features.subset(test_idx)))
    log.info("classifier accuracy: encoder %.3f, pca %.3f", reports[0].accuracy, reports[1].accuracy)
    return ClassifierComparison(reports[0], reports[1], int(train_idx.size), int(test_idx.size))


# ----- End-to-end evaluation ----------------------------------------------

ThetaHook = Callable[[Sequence[PairedExample]], np.ndarray]


def matcher_hook(model: StyleMatcher, cfg: RunConfig) -> ThetaHook:
    """θ̂ predictions of a trained style matcher for a list of examples."""
    stft = cfg.stft.to_stft()

    def predict(examples: Sequence[PairedExample]) -> np.ndarray:
        return model.predict(spectrograms([e.input_seg for e in examples], stft),
                             spectrograms([e.ref_seg for e in examples], stft))
    return predict


def oracle_hook(examples: Sequence[PairedExample]) -> np.ndarray:
    """Ground-truth parameters, for checking the scoring path."""
    return np.stack([e.theta.values for e in examples])


def eval_e2e(effect_id: str, predict: ThetaHook, corpus: Corpus, cfg: RunConfig,
             n: Optional[int] = None, progress: bool = False) -> E2eReport:
    """Mean MRSTFT vs truth_seg for the model, the untouched input and random θ.

    The model output is process(input_seg, θ̂); the baseline compares
    input_seg directly and does not depend on `predict`.
    """
    dafx.get_descriptor(effect_id)
    n = cfg.analysis.eval_examples if n is None else n
    if n < 1:
        raise ConfigError("eval_e2e needs at least one example")
    examples = generate_examples(
        corpus, effect_id, n, cfg.seed, (STREAM_EVAL,),
        workers=cfg.datagen.workers, retries=cfg.datagen.example_retries, progress=progress,
    )

    rows = []
    for start in tqdm(range(0, n, _CHUNK), desc=f"eval {effect_id}", disable=not progress):
        chunk = examples[start:start + _CHUNK]
        thetas = np.clip(np.asarray(predict(chunk), dtype=np.float64), 0.0, 1.0)
        for offset, (example, theta) in enumerate(zip(chunk, thetas)):
            i = start + offset
            output = dafx.process(effect_id, example.input_seg, ParamVector(effect_id, theta))
            random_theta = dafx.random_theta(effect_id, derive_rng(cfg.seed, STREAM_RANDOM_THETA, i))
            random_out = dafx.process(effect_id, example.input_seg, random_theta)
            rows.append((
                i,
                mrstft(output, example.truth_seg, cfg.mrstft),
                mrstft(example.input_seg, example.truth_seg, cfg.mrstft),
                mrstft(random_out, example.truth_seg, cfg.mrstft),
            ))

    means = np.mean(np.array([r[1:] for r in rows]), axis=0)
    report = E2eReport(effect_id, float(means[0]), float(means[1]), float(means[2]), rows)
    log.info("eval %s over %d pairs: model %.4f, baseline %.4f, random %.4f",
             effect_id, n, report.model, report.baseline, report.random)
    return report
