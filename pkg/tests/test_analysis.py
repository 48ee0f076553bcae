import functools

import numpy as np
import pytest

from core import analysis, dafx, datagen
from core.analysis import (
    EmbeddingSet, build_classifier_dataset, cca_project, eval_classifier, eval_e2e, fixed_audio, matcher_hook,
    mmi_from_embeddings, mmi_table, mutual_info, oracle_hook, pca_fit, rf_eval, rf_train,
)
from core.errors import DataError, DegenerateCovariance, SingleClass, UnknownEffect
from core.trainer import encoder_from_checkpoint, matcher_from_checkpoint
from core.types import ParamVector


def test_pca_recovers_axis_variances(rng):
    x = rng.standard_normal((4000, 3)) * np.array([3.0, 1.0, 0.5])
    model = pca_fit(x, 3)
    np.testing.assert_allclose(model.eigenvalues, [9.0, 1.0, 0.25], rtol=0.1)
    assert np.all(np.diff(model.eigenvalues) <= 0)
    assert np.abs(model.components[0, 0]) == pytest.approx(1.0, abs=0.01)


def test_pca_rank_deficient_data(rng):
    base = rng.standard_normal((200, 2))
    x = np.column_stack([base, base.sum(axis=1)])
    assert pca_fit(x, 3).eigenvalues[2] < 1e-10


def test_pca_transform_is_centred(rng):
    x = rng.standard_normal((50, 4)) + 7.0
    projected = pca_fit(x, 2).transform(x)
    np.testing.assert_allclose(projected.mean(axis=0), 0.0, atol=1e-10)


def test_pca_needs_rows(rng):
    with pytest.raises(DataError):
        pca_fit(rng.standard_normal((3, 5)), 3)


def _blobs(rng, n_per=100, classes=("a", "b", "c", "d"), spread=0.3):
    centres = rng.standard_normal((len(classes), 6)) * 10
    matrix = np.concatenate([c + spread * rng.standard_normal((n_per, 6)) for c in centres])
    labels = np.repeat(np.array(classes), n_per)
    return EmbeddingSet(matrix, labels)


def test_forest_separates_blobs(rng):
    data = _blobs(rng)
    order = rng.permutation(len(data))
    train, test = data.subset(order[:300]), data.subset(order[300:])
    report = rf_eval(rf_train(train, trees=20, seed=0), test)
    assert report.accuracy == 1.0
    assert report.f1_macro == pytest.approx(1.0)
    assert report.confusion.sum() == 100
    assert set(report.per_class_accuracy) == {"a", "b", "c", "d"}


def test_forest_on_shuffled_labels_is_near_chance(rng):
    data = _blobs(rng)
    shuffled = EmbeddingSet(rng.standard_normal((400, 6)), rng.permutation(data.labels))
    report = rf_eval(rf_train(shuffled.subset(np.arange(300)), trees=20), shuffled.subset(np.arange(300, 400)))
    assert report.accuracy < 0.45


def test_forest_needs_two_classes(rng):
    with pytest.raises(SingleClass):
        rf_train(EmbeddingSet(rng.standard_normal((10, 2)), np.array(["a"] * 10)))


def test_embedding_set_checks_rows(rng):
    with pytest.raises(DataError):
        EmbeddingSet(rng.standard_normal((4, 2)), np.array(["a", "b"]))


def test_cca_finds_a_linear_relation(rng):
    x = rng.standard_normal((500, 5))
    y = x[:, :2] @ np.array([[1.0, 0.5], [-0.3, 2.0]])
    result = cca_project(x, y, k=2)
    assert result.correlations[0] > 0.999
    assert result.projected.shape == (500, 2)


def test_cca_independent_data_is_weakly_correlated(rng):
    result = cca_project(rng.standard_normal((5000, 8)), rng.uniform(size=(5000, 2)), k=2)
    assert np.all(result.correlations <= 0.2)
    assert np.all(np.diff(result.correlations) <= 0)


def test_cca_singular_covariance(rng):
    base = rng.standard_normal((100, 2))
    x = np.column_stack([base, base[:, 0]])
    with pytest.raises(DegenerateCovariance):
        cca_project(x, rng.standard_normal((100, 2)), k=1, ridge=0.0)


def test_cca_preconditions(rng):
    with pytest.raises(DataError):
        cca_project(rng.standard_normal((5, 4)), rng.standard_normal((5, 2)))
    with pytest.raises(DataError):
        cca_project(rng.standard_normal((50, 4)), rng.standard_normal((50, 2)), k=3)


def test_mutual_information_oracles(rng):
    a = rng.uniform(size=10000)
    assert mutual_info(a, a) > 3.0
    assert mutual_info(a, rng.uniform(size=10000)) < 0.08
    b = a + 0.1 * rng.standard_normal(10000)
    assert mutual_info(a, b) == pytest.approx(mutual_info(b, a))
    with pytest.raises(DataError):
        mutual_info(a, a[:-1])


def test_mmi_ranks_the_encoded_parameter_first(rng):
    thetas = rng.uniform(size=(3000, 3))
    embeddings = np.column_stack([thetas[:, 1], rng.standard_normal((3000, 4))])
    report = mmi_from_embeddings(embeddings, thetas, ["x", "y", "z"], "synthetic")
    assert report.rows[0][0] == "y"
    assert report.rows[0][1] > 1.0
    assert report.as_dict()["y"] == report.rows[0][1]
    assert len(report.correlations) == 2


def test_mmi_is_small_without_information(rng):
    report = mmi_from_embeddings(rng.standard_normal((10000, 8)), rng.uniform(size=(10000, 3)), ["a", "b", "c"])
    assert max(v for _, v in report.rows) < 0.1


def test_mmi_needs_one_name_per_column(rng):
    with pytest.raises(DataError):
        mmi_from_embeddings(rng.standard_normal((50, 4)), rng.uniform(size=(50, 2)), ["only"])


def test_fixed_audio_is_seeded(tiny_cfg):
    a, b = fixed_audio(tiny_cfg), fixed_audio(tiny_cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert len(a) == tiny_cfg.datagen.segment_len
    assert a.peak == pytest.approx(10 ** (-12 / 20))


def test_mmi_table_with_trained_encoder(trained_vae, session_cfg):
    encoder = encoder_from_checkpoint(trained_vae.checkpoint)
    report = mmi_table("overdrive", encoder, session_cfg)
    assert [name for name, _ in sorted(report.rows)] == ["drive", "muffle", "output_db"]
    assert all(v >= 0.0 for _, v in report.rows)


def test_classifier_comparison(trained_vae, session_cfg, session_corpus):
    dataset = build_classifier_dataset(session_cfg, session_corpus)
    assert dataset.specs.shape == (48, 33, 31)
    comparison = eval_classifier(dataset, encoder_from_checkpoint(trained_vae.checkpoint), session_cfg)
    assert comparison.n_train + comparison.n_test == 48
    for report in (comparison.encoder, comparison.pca):
        assert 0.0 <= report.accuracy <= 1.0
        assert report.confusion.sum() == comparison.n_test
        assert len(report.labels) == 6


def test_classifier_dataset_subset(session_cfg, session_corpus):
    dataset = build_classifier_dataset(session_cfg, session_corpus, effects=["delay", "ringmod"], per_effect=3)
    assert dataset.labels.tolist() == ["delay"] * 3 + ["ringmod"] * 3
    assert len(dataset.thetas) == 6


def test_oracle_parameters_score_zero_for_a_unity_trim(tiny_cfg, corpus, monkeypatch):
    descriptor = dafx.get_descriptor("dynamics")
    trim = ParamVector.of("dynamics", [0.5] * descriptor.num_params).replace(descriptor.index("mix"), 0.0)
    monkeypatch.setattr(analysis, "generate_examples", functools.partial(datagen.generate_examples, theta=trim))
    report = eval_e2e("dynamics", oracle_hook, corpus, tiny_cfg)
    assert report.model == pytest.approx(0.0, abs=1e-6)
    assert report.random > report.model


def test_oracle_scoring_runs_on_every_example(tiny_cfg, corpus):
    report = eval_e2e("delay", oracle_hook, corpus, tiny_cfg)
    assert np.isfinite(report.model)
    assert len(report.rows) == tiny_cfg.analysis.eval_examples
    assert report.baseline > 0.0


def test_baseline_and_random_ignore_the_model(tiny_cfg, corpus):
    def centre(examples):
        return np.full((len(examples), 3), 0.5)

    oracle = eval_e2e("ringmod", oracle_hook, corpus, tiny_cfg)
    fixed = eval_e2e("ringmod", centre, corpus, tiny_cfg)
    assert fixed.baseline == oracle.baseline
    assert fixed.random == oracle.random


def test_eval_with_trained_matcher(trained_e2e, session_cfg, session_corpus):
    hook = matcher_hook(matcher_from_checkpoint(trained_e2e.checkpoint), session_cfg)
    report = eval_e2e("overdrive", hook, session_corpus, session_cfg, n=2)
    assert len(report.rows) == 2
    assert report.summary()["n"] == 2
    assert np.isfinite(report.model)


def test_eval_unknown_effect(tiny_cfg, corpus):
    with pytest.raises(UnknownEffect):
        eval_e2e("wah", oracle_hook, corpus, tiny_cfg)
