import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import ConfigError, ContractError, DatasetError, DegenerateDataError
from app.schemas.reports import EvalReport, SplitSummary
from app.schemas.training import HeadConfig, TrainConfig
from app.services.classifier_service import classifier_service
from app.services.evaluation_service import evaluation_service
from app.services.inference_service import inference_service
from app.services.training_service import training_service


def index_for(net, dataset):
    embeddings = inference_service.embed_images(net, dataset.pixels)
    return classifier_service.build_index(embeddings, dataset.labels, dataset.class_names)


# ============================================================================
# CONFUSION
# ============================================================================

def test_accuracy_from_confusion():
    confusion = np.diag([180, 181, 182, 181, 181])
    confusion[0, 1] = 10
    confusion[2, 3] = 20
    report = EvalReport.from_confusion(confusion, list("abcde"))
    assert confusion.sum() == 935
    assert report.accuracy == 905 / 935
    assert report.accuracy == pytest.approx(0.9679, abs=1e-4)


def test_confusion_must_be_square():
    with pytest.raises(ValueError):
        EvalReport(accuracy=1.0, confusion=np.zeros((2, 3)), class_names=["a", "b"])


def test_perfect_predictor(tiny_net, tiny_dataset):
    report = evaluation_service.evaluate(tiny_net, index_for(tiny_net, tiny_dataset), tiny_dataset, k=1)
    assert report.accuracy == 1.0
    assert np.array_equal(report.confusion, np.diag(tiny_dataset.class_counts()))


def test_confusion_matches_tally(tiny_net, tiny_dataset):
    train = tiny_dataset.subset(range(0, len(tiny_dataset), 2))
    test = tiny_dataset.subset(range(1, len(tiny_dataset), 2))
    index = index_for(tiny_net, train)
    report = evaluation_service.evaluate(tiny_net, index, test, k=3)

    predicted = classifier_service.knn_predict(index, inference_service.embed_images(tiny_net, test.pixels), k=3).class_ids
    tally = np.zeros((4, 4), dtype=np.int64)
    for t, p in zip(test.labels, predicted):
        tally[t, p] += 1
    assert np.array_equal(report.confusion, tally)
    assert report.confusion.sum(axis=1).tolist() == test.class_counts()
    assert report.accuracy == np.trace(tally) / tally.sum()


def test_evaluate_with_head(tiny_net, tiny_dataset):
    head = training_service.train_classifier_head(tiny_net, tiny_dataset, HeadConfig(hidden=8, epochs=2))
    report = evaluation_service.evaluate(tiny_net, head, tiny_dataset)
    assert report.total == len(tiny_dataset)
    assert report.class_names == tiny_dataset.class_names


def test_unknown_test_class(tiny_net, tiny_dataset):
    partial = tiny_dataset.select_classes(["class_00", "class_01"])
    with pytest.raises(ConfigError):
        evaluation_service.evaluate(tiny_net, index_for(tiny_net, partial), tiny_dataset)


def test_extra_index_classes_widen_the_matrix(tiny_net, tiny_dataset):
    partial = tiny_dataset.select_classes(["class_01", "class_02"])
    report = evaluation_service.evaluate(tiny_net, index_for(tiny_net, tiny_dataset), partial)
    assert report.class_names == ["class_01", "class_02", "class_00", "class_03"]
    assert report.confusion[2:].sum() == 0


# ============================================================================
# REPEATED SPLITS
# ============================================================================

@pytest.fixture
def quick_train():
    return TrainConfig(epochs=1, P=4, K=2, seed=3)


def test_single_run_summary(tiny_dataset, tiny_config, quick_train):
    summary = evaluation_service.repeated_splits(tiny_dataset, tiny_config, quick_train, runs=1)
    assert summary.runs == 1
    assert summary.mean == summary.max == summary.accuracies[0]
    assert summary.seeds == [3]


def test_repeated_runs_replay(tiny_dataset, tiny_config, quick_train):
    first = evaluation_service.repeated_splits(tiny_dataset, tiny_config, quick_train, runs=3, seeds=[1, 2, 3])
    second = evaluation_service.repeated_splits(tiny_dataset, tiny_config, quick_train, runs=3, seeds=[1, 2, 3])
    assert first.accuracies == second.accuracies
    assert first.mean <= first.max


def test_seed_count_must_match_runs(tiny_dataset, tiny_config, quick_train):
    with pytest.raises(ContractError):
        evaluation_service.repeated_splits(tiny_dataset, tiny_config, quick_train, runs=2, seeds=[1])


def test_split_runs_need_positive_k(tiny_dataset, tiny_config, quick_train):
    with pytest.raises(ContractError):
        evaluation_service.repeated_splits(tiny_dataset, tiny_config, quick_train, runs=1, k=0)


def test_summary_limits():
    with pytest.raises(ValueError):
        SplitSummary(accuracies=[])
    with pytest.raises(ValueError):
        SplitSummary(accuracies=[0.5, 1.2])


@pytest.mark.parametrize("runs", [3, 16])
@pytest.mark.parametrize("correct", range(41))
def test_repeated_accuracy_mean_stays_under_max(runs, correct):
    summary = SplitSummary(accuracies=[correct / 40] * runs)
    assert summary.mean <= summary.max
    assert summary.mean == pytest.approx(correct / 40)


def test_summary_csv_mean_row_under_max(tmp_path):
    summary = SplitSummary(accuracies=[0.1] * 3, seeds=[0, 1, 2])
    assert summary.mean == summary.max == 0.1
    df = pd.read_csv(evaluation_service.export_csv(summary, tmp_path / "s.csv"))
    mean_row, max_row = df["accuracy"].tolist()[-2:]
    assert mean_row <= max_row


# ============================================================================
# FEW-SHOT ENROLLMENT
# ============================================================================

def test_fewshot_matches_hand_tally(tiny_net, tiny_dataset):
    novel = tiny_dataset.select_classes(["class_02", "class_03"]).subset([0, 1, 2, 3, 6, 7, 8, 9])
    base = tiny_dataset.select_classes(["class_00", "class_01"])
    report = evaluation_service.fewshot_enroll_eval(tiny_net, novel, shots=2, base=base)
    assert report.total == 4

    index = index_for(tiny_net, base)
    enrolled = novel.subset([0, 1, 4, 5])
    index = classifier_service.build_index(
        inference_service.embed_images(tiny_net, enrolled.pixels), enrolled.labels, enrolled.class_names, index=index)
    held = novel.subset([2, 3, 6, 7])
    names = classifier_service.knn_predict(index, inference_service.embed_images(tiny_net, held.pixels)).names()
    correct = sum(n == novel.class_names[label] for n, label in zip(names, held.labels))
    assert report.accuracy == correct / 4


def test_fewshot_without_base(tiny_net, tiny_dataset):
    report = evaluation_service.fewshot_enroll_eval(tiny_net, tiny_dataset, shots=2)
    assert report.total == len(tiny_dataset) - 2 * tiny_dataset.num_classes


def test_fewshot_nothing_held_out(tiny_net, tiny_dataset):
    with pytest.raises(ContractError):
        evaluation_service.fewshot_enroll_eval(tiny_net, tiny_dataset, shots=6)


def test_fewshot_too_few_images(tiny_net, tiny_dataset):
    with pytest.raises(DatasetError):
        evaluation_service.fewshot_enroll_eval(tiny_net, tiny_dataset, shots=4)


def test_fewshot_needs_positive_k(tiny_net, tiny_dataset):
    with pytest.raises(ContractError):
        evaluation_service.fewshot_enroll_eval(tiny_net, tiny_dataset, shots=2, k=0)


def test_fewshot_classes_must_be_new(tiny_net, tiny_dataset):
    with pytest.raises(ConfigError):
        evaluation_service.fewshot_enroll_eval(tiny_net, tiny_dataset, shots=2, base=tiny_dataset)


# ============================================================================
# PCA
# ============================================================================

def test_points_on_a_line():
    t = np.linspace(-2, 3, 9)
    points = np.outer(t, [1.0, 2.0, -1.0])
    proj = evaluation_service.pca_project(points)
    np.testing.assert_allclose(proj.coords[:, 1], 0, atol=1e-9)
    assert proj.explained_variance[0] == pytest.approx(1.0)


def test_symmetric_points_keep_distance():
    v = np.array([0.6, -0.8, 0.0])
    proj = evaluation_service.pca_project(np.stack([v, -v, np.zeros(3)]))
    assert np.linalg.norm(proj.coords[0] - proj.coords[1]) == pytest.approx(2.0)


def test_components_match_eigen_solver(rng):
    x = rng.normal(size=(20, 8)) * np.array([5, 3, 1, 1, 0.5, 0.5, 0.2, 0.1])
    proj = evaluation_service.pca_project(x)
    centered = x - x.mean(axis=0)
    values, vectors = np.linalg.eigh(centered.T @ centered / 20)
    order = np.argsort(values)[::-1]
    for i in range(2):
        assert abs(proj.components[i] @ vectors[:, order[i]]) == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(proj.components @ proj.components.T, np.eye(2), atol=1e-8)
    np.testing.assert_allclose(proj.coords.mean(axis=0), 0, atol=1e-9)
    assert 1 >= proj.explained_variance[0] >= proj.explained_variance[1] >= 0


def test_component_signs_are_pinned(rng):
    proj = evaluation_service.pca_project(rng.normal(size=(10, 4)))
    for c in proj.components:
        assert c[np.argmax(np.abs(c))] > 0


def test_identical_rows_are_degenerate():
    with pytest.raises(DegenerateDataError):
        evaluation_service.pca_project(np.ones((5, 3)))


def test_pca_needs_three_rows():
    with pytest.raises(ContractError):
        evaluation_service.pca_project(np.eye(2))


def test_separation_ratio():
    e = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    ratio = evaluation_service.separation_ratio(e, [0, 0, 1, 1])
    inter = (10 + 10 + 2 * np.sqrt(101)) / 4
    assert ratio == pytest.approx(inter / 1.0)


# ============================================================================
# CSV
# ============================================================================

def test_confusion_csv_layout(tmp_path):
    report = EvalReport.from_confusion(np.array([[3, 1], [0, 4]]), ["a", "b"])
    path = evaluation_service.export_csv(report, tmp_path / "confusion.csv")
    assert path.read_bytes() == b",a,b\na,3,1\nb,0,4\n"


def test_reexport_is_byte_identical(tmp_path):
    report = EvalReport.from_confusion(np.array([[5, 0, 1], [2, 7, 0], [0, 0, 9]]), ["x", "y", "z"])
    first = evaluation_service.export_csv(report, tmp_path / "one.csv").read_bytes()
    second = evaluation_service.export_csv(report, tmp_path / "two.csv").read_bytes()
    assert first == second


def test_confusion_parse_back(tmp_path):
    report = EvalReport.from_confusion(np.array([[5, 0, 1], [2, 7, 0], [0, 0, 9]]), ["x", "y", "z"])
    parsed = evaluation_service.read_confusion_csv(evaluation_service.export_csv(report, tmp_path / "c.csv"))
    assert parsed.accuracy == report.accuracy
    assert parsed.class_names == ["x", "y", "z"]


def test_summary_csv(tmp_path):
    summary = SplitSummary(accuracies=[0.5, 1.0, 0.75], seeds=[0, 1, 2])
    df = pd.read_csv(evaluation_service.export_csv(summary, tmp_path / "s.csv"))
    assert list(df.columns) == ["run", "accuracy"]
    assert df["run"].astype(str).tolist() == ["1", "2", "3", "mean", "max"]
    assert df["accuracy"].tolist()[-2:] == [0.75, 1.0]


def test_projection_csv(tmp_path, rng):
    proj = evaluation_service.pca_project(rng.normal(size=(6, 3)), labels=list("aabbcc"))
    df = pd.read_csv(evaluation_service.export_csv(proj, tmp_path / "p.csv"))
    assert list(df.columns) == ["x", "y", "label"]
    assert df["label"].tolist() == list("aabbcc")
    np.testing.assert_allclose(df[["x", "y"]].to_numpy(), proj.coords)


def test_export_rejects_other_objects(tmp_path):
    with pytest.raises(ContractError):
        evaluation_service.export_csv({"a": 1}, tmp_path / "x.csv")
