import math

import numpy as np
import pytest

import pulse_lab as pl


def test_lorenz_drift_by_substitution():
    s, beta, rho = 28.0, 8.0 / 3.0, 28.0
    y = [1.0, 2.0, 3.0]
    expected = [s * (y[1] - y[0]), y[0] * (rho - y[2]) - y[1], y[0] * y[1] - beta * y[2]]
    assert pl.drift("lorenz", rho, y) == pytest.approx(expected, rel=1e-15)


def test_integrate_shape_and_determinism():
    a = pl.integrate("lorenz", 28.0, 1.0, [1.0, 1.0, 1.0], 600, 4)
    b = pl.integrate("lorenz", 28.0, 1.0, [1.0, 1.0, 1.0], 600, 4)
    assert a.shape == (400, 3)
    assert np.array_equal(a, b)


def test_dataset_structure():
    ds = pl.build_dataset("lorenz", 0.5, n_classes=3, window=20, trials=2, steps=1200, seed=3)
    assert ds["windows"].shape[1:] == (20, 3)
    assert sorted(set(ds["labels"])) == [0, 1, 2]
    assert set(ds["splits"]) == {"train", "val", "test"}
    assert ds["class_params"] == sorted(ds["class_params"])


def test_theorem_report_has_no_counterexamples():
    report = pl.verify_theorem(4)
    assert report["counterexamples"] == []
    with pytest.raises(ValueError):
        pl.verify_theorem(1)


def test_adamw_matches_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(50, 3)).tolist()
    ours = pl.adamw_trajectory([0.5, -1.0, 2.0], grads, 0.01, 0.1)
    w = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64, requires_grad=True)
    opt = torch.optim.AdamW([w], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1)
    for k, g in enumerate(grads):
        w.grad = torch.tensor(g, dtype=torch.float64)
        opt.step()
        assert np.max(np.abs(np.array(ours[k]) - w.detach().numpy())) < 1e-12


def test_one_cycle_endpoints():
    assert pl.one_cycle_lr(0, 100, 1e-3) == pytest.approx(1e-3 / 25)
    assert pl.one_cycle_lr(30, 100, 1e-3) == pytest.approx(1e-3)
    assert pl.one_cycle_lr(99, 100, 1e-3) == pytest.approx(1e-7)


def test_metrics_toy_auroc():
    s = np.array([0.1, 0.4, 0.35, 0.8])
    report = pl.compute_metrics(np.stack([1 - s, s], axis=1), [0, 0, 1, 1])
    assert report["per_class"][1]["auroc"] == 0.75


def test_metrics_match_sklearn():
    sk = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(1)
    y = rng.integers(0, 3, size=300)
    scores = rng.normal(size=(300, 3)) + np.eye(3)[y]
    ours = pl.compute_metrics(scores, y.tolist())
    onehot = np.eye(3)[y]
    assert ours["auroc"] == pytest.approx(sk.roc_auc_score(onehot, scores, average="macro"), abs=1e-12)
    assert ours["auprc"] == pytest.approx(sk.average_precision_score(onehot, scores, average="macro"), abs=1e-12)


def test_probe_matches_sklearn_logistic_regression():
    lm = pytest.importorskip("sklearn.linear_model")
    rng = np.random.default_rng(2)
    y = rng.integers(0, 3, size=240)
    x = rng.normal(size=(240, 4)) + 0.8 * np.eye(3, 4)[y]
    W, b, iterations, converged = pl.fit_probe(x, y.tolist(), 3, 1.0)
    assert converged
    ref = lm.LogisticRegression(C=1.0, tol=1e-12, max_iter=10000).fit(x, y)
    # Softmax parameters are identified up to a per-row shift; compare centered values.
    ours_w = W.T - W.T.mean(axis=0)
    ref_w = ref.coef_ - ref.coef_.mean(axis=0)
    assert np.max(np.abs(ours_w - ref_w)) < 1e-5
    assert np.max(np.abs((b - b.mean()) - (ref.intercept_ - ref.intercept_.mean()))) < 1e-5


def test_linear_probe_separable():
    rng = np.random.default_rng(3)
    y = np.repeat([0, 1], 100)
    x = rng.normal(size=(200, 2)) + 10.0 * y[:, None]
    splits = ["train" if i % 5 < 3 else ("val" if i % 5 == 3 else "test") for i in range(200)]
    report = pl.linear_probe(x, y.tolist(), splits)
    assert report["accuracy"] == 1.0
    semi = pl.semi_supervised(x, y.tolist(), splits, 0.05, 3, 7)
    assert len(semi["subsets"]) == 3
    assert math.isclose(semi["mean_accuracy"], sum(s["metrics"]["accuracy"] for s in semi["subsets"]) / 3)
