import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from iaml.estimators import IoUAugmenter, ToyCoordinateRegressor, check_boxes
from iaml.geometry import iou_many
from iaml.sampler import AugmentationConfig, derive_stream, sample_boxes
from iaml.toytrainer.screens import gen_screens
from iaml.toytrainer.train import screen_boxes

BOXES = np.array([[0.1, 0.1, 0.4, 0.3], [0.5, 0.2, 0.9, 0.8], [0.0, 0.0, 1.0, 1.0]])


def toy_data(n, seed=0):
    screens = gen_screens(n, 2, 0.0, seed=seed)
    X = np.stack([s.features for s in screens])
    return X, screen_boxes(screens).reshape(n, -1)


def test_augmenter_params_and_clone():
    aug = IoUAugmenter(epsilon=0.05, tau=1.0, random_state=3)
    assert aug.get_params()["epsilon"] == 0.05
    other = clone(aug).set_params(n_trials=500)
    assert other.tau == 1.0 and other.n_trials == 500
    assert not hasattr(other, "config_")


def test_augmenter_transform_matches_sampler():
    aug = IoUAugmenter(epsilon=0.05, n_trials=500, random_state=7)
    out = aug.fit_transform(BOXES)
    assert out.shape == BOXES.shape
    cfg = AugmentationConfig(epsilon=0.05, n_trials=500, master_seed=7, k_replicas=2)
    expect = sample_boxes(BOXES[1], cfg, derive_stream(7, 1, 0, 1), 1)[0]
    assert np.array_equal(out[1], expect)
    assert np.all(np.abs(out - BOXES) <= 0.05 + 1e-12)
    assert np.all((out[:, 2] > out[:, 0]) & (out[:, 3] > out[:, 1]))
    assert np.array_equal(out, aug.transform(BOXES))


def test_augmenter_replicate():
    aug = IoUAugmenter(epsilon=0.05, n_trials=300).fit(BOXES)
    reps = aug.replicate(BOXES, k=3)
    assert reps.shape == (3, 3, 4)
    assert np.array_equal(reps[0], BOXES)
    assert np.array_equal(reps[1], aug.transform(BOXES))
    assert not np.array_equal(reps[1], reps[2])


def test_augmenter_prefers_high_iou_at_low_tau():
    X = np.tile([[0.3, 0.3, 0.6, 0.7]], (200, 1))
    sharp = IoUAugmenter(epsilon=0.05, n_trials=500, tau=0.5).fit_transform(X)
    flat = IoUAugmenter(epsilon=0.05, n_trials=500, tau=100.0, strategy="random").fit_transform(X)
    assert iou_many(X[0], sharp).mean() > iou_many(X[0], flat).mean()


def test_augmenter_validation():
    aug = IoUAugmenter()
    with pytest.raises(NotFittedError):
        aug.transform(BOXES)
    with pytest.raises(ValueError):
        aug.fit(BOXES[:, :3])
    with pytest.raises(ValueError):
        aug.fit([[0.5, 0.1, 0.4, 0.3]])
    with pytest.raises(ValueError):
        aug.fit([[0.1, 0.1, 1.2, 0.3]])
    with pytest.raises(ValueError):
        IoUAugmenter(epsilon=0.0).fit(BOXES)
    with pytest.raises(ValueError):
        check_boxes([[np.nan, 0.1, 0.4, 0.3]])


@pytest.fixture(scope="module")
def fitted():
    X, Y = toy_data(150)
    model = ToyCoordinateRegressor(loss="iaml", k_replicas=2, n_trials=200, rounds=2,
                                   hidden=16, embed=4, random_state=1).fit(X, Y)
    return model, X, Y


def test_regressor_fit_predict(fitted):
    model, X, Y = fitted
    assert model.n_steps_ == int(np.ceil(2 * 2 * 150 / 32))
    assert model.predict_tokens(X).shape == (150, 8)
    pred = model.predict(X)
    assert pred.shape == Y.shape
    boxes = pred.reshape(-1, 4)
    assert np.all((boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1]))
    assert 0.0 <= model.score(X, Y) <= 1.0


def test_regressor_is_deterministic(fitted):
    model, X, Y = fitted
    again = clone(model).fit(X, Y)
    assert np.array_equal(again.params_.flat(), model.params_.flat())


def test_regressor_learns_noise_free_cues():
    X, Y = toy_data(400, seed=2)
    Xt, Yt = toy_data(200, seed=3)
    short = ToyCoordinateRegressor(rounds=1, random_state=0).fit(X, Y)
    long = ToyCoordinateRegressor(rounds=60, random_state=0).fit(X, Y)
    losses = [row["loss"] for row in long.log_]
    assert np.mean(losses[-5:]) < 0.8 * np.mean(losses[:5])
    assert long.score(Xt, Yt) > short.score(Xt, Yt)


def test_regressor_validation(fitted):
    model, X, Y = fitted
    with pytest.raises(NotFittedError):
        ToyCoordinateRegressor().predict(X)
    with pytest.raises(ValueError):
        ToyCoordinateRegressor(loss="hinge").fit(X, Y)
    with pytest.raises(ValueError):
        ToyCoordinateRegressor().fit(X, Y[:-1])
    with pytest.raises(ValueError):
        ToyCoordinateRegressor().fit(X, Y[:, :7])
    with pytest.raises(ValueError):
        model.predict(X[:, :5])
