import math

import numpy as np
import pytest

from linac.classifier import (Classifier, ClassifierSpec, TrainConfig, config_digest,
                              initial_loss, train_classifier)
from linac.models import accuracy
from linac.nn import NonFiniteError
from linac.transforms import fit_normalization


def test_network_shapes():
    net = ClassifierSpec(64).network()
    assert net.output_shape((5, 16, 16, 64)) == (5, 10)
    assert ClassifierSpec(3).network().output_shape((2, 32, 32, 3)) == (2, 10)


def test_invalid_specs_and_configs():
    with pytest.raises(ValueError):
        ClassifierSpec(3, num_classes=1)
    with pytest.raises(ValueError):
        ClassifierSpec(3, widths=(8, 8))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(ema_decay=1.0)


def test_full_scale_config():
    cfg = TrainConfig.full_scale()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (1000, 1024, 0.4)
    assert cfg.drops == (650, 800, 900, 950) and cfg.cutmix
    assert TrainConfig.desk(epochs=100).drops == (65, 80, 90, 95)


def test_initial_loss_near_uniform(small_data):
    x, y, _, _ = small_data
    spec = ClassifierSpec(3, normalization=fit_normalization(x))
    for key in range(3):
        assert abs(initial_loss(x[:64], y[:64], spec, key) - math.log(10)) <= 0.2


def test_training_is_deterministic(small_data):
    x, y, _, _ = small_data
    spec = ClassifierSpec(3, widths=(8, 8, 8), normalization=fit_normalization(x))
    cfg = TrainConfig.desk(epochs=2)
    a = train_classifier(x[:200], y[:200], spec, cfg, key=4)
    b = train_classifier(x[:200], y[:200], spec, cfg, key=4)
    for pa, pb in zip(a.params, b.params):
        for k in pa:
            assert np.array_equal(pa[k], pb[k])
    c = train_classifier(x[:200], y[:200], spec, cfg, key=5)
    assert not np.array_equal(a.params[1]["W"], c.params[1]["W"])


def test_small_classifier_learns(small_classifier, small_data):
    _, _, xt, yt = small_data
    assert accuracy(small_classifier.model(), xt, yt) >= 0.45
    curve = small_classifier.curve
    assert curve[-1]["loss"] < curve[0]["loss"]


def test_cutmix_and_transform_paths(small_data):
    x, y, xt, yt = small_data
    spec = ClassifierSpec(3, widths=(8, 8, 8), normalization=fit_normalization(x))
    seen = []

    def transform(xb):
        seen.append(len(xb))
        return xb[:, ::-1]

    clf = train_classifier(x[:100], y[:100], spec, TrainConfig.desk(epochs=1, batch_size=32,
                                                                     cutmix=True),
                           transform=transform, eval_set=(xt[:20], yt[:20]))
    assert seen == [32, 32, 32, 4]
    row = clf.curve[0]
    assert np.isfinite(row["loss"]) and 0 <= row["clean_acc"] <= 1 and 0 <= row["raw_acc"] <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(small_data):
    x, y, _, _ = small_data
    spec = ClassifierSpec(3, widths=(8, 8, 8))
    with pytest.raises(NonFiniteError):
        train_classifier(x[:256], y[:256], spec, TrainConfig.desk(epochs=2, learning_rate=1e8))


def test_label_range_checked(small_data):
    x, y, _, _ = small_data
    with pytest.raises(ValueError, match="labels"):
        train_classifier(x[:10], np.full(10, 10), ClassifierSpec(3), TrainConfig())
    with pytest.raises(ValueError):
        train_classifier(x[:10], y[:9], ClassifierSpec(3), TrainConfig())


def test_prediction_properties(small_classifier, small_data):
    _, _, xt, _ = small_data
    p = small_classifier.predict_proba(xt[:50])
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)
    single = np.array([small_classifier.predict(xt[i:i + 1])[0] for i in range(10)])
    assert np.array_equal(single, small_classifier.predict(xt[:10]))
    z = small_classifier.logits(xt[:10])
    assert np.array_equal((z + 3.0).argmax(1), z.argmax(1))
    with pytest.raises(ValueError):
        small_classifier.predict(xt[:2, ..., :2])


def test_accuracy_helper(small_classifier, small_data, rng):
    x, _, _, _ = small_data
    model = small_classifier.model()
    pred = model.predict(x[:100])
    assert accuracy(model, x[:100], pred) == 1.0
    random_labels = rng.integers(0, 10, 1000)
    xs = np.concatenate([x] * 2)[:1000]
    assert abs(accuracy(model, xs, random_labels) - 0.1) <= 0.03
    assert accuracy(model, x[:50], pred[:50], transform=lambda v: v) == 1.0
    with pytest.raises(ValueError):
        accuracy(model, x[:0], pred[:0])


def test_save_load_roundtrip(small_classifier, small_data, tmp_path):
    _, _, xt, _ = small_data
    small_classifier.save(tmp_path / "clf")
    loaded = Classifier.load(tmp_path / "clf")
    assert loaded.spec == small_classifier.spec
    assert np.array_equal(loaded.logits(xt[:5]), small_classifier.logits(xt[:5]))
    lines = (tmp_path / "clf" / "curve.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["epoch", "loss", "lr", "clean_acc"]
    assert len(lines) == 1 + len(small_classifier.curve)


def test_config_digest_changes_with_config():
    spec = ClassifierSpec(3)
    assert config_digest(spec, TrainConfig()) == config_digest(spec, TrainConfig())
    assert config_digest(spec, TrainConfig()) != config_digest(spec, TrainConfig(epochs=3))
