import dataclasses

import numpy as np
import pytest

from splitproof import toylab
from splitproof.errors import ZeroRange
from splitproof.toylab import (
    ConfigInvalid,
    ExperimentMode,
    ToyConfig,
    TrainHyper,
    ToyModel,
)

SMALL = ToyConfig(
    image_size=16,
    n_patients=16,
    images_per_patient=8,
    fingerprint_strength=1.0,
    lesion_strength=0.3,
    noise_sigma=0.1,
    seed=0,
)
FAST_HYPER = TrainHyper(learning_rate=0.05, epochs=300, l2=6e-3)


class TestCohort:
    def test_deterministic(self):
        a = toylab.generate_cohort(SMALL)
        b = toylab.generate_cohort(SMALL)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.lesion_masks, b.lesion_masks)
        assert a.patient_ids == b.patient_ids

    def test_seed_changes_cohort(self):
        a = toylab.generate_cohort(SMALL)
        b = toylab.generate_cohort(dataclasses.replace(SMALL, seed=1))
        assert not np.array_equal(a.images, b.images)

    def test_structure(self):
        c = toylab.generate_cohort(SMALL)
        n = SMALL.n_patients * SMALL.images_per_patient
        assert c.images.shape == (n, 16, 16)
        assert c.images.min() >= 0.0 and c.images.max() <= 1.0
        # per-patient constant class, alternating and balanced
        for p in range(SMALL.n_patients):
            idx = [i for i, pid in enumerate(c.patient_ids) if pid == f"P{p:03d}"]
            assert len(idx) == SMALL.images_per_patient
            assert len(set(c.labels[idx].tolist())) == 1
            assert c.labels[idx[0]] == p % 2
        assert c.labels.mean() == 0.5

    def test_masks_only_on_malignant(self):
        c = toylab.generate_cohort(SMALL)
        for i in range(len(c.labels)):
            if c.labels[i] == 0:
                assert not c.lesion_masks[i].any()
            else:
                assert c.lesion_masks[i].any()

    def test_signal_only_regime_is_separable(self):
        config = dataclasses.replace(
            SMALL, fingerprint_strength=0.0, lesion_strength=0.6, noise_sigma=0.01
        )
        c = toylab.generate_cohort(config)
        model = toylab.train_classifier(c.images, c.labels, FAST_HYPER)
        acc = (model.predict(c.images) == c.labels).mean()
        assert acc == 1.0

    def test_no_lesion_means_chance_fair_challenge(self):
        config = dataclasses.replace(SMALL, lesion_strength=0.0)
        accs = []
        for seed in range(20):
            r = toylab.run_experiment(
                dataclasses.replace(config, seed=seed), ExperimentMode.FAIR,
                (0.5, 0.25, 0.25), FAST_HYPER,
            )
            accs.append(r.challenge_accuracy)
        assert abs(float(np.mean(accs)) - 0.5) <= 0.1

    def test_config_validation(self):
        with pytest.raises(ConfigInvalid):
            ToyConfig(n_patients=4)
        with pytest.raises(ConfigInvalid):
            ToyConfig(noise_sigma=-0.1)


class TestTrainClassifier:
    def test_separable_two_points(self):
        images = np.stack([np.zeros((4, 4)), np.ones((4, 4))])
        labels = np.array([0, 1])
        model = toylab.train_classifier(images, labels, TrainHyper(0.5, 200, 0.0))
        assert (model.predict(images) == labels).all()

    def test_needs_both_classes(self):
        with pytest.raises(ValueError):
            toylab.train_classifier(np.zeros((3, 2, 2)), np.array([1, 1, 1]), FAST_HYPER)

    def test_gradient_matches_finite_differences(self, rng):
        n, d = 12, 9
        x = rng.random((n, d))
        y = (rng.random(n) < 0.5).astype(float)
        l2 = 0.01

        def loss_at(w, b):
            p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
            eps = 1e-12
            return float(
                -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
                + 0.5 * l2 * float(w @ w)
            )

        for _ in range(20):
            w = rng.normal(size=d)
            b = float(rng.normal())
            grad_w, grad_b = toylab.logistic_gradient(w, b, x, y, l2)
            h = 1e-6
            for i in rng.integers(0, d, size=3):
                e = np.zeros(d)
                e[i] = h
                fd = (loss_at(w + e, b) - loss_at(w - e, b)) / (2 * h)
                assert abs(fd - grad_w[i]) / max(abs(fd), 1e-8) < 1e-5
            fd_b = (loss_at(w, b + h) - loss_at(w, b - h)) / (2 * h)
            assert abs(fd_b - grad_b) / max(abs(fd_b), 1e-8) < 1e-5

    def test_loss_non_increasing_at_default_rate(self):
        c = toylab.generate_cohort(SMALL)
        model = toylab.train_classifier(c.images, c.labels, TrainHyper(epochs=400))
        diffs = np.diff(model.loss_history)
        assert (diffs <= 1e-12).all()

    def test_l2_shrinks_weights_monotonically(self):
        c = toylab.generate_cohort(SMALL)
        norms = []
        for l2 in (0.001, 0.1, 10.0, 1000.0):
            m = toylab.train_classifier(c.images, c.labels, TrainHyper(0.05, 200, l2))
            norms.append(float(np.linalg.norm(m.weights)))
        assert norms == sorted(norms, reverse=True)
        assert norms[-1] < 1e-3

    def test_diverged_detection(self):
        images = np.stack([np.zeros((2, 2)), np.ones((2, 2))]) * 1e6
        with pytest.raises((toylab.Diverged, FloatingPointError)):
            with np.errstate(over="raise"):
                toylab.train_classifier(
                    images, np.array([0, 1]), TrainHyper(1e9, 50, 0.0)
                )


class TestSaliency:
    def test_one_hot_weights(self):
        w = np.zeros((4, 4))
        w[2, 1] = 3.0
        model = ToyModel(weights=w, bias=0.0)
        img = np.full((4, 4), 0.5)
        sal = toylab.saliency_map(model, img)
        assert sal.data[2, 1] == 1.0
        assert sal.data.sum() == 1.0

    def test_zero_image_raises(self):
        model = ToyModel(weights=np.ones((3, 3)), bias=0.0)
        with pytest.raises(ZeroRange):
            toylab.saliency_map(model, np.zeros((3, 3)))

    def test_uniform_weights_give_normalized_image(self, rng):
        img = rng.random((5, 5))
        model = ToyModel(weights=np.full((5, 5), 2.0), bias=0.0)
        sal = toylab.saliency_map(model, img)
        expected = (img - img.min()) / (img.max() - img.min())
        assert sal.data == pytest.approx(expected)


class TestRunExperiment:
    def test_deterministic(self):
        a = toylab.run_experiment(SMALL, ExperimentMode.UNFAIR, (0.5, 0.25, 0.25), FAST_HYPER)
        b = toylab.run_experiment(SMALL, ExperimentMode.UNFAIR, (0.5, 0.25, 0.25), FAST_HYPER)
        assert a == b

    def test_challenge_patients_isolated(self):
        cohort = toylab.generate_cohort(SMALL)
        n_challenge = toylab.challenge_patient_count(SMALL)
        challenge = {
            f"P{p:03d}" for p in range(SMALL.n_patients - n_challenge, SMALL.n_patients)
        }
        pool_idx = [i for i, pid in enumerate(cohort.patient_ids) if pid not in challenge]
        pool = toylab._toy_manifest(cohort, pool_idx)
        assert challenge.isdisjoint({r.patient_id for r in pool.records})
        assert len(pool.records) + len(challenge) * SMALL.images_per_patient == len(
            cohort.patient_ids
        )

    def test_modes_accept_strings(self):
        r = toylab.run_experiment(SMALL, "Fair", (0.5, 0.25, 0.25), FAST_HYPER)
        assert r.mode is ExperimentMode.FAIR

    def test_accuracies_in_unit_interval(self):
        r = toylab.run_experiment(SMALL, "Unfair", (0.5, 0.25, 0.25), FAST_HYPER)
        for v in (r.test_accuracy, r.challenge_accuracy):
            assert 0.0 <= v <= 1.0

    def test_no_fingerprint_modes_statistically_indistinguishable(self):
        config = dataclasses.replace(SMALL, fingerprint_strength=0.0)
        diffs = []
        for seed in range(20):
            c = dataclasses.replace(config, seed=seed)
            fair = toylab.run_experiment(c, "Fair", (0.5, 0.25, 0.25), FAST_HYPER)
            unfair = toylab.run_experiment(c, "Unfair", (0.5, 0.25, 0.25), FAST_HYPER)
            diffs.append(fair.challenge_accuracy - unfair.challenge_accuracy)
        assert abs(float(np.mean(diffs))) <= 0.05


class TestSweepAndFiles:
    def test_sweep_shape(self):
        results = toylab.sweep(SMALL, [ExperimentMode.FAIR], [0, 1], (0.5, 0.25, 0.25), FAST_HYPER)
        assert [r.seed for r in results] == [0, 1]

    def test_results_csv(self, tmp_path):
        results = toylab.sweep(
            SMALL, [ExperimentMode.FAIR, ExperimentMode.UNFAIR], [3], (0.5, 0.25, 0.25), FAST_HYPER
        )
        toylab.write_results_csv(results, tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "mode,seed,test_acc,challenge_acc,sal_on,sal_off"
        assert len(lines) == 3
        assert lines[1].startswith("Fair,3,")

    def test_config_roundtrip(self):
        d = toylab.config_to_dict(SMALL)
        assert toylab.config_from_dict(d) == SMALL

    def test_frozen_defaults_load(self):
        bundle = toylab.load_defaults()
        config = toylab.default_config()
        assert config.n_patients >= 6
        assert len(bundle["acceptance_seeds"]) == 5
        assert bundle["thresholds"]["unfair_min_gap"] == 0.15
        assert bundle["thresholds"]["fair_max_gap"] == 0.05
