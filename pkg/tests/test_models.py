"""Analytic oracles, learned backends, training, and checkpoints."""

import numpy as np
import pytest

from guidelab import data as gd
from guidelab import models as gm
from guidelab import schedule as gs
from guidelab.forward import rng_stream


@pytest.fixture(scope="module")
def single_gaussian_8():
    return gd.ManifoldDescriptor(kind="gaussian_mixture", dim=8,
                                 weights=np.array([1.0]),
                                 means=np.zeros((1, 8)),
                                 variances=np.array([1.0]))


@pytest.fixture(scope="module")
def two_gmm_8(small_descriptor):
    return small_descriptor


@pytest.fixture(scope="module")
def gmm8_d8():
    """Eight-class benchmark geometry shrunk to D=8 for cheap oracle probes."""
    return gd.eight_gaussians(dim=8)


class TestAnalyticDenoiser:
    def test_single_standard_gaussian(self, single_gaussian_8, linb_50):
        # q_t = N(0, I) at every t, so eps* = sqrt(1 - abar_t) x
        den = gm.AnalyticDenoiser(single_gaussian_8, linb_50)
        x = rng_stream(0, 0).standard_normal((10, 8))
        for t in (1, 20, 50):
            ab = linb_50.alpha_bars[t - 1]
            np.testing.assert_allclose(den.predict_eps(x, t),
                                       np.sqrt(1 - ab) * x, rtol=1e-12)

    def test_symmetric_midpoint_zero(self, two_gmm_8, linb_50):
        den = gm.AnalyticDenoiser(two_gmm_8, linb_50)
        np.testing.assert_allclose(den.predict_eps(np.zeros(8), 25), 0.0,
                                   atol=1e-12)

    def test_matches_finite_difference_score(self, gmm8_d8, linb_50):
        den = gm.AnalyticDenoiser(gmm8_d8, linb_50)
        rng = rng_stream(1, 0)
        t, h = 25, 1e-5
        ab = linb_50.alpha_bars[t - 1]
        x = rng.standard_normal((100, 8)) * 4.0
        eps = den.predict_eps(x, t)
        fd = np.empty_like(x)
        for j in range(8):
            e = np.zeros(8)
            e[j] = h
            fd[:, j] = (den.log_density(x + e, t) - den.log_density(x - e, t)) / (2 * h)
        expected = -np.sqrt(1 - ab) * fd
        rel = np.abs(eps - expected) / np.maximum(np.abs(expected), 1e-8)
        assert rel.max() < 1e-4

    def test_matches_quadrature_density(self, linb_50):
        """Independent oracle: q_t built by numerically integrating the
        noising kernel against q_0 on a D=2 grid."""
        desc = gd.ManifoldDescriptor(kind="gaussian_mixture", dim=2,
                                     weights=np.array([0.3, 0.7]),
                                     means=np.array([[2.0, 0.0], [-1.0, 1.0]]),
                                     variances=np.array([0.5, 1.5]))
        den = gm.AnalyticDenoiser(desc, linb_50)
        t = 30
        ab = linb_50.alpha_bars[t - 1]
        # quadrature nodes covering q_0's mass
        g = np.linspace(-8, 8, 401)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        dA = (g[1] - g[0]) ** 2
        log_q0 = np.full(len(nodes), -np.inf)
        for w, mu, var in zip(desc.weights, desc.means, desc.variances):
            lp = (-0.5 * np.sum((nodes - mu) ** 2 / var + np.log(var)
                                + np.log(2 * np.pi), axis=1))
            log_q0 = np.logaddexp(log_q0, np.log(w) + lp)
        q0 = np.exp(log_q0)

        def quad_log_qt(x):
            d2 = np.sum((x - np.sqrt(ab) * nodes) ** 2, axis=1)
            kernel = np.exp(-0.5 * d2 / (1 - ab)) / (2 * np.pi * (1 - ab))
            return np.log(np.sum(q0 * kernel) * dA)

        probes = rng_stream(2, 0).standard_normal((20, 2)) * 2.0
        for x in probes:
            assert den.log_density(x, t) == pytest.approx(quad_log_qt(x), abs=1e-6)

    def test_dimension_mismatch(self, single_gaussian_8, linb_50):
        den = gm.AnalyticDenoiser(single_gaussian_8, linb_50)
        with pytest.raises(gm.ModelError):
            den.predict_eps(np.zeros(5), 1)


class TestMuFromEps:
    def test_zero_eps(self, linb_50):
        x = rng_stream(3, 0).standard_normal(4)
        t = 10
        np.testing.assert_allclose(gm.mu_from_eps(x, t, np.zeros(4), linb_50),
                                   x / np.sqrt(linb_50.alphas[t - 1]), rtol=1e-15)

    def test_scalar_hand_case(self):
        # alpha_t = 0.99 and abar_t = 0.5 at t = 2
        betas = np.array([1.0 - 0.5 / 0.99, 0.01])
        sch = gs._from_betas(betas, "lower", np.array([1, 2]), 2)
        assert sch.alphas[1] == pytest.approx(0.99)
        assert sch.alpha_bars[1] == pytest.approx(0.5)
        mu = gm.mu_from_eps(np.array([1.0]), 2, np.array([1.0]), sch)
        assert mu[0] == pytest.approx((1.0 - 0.01 / np.sqrt(0.5)) / np.sqrt(0.99),
                                      rel=1e-12)

    def test_recovers_posterior_mean(self, linb_50):
        # exact eps: mu_from_eps equals the posterior mean mu_tilde(x_t, x_0)
        from guidelab.forward import posterior_mean_var, q_sample
        x0 = rng_stream(3, 1).standard_normal(8)
        for t in (2, 10, 40):
            ns = q_sample(x0, t, linb_50, rng_stream(3, t))
            mu = gm.mu_from_eps(ns.x_t, t, ns.eps, linb_50)
            expected, _ = posterior_mean_var(ns.x_t, x0, t, linb_50)
            np.testing.assert_allclose(mu, expected, atol=1e-9)


class TestAnalyticClassifier:
    def test_single_class_degenerate(self, single_gaussian_8, linb_50):
        clf = gm.AnalyticClassifier(single_gaussian_8, linb_50)
        x = rng_stream(4, 0).standard_normal(8)
        assert clf.class_logprobs(x, 10) == pytest.approx(0.0, abs=1e-12)
        logp, grad = clf.class_grad(x, 10, 0)
        assert logp == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)
        np.testing.assert_allclose(clf.class_grad_direction(x, 10, 0), 0.0)

    def test_symmetric_bisector(self, two_gmm_8, linb_50):
        clf = gm.AnalyticClassifier(two_gmm_8, linb_50)
        x = np.zeros(8)
        x[1] = 1.7   # on the perpendicular bisector of the two means
        lp = clf.class_logprobs(x, 20)
        np.testing.assert_allclose(np.exp(lp), 0.5, atol=1e-12)
        _, grad = clf.class_grad(x, 20, 0)
        direction = two_gmm_8.means[0] - two_gmm_8.means[1]
        cos = grad @ direction / (np.linalg.norm(grad) * np.linalg.norm(direction))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_matches_finite_difference(self, gmm8_d8, linb_50):
        clf = gm.AnalyticClassifier(gmm8_d8, linb_50)
        rng = rng_stream(5, 0)
        t, h = 25, 1e-5
        x = rng.standard_normal((100, 8)) * 4.0
        y = rng.integers(0, 8, size=100)
        _, grad = clf.class_grad(x, t, y)
        fd = np.empty_like(x)
        for j in range(8):
            e = np.zeros(8)
            e[j] = h
            lp_plus = clf.class_logprobs(x + e, t)[np.arange(100), y]
            lp_minus = clf.class_logprobs(x - e, t)[np.arange(100), y]
            fd[:, j] = (lp_plus - lp_minus) / (2 * h)
        assert np.abs(grad - fd).max() < 1e-5

    def test_logprobs_normalized(self, gmm8_d8, linb_50):
        clf = gm.AnalyticClassifier(gmm8_d8, linb_50)
        x = rng_stream(5, 1).standard_normal((50, 8)) * 5.0
        lp = clf.class_logprobs(x, 40)
        lse = np.log(np.sum(np.exp(lp), axis=1))
        np.testing.assert_allclose(lse, 0.0, atol=1e-9)

    def test_prob_gradients_sum_to_zero(self, gmm8_d8, linb_50):
        # sum_y grad p(y|x) = grad 1 = 0
        clf = gm.AnalyticClassifier(gmm8_d8, linb_50)
        x = rng_stream(5, 2).standard_normal((20, 8)) * 3.0
        total = np.zeros_like(x)
        for y in range(8):
            logp, grad = clf.class_grad(x, 30, np.full(20, y))
            total += np.exp(logp)[:, None] * grad
        np.testing.assert_allclose(total, 0.0, atol=1e-8)

    def test_direction_matches_normalized_grad(self, gmm8_d8, linb_50):
        # agreement is only meaningful away from saturation, where the raw
        # gradient still carries the direction
        clf = gm.AnalyticClassifier(gmm8_d8, linb_50)
        x = rng_stream(5, 3).standard_normal((30, 8))
        y = rng_stream(5, 4).integers(0, 8, size=30)
        logp, grad = clf.class_grad(x, 30, y)
        unit = clf.class_grad_direction(x, 30, y)
        keep = np.exp(logp) < 0.99
        assert keep.sum() >= 10
        norms = np.linalg.norm(grad[keep], axis=1, keepdims=True)
        np.testing.assert_allclose(unit[keep], grad[keep] / norms, atol=1e-9)

    def test_direction_survives_saturation(self, linb_50):
        """Deep inside a class's territory p(y|x) saturates to 1 and the raw
        log-probability gradient underflows to 0, but the unit direction must
        stay well defined and unit-norm."""
        desc = gd.eight_gaussians(dim=8, radius=200.0, sigma=0.5)
        clf = gm.AnalyticClassifier(desc, linb_50)
        x = desc.means[3] + 0.1
        _, raw = clf.class_grad(x, 1, 3)
        assert np.linalg.norm(raw) == 0.0          # saturated: underflowed
        unit = clf.class_grad_direction(x, 1, 3)
        assert np.linalg.norm(unit) == pytest.approx(1.0, rel=1e-12)

    def test_label_out_of_range(self, gmm8_d8, linb_50):
        clf = gm.AnalyticClassifier(gmm8_d8, linb_50)
        with pytest.raises(gm.ModelError):
            clf.class_grad(np.zeros(8), 1, 8)

    def test_predict_at_zero_noise(self, gmm8_d8, linb_50):
        clf = gm.AnalyticClassifier(gmm8_d8, linb_50)
        preds = clf.predict(gmm8_d8.means, 0)
        np.testing.assert_array_equal(preds, np.arange(8))


@pytest.fixture(scope="module")
def trained_pair():
    """Denoiser and classifier trained briefly on a small 8-GMM benchmark."""
    desc = gd.eight_gaussians()
    ds = gd.generate(desc, 2048, seed=13)
    sch = gs.build_linear_alphabar(200)
    hyper = gm.Hyperparams(epochs=40)
    den, den_report = gm.train_denoiser(ds, sch, hyper, seed=21)
    clf, clf_report = gm.train_classifier(ds, sch, hyper, seed=22)
    return desc, ds, sch, den, den_report, clf, clf_report


class TestTraining:
    def test_denoiser_loss_halves(self, trained_pair):
        _, _, _, _, report, _, _ = trained_pair
        assert len(report.epoch_losses) == 40
        assert report.final_loss < 0.5 * report.epoch_losses[0]

    def test_denoiser_determinism(self):
        desc = gd.eight_gaussians(dim=8)
        ds = gd.generate(desc, 256, seed=2)
        sch = gs.build_linear_beta(50, 1e-4, 0.02)
        hyper = gm.Hyperparams(hidden=(32, 32), t_embed_dim=8, epochs=3)
        m1, _ = gm.train_denoiser(ds, sch, hyper, seed=9)
        m2, _ = gm.train_denoiser(ds, sch, hyper, seed=9)
        np.testing.assert_array_equal(m1.mlp.flat_params(), m2.mlp.flat_params())
        m3, _ = gm.train_denoiser(ds, sch, hyper, seed=10)
        assert not np.array_equal(m1.mlp.flat_params(), m3.mlp.flat_params())

    def test_classifier_determinism(self):
        desc = gd.eight_gaussians(dim=8)
        ds = gd.generate(desc, 256, seed=2)
        sch = gs.build_linear_beta(50, 1e-4, 0.02)
        hyper = gm.Hyperparams(hidden=(32, 32), t_embed_dim=8, epochs=3)
        m1, _ = gm.train_classifier(ds, sch, hyper, seed=9)
        m2, _ = gm.train_classifier(ds, sch, hyper, seed=9)
        np.testing.assert_array_equal(m1.mlp.flat_params(), m2.mlp.flat_params())

    def test_classifier_accuracy_by_noise(self, trained_pair):
        desc, _, sch, _, _, clf, _ = trained_pair
        test = gd.generate(desc, 2000, seed=99)
        rng = rng_stream(7, 0)
        # low noise: 1 - abar_t = 0.01 -> t = 2 under abar_t = 1 - t/200
        t_low = 2
        ab = sch.alpha_bars[t_low - 1]
        x_low = np.sqrt(ab) * test.points + np.sqrt(1 - ab) * rng.standard_normal(test.points.shape)
        acc_low = float(np.mean(clf.predict(x_low, t_low) == test.labels))
        assert acc_low >= 0.95
        # full noise: abar_T ~ 0, accuracy collapses to chance
        x_high = rng.standard_normal(test.points.shape)
        acc_high = float(np.mean(clf.predict(x_high, sch.T) == test.labels))
        assert acc_high == pytest.approx(1.0 / 8.0, abs=0.05)

    def test_memorization_limit(self):
        # single-point dataset: at heavy noise the optimum predicts the
        # injected eps itself; replayed training pairs reach near-zero loss
        desc = gd.ManifoldDescriptor(kind="gaussian_mixture", dim=4,
                                     weights=np.array([1.0]),
                                     means=np.zeros((1, 4)),
                                     variances=np.array([1e-8]))
        ds = gd.generate(desc, 64, seed=0)
        sch = gs.build_linear_beta(10, 0.3, 0.5)
        hyper = gm.Hyperparams(hidden=(64, 64), t_embed_dim=8, epochs=150,
                               batch_size=64)
        _, report = gm.train_denoiser(ds, sch, hyper, seed=5)
        assert report.final_loss < 0.1

    def test_nonfinite_loss_aborts(self):
        desc = gd.eight_gaussians(dim=8)
        ds = gd.generate(desc, 128, seed=2)
        sch = gs.build_linear_beta(50, 1e-4, 0.02)
        hyper = gm.Hyperparams(hidden=(16, 16), t_embed_dim=8, epochs=5, lr=1e80,
                               grad_clip=1e300)
        with pytest.raises(gm.TrainingError):
            gm.train_denoiser(ds, sch, hyper, seed=0)

    def test_classifier_needs_two_classes(self, single_gaussian_8, linb_50):
        ds = gd.generate(single_gaussian_8, 64, seed=0)
        with pytest.raises(gm.ModelError):
            gm.train_classifier(ds, linb_50)


class TestLearnedGradients:
    def test_classifier_input_grad_fd(self, trained_pair):
        _, _, sch, _, _, clf, _ = trained_pair
        rng = rng_stream(8, 0)
        h, t = 1e-4, 17
        worst = 0.0
        for _ in range(50):
            x = rng.standard_normal(64) * 4.0
            y = int(rng.integers(0, 8))
            _, grad = clf.class_grad(x, t, y)
            fd = np.empty(64)
            for j in range(64):
                e = np.zeros(64)
                e[j] = h
                fd[j] = (clf.class_grad(x + e, t, y)[0]
                         - clf.class_grad(x - e, t, y)[0]) / (2 * h)
            denom = max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, np.linalg.norm(grad - fd) / denom)
        assert worst < 1e-3

    def test_denoiser_vjp_fd(self, trained_pair):
        _, _, sch, den, _, _, _ = trained_pair
        rng = rng_stream(8, 1)
        h, t = 1e-4, 17
        for _ in range(10):
            x = rng.standard_normal(64)
            u = rng.standard_normal(64)
            g = den.eps_vjp(x, t, u)
            fd = np.empty(64)
            for j in range(64):
                e = np.zeros(64)
                e[j] = h
                fd[j] = (u @ den.predict_eps(x + e, t)
                         - u @ den.predict_eps(x - e, t)) / (2 * h)
            assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-3

    def test_learned_direction_matches_grad(self, trained_pair):
        _, _, _, _, _, clf, _ = trained_pair
        x = rng_stream(8, 2).standard_normal((20, 64)) * 3.0
        y = rng_stream(8, 3).integers(0, 8, size=20)
        logp, grad = clf.class_grad(x, 30, y)
        unit = clf.class_grad_direction(x, 30, y)
        keep = np.exp(logp) < 0.99
        assert keep.sum() >= 5
        norms = np.linalg.norm(grad[keep], axis=1, keepdims=True)
        np.testing.assert_allclose(unit[keep], grad[keep] / norms, atol=1e-9)

    def test_learned_logprobs_normalized(self, trained_pair):
        _, _, _, _, _, clf, _ = trained_pair
        lp = clf.class_logprobs(rng_stream(8, 4).standard_normal((30, 64)), 5)
        np.testing.assert_allclose(np.log(np.sum(np.exp(lp), axis=1)), 0.0,
                                   atol=1e-9)


class TestCheckpoints:
    def test_learned_roundtrip(self, trained_pair, tmp_path):
        _, _, sch, den, _, clf, _ = trained_pair
        probes = rng_stream(9, 0).standard_normal((100, 64))
        for model, name in ((den, "den"), (clf, "clf")):
            path = tmp_path / f"{name}.gmod"
            gm.save_model(model, path)
            back = gm.load_model(path, sch)
            if name == "den":
                np.testing.assert_array_equal(back.predict_eps(probes, 7),
                                              model.predict_eps(probes, 7))
            else:
                np.testing.assert_array_equal(back.class_logprobs(probes, 7),
                                              model.class_logprobs(probes, 7))

    def test_analytic_roundtrip(self, gmm8_d8, linb_50, tmp_path):
        den = gm.AnalyticDenoiser(gmm8_d8, linb_50)
        path = tmp_path / "a.gmod"
        gm.save_model(den, path)
        back = gm.load_model(path, linb_50)
        probes = rng_stream(9, 1).standard_normal((100, 8))
        np.testing.assert_array_equal(back.predict_eps(probes, 3),
                                      den.predict_eps(probes, 3))

    def test_fingerprint_mismatch(self, gmm8_d8, linb_50, tmp_path):
        den = gm.AnalyticDenoiser(gmm8_d8, linb_50)
        path = tmp_path / "m.gmod"
        gm.save_model(den, path)
        other = gs.build_linear_beta(50, 1e-4, 0.03)
        with pytest.raises(gm.ModelMismatchError):
            gm.load_model(path, other)

    def test_respaced_schedule_accepted(self, gmm8_d8, linb_50, tmp_path):
        # base fingerprint survives respacing, so checkpoints stay loadable
        den = gm.AnalyticDenoiser(gmm8_d8, linb_50)
        path = tmp_path / "r.gmod"
        gm.save_model(den, path)
        assert gm.load_model(path, gs.respace(linb_50, 10)) is not None

    def test_corrupted_checkpoint(self, gmm8_d8, linb_50, tmp_path):
        from guidelab.data import ChecksumError
        den = gm.AnalyticDenoiser(gmm8_d8, linb_50)
        path = tmp_path / "c.gmod"
        gm.save_model(den, path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            gm.load_model(path, linb_50)
