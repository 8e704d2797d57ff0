import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothcert.nn import ModelParams
from smoothcert.rng import StreamId
from smoothcert.smoothing import (
    ABSTAIN,
    CertifyOutcome,
    NotCertifiable,
    SmoothingConfig,
    certified_radius,
    certify,
    clopper_pearson_lower,
    hard_class_counts,
    read_certification_csv,
    sample_noise,
    soft_smoothed_predict,
    std_normal_cdf,
    std_normal_quantile,
    write_certification_csv,
)

# Frozen oracle values, computed with mpmath erfinv at 30 digits.
PHI_INV_ORACLE = {
    0.975: 1.9599639845400542,
    0.999: 3.0902323061678135,
    0.9: 1.2815515655446005,
    0.75: 0.67448975019608174,
    0.6: 0.2533471031357998,
    0.5001: 0.0002506628300880351,
    0.001: -3.0902323061678135,
    1e-9: -5.9978070150076869,
    0.999999: 4.7534243088228989,
}
PHI_AT_1 = 0.84134474606854295  # mpmath ncdf(1)

# Frozen oracle values from scipy.stats.beta.ppf(alpha, k, n-k+1), the
# exact Clopper-Pearson lower limit via Beta-Binomial duality.
CP_ORACLE = {
    (950, 1000, 0.001): 0.925046780060944,
    (80, 100, 0.001): 0.6535572712893807,
    (8, 10, 0.05): 0.4930986989367976,
    (55, 100, 0.001): 0.39214682722125527,
    (999, 1000, 0.001): 0.9908045023646124,
    (501, 1000, 0.001): 0.4517643768755042,
    (1, 1000, 0.001): 1.0004998330832417e-06,
    (90, 100, 0.01): 0.808669714613969,
    (600, 1000, 0.001): 0.5510754739370525,
}


def _linear_two_class(w, b, scale=1.0):
    """Two-class net with logits (0, scale*(w.x + b)); no hidden layers."""
    w = np.asarray(w, dtype=np.float64)
    W = np.column_stack([np.zeros_like(w), scale * w])
    return ModelParams([W], [np.array([0.0, scale * b])])


def _constant_net(dim=3, classes=4):
    return ModelParams([np.zeros((dim, classes))], [np.zeros(classes)])


# ---------------------------------------------------------------- noise


def test_sample_noise_rejects_sigma_zero():
    with pytest.raises(ValueError):
        sample_noise(0.0, 3, 5, StreamId(0))


def test_sample_noise_mean_and_std():
    batch = sample_noise(0.7, 1, 1_000_000, StreamId(1, ("noise",)))
    draws = batch.deltas.ravel()
    se = 0.7 / math.sqrt(draws.size)
    assert abs(draws.mean()) < 5 * se
    assert draws.std() == pytest.approx(0.7, rel=0.01)


def test_sample_noise_reproducible():
    a = sample_noise(0.5, 4, 10, StreamId(3, ("x",)))
    b = sample_noise(0.5, 4, 10, StreamId(3, ("x",)))
    np.testing.assert_array_equal(a.deltas, b.deltas)
    assert a.stream == b.stream and a.sigma == 0.5 and a.m == 10


def test_noise_batch_m_validation():
    with pytest.raises(ValueError):
        sample_noise(0.5, 4, 0, StreamId(0))


# ---------------------------------------------------------------- smoothed predictions


def test_soft_predict_constant_net_uniform():
    params = _constant_net(dim=3, classes=4)
    noise = sample_noise(1.0, 3, 50, StreamId(2))
    probs = soft_smoothed_predict(params, np.ones(3), noise)
    np.testing.assert_allclose(probs, 0.25, atol=1e-12)


def test_soft_predict_m1_is_plain_softmax():
    from smoothcert.nn import forward, softmax
    rng = np.random.default_rng(4)
    params = ModelParams([rng.standard_normal((3, 4))], [rng.standard_normal(4)])
    noise = sample_noise(0.5, 3, 1, StreamId(5))
    x = rng.standard_normal(3)
    np.testing.assert_allclose(
        soft_smoothed_predict(params, x, noise),
        softmax(forward(params, x + noise.deltas[0])), atol=1e-14)


def test_soft_predict_linear_matches_gaussian_integral():
    # sharp linear net: soft output ~ hard indicator, so the smoothed
    # probability approaches Phi(margin / (sigma * |w|))
    w, b, sigma = np.array([0.6, -0.8]), 0.35, 0.9
    params = _linear_two_class(w, b, scale=1e4)
    x = np.array([0.3, 0.1])
    m = 100_000
    noise = sample_noise(sigma, 2, m, StreamId(6, ("mc",)))
    margin = float(w @ x + b)
    p_true = std_normal_cdf(margin / (sigma * np.linalg.norm(w)))
    est = soft_smoothed_predict(params, x, noise)[1]
    se = math.sqrt(p_true * (1 - p_true) / m)
    assert abs(est - p_true) < 3 * se


def test_hard_counts_constant_net_all_class_zero():
    params = _constant_net()
    counts = hard_class_counts(params, np.zeros(3), 500, 1.0, StreamId(7))
    assert counts[0] == 500 and counts.sum() == 500


def test_hard_counts_linear_closed_form():
    w, b, sigma = np.array([1.0, 2.0]), -0.4, 0.5
    params = _linear_two_class(w, b)
    x = np.array([0.5, 0.2])
    count = 40_000
    counts = hard_class_counts(params, x, count, sigma, StreamId(8, ("hc",)))
    p_true = std_normal_cdf(float(w @ x + b) / (sigma * np.linalg.norm(w)))
    se = math.sqrt(p_true * (1 - p_true) / count)
    assert abs(counts[1] / count - p_true) < 3 * se


def test_hard_counts_count_one():
    params = _linear_two_class(np.array([1.0]), 0.0)
    counts = hard_class_counts(params, np.array([5.0]), 1, 0.1, StreamId(9))
    assert counts.sum() == 1 and np.count_nonzero(counts) == 1


def test_hard_counts_chunking_seamless():
    # crossing the internal chunk boundary must not change the draw sequence
    params = _linear_two_class(np.array([1.0, -1.0]), 0.1)
    x = np.array([0.2, 0.1])
    c1 = hard_class_counts(params, x, 25_000, 1.0, StreamId(10, ("c",)))
    big = sample_noise(1.0, 2, 25_000, StreamId(10, ("c",)))
    from smoothcert.nn import forward
    preds = np.argmax(forward(params, x + big.deltas), axis=1)
    np.testing.assert_array_equal(c1, np.bincount(preds, minlength=2))


# ---------------------------------------------------------------- quantile


def test_quantile_center():
    assert std_normal_quantile(0.5) == 0.0


def test_quantile_frozen_oracles():
    for p, want in PHI_INV_ORACLE.items():
        assert std_normal_quantile(p) == pytest.approx(want, abs=1e-9)
    assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)


def test_quantile_round_trip_tight():
    rng = np.random.default_rng(11)
    ps = np.concatenate([rng.uniform(1e-6, 1 - 1e-6, 1000),
                         [1e-12, 1e-9, 0.5, 1 - 1e-9, 1 - 1e-12]])
    for p in ps:
        assert abs(std_normal_cdf(std_normal_quantile(p)) - p) < 1e-12


def test_quantile_symmetry():
    for p in [0.6, 0.9, 0.999, 0.9999999]:
        assert std_normal_quantile(p) == -std_normal_quantile(1 - p)


def test_quantile_domain():
    for p in [0.0, 1.0, -0.5, 1.5]:
        with pytest.raises(ValueError):
            std_normal_quantile(p)


# ---------------------------------------------------------------- clopper-pearson


def test_cp_k_zero_exact():
    assert clopper_pearson_lower(0, 100, 0.001) == 0.0


def test_cp_k_equals_n_closed_form():
    assert abs(clopper_pearson_lower(100, 100, 0.001) - 0.001 ** 0.01) < 1e-12
    assert abs(clopper_pearson_lower(1000, 1000, 0.001)
               - 0.001 ** 0.001) < 1e-12
    assert abs(clopper_pearson_lower(10, 10, 0.05) - 0.05 ** 0.1) < 1e-12
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(
        0.933254300796991, abs=1e-12)


def test_cp_frozen_oracles():
    for (k, n, a), want in CP_ORACLE.items():
        assert clopper_pearson_lower(k, n, a) == pytest.approx(want, abs=1e-9)


def test_cp_against_live_beta_quantile():
    beta = pytest.importorskip("scipy.stats").beta
    rng = np.random.default_rng(12)
    for n in (10, 100, 1000):
        for k in rng.integers(1, n, 8):
            k = int(k)
            want = beta.ppf(0.001, k, n - k + 1)
            assert clopper_pearson_lower(k, n, 0.001) == pytest.approx(
                want, abs=1e-9)


def test_cp_validation():
    with pytest.raises(ValueError):
        clopper_pearson_lower(-1, 10, 0.001)
    with pytest.raises(ValueError):
        clopper_pearson_lower(11, 10, 0.001)
    with pytest.raises(ValueError):
        clopper_pearson_lower(5, 10, 0.0)


@settings(max_examples=200, deadline=None)
@given(n=st.sampled_from([10, 100, 1000]), frac=st.floats(0.0, 1.0),
       alpha=st.floats(1e-6, 0.5))
def test_cp_bounded_by_frequency(n, frac, alpha):
    k = int(round(frac * n))
    p = clopper_pearson_lower(k, n, alpha)
    assert 0.0 <= p <= k / n + 1e-12


@settings(max_examples=60, deadline=None)
@given(n=st.sampled_from([10, 100, 1000]), frac=st.floats(0.0, 0.99),
       alpha=st.floats(1e-5, 0.2))
def test_cp_monotone_in_k(n, frac, alpha):
    k = int(frac * n)
    assert (clopper_pearson_lower(k + 1, n, alpha)
            >= clopper_pearson_lower(k, n, alpha) - 1e-12)


# ---------------------------------------------------------------- radius


def test_radius_boundary_not_certifiable():
    for p in (0.5, 0.3):
        with pytest.raises(NotCertifiable):
            certified_radius(p, 1.0)


def test_radius_quarter_at_phi_one():
    assert certified_radius(PHI_AT_1, 0.25) == pytest.approx(0.25, abs=1e-6)


def test_radius_monotone_in_p():
    assert certified_radius(0.9, 0.5) < certified_radius(0.99, 0.5)


def test_radius_domain():
    with pytest.raises(ValueError):
        certified_radius(1.0, 0.5)
    with pytest.raises(ValueError):
        certified_radius(0.0, 0.5)


# ---------------------------------------------------------------- certify


def test_certify_constant_classifier_closed_form():
    params = _constant_net(dim=2, classes=3)
    cfg = SmoothingConfig(sigma=0.5, n0=100, n=1000, alpha_cert=0.001)
    out = certify(params, np.zeros(2), cfg, StreamId(13, ("certify", 0)))
    assert out.certified and out.predicted_class == 0
    want_p = 0.001 ** (1 / 1000)
    assert out.p_lower == pytest.approx(want_p, abs=1e-12)
    assert out.radius == pytest.approx(0.5 * std_normal_quantile(want_p),
                                       abs=1e-12)


def test_certify_margin_zero_abstains():
    params = _linear_two_class(np.array([1.0, 0.0]), 0.0)
    cfg = SmoothingConfig(sigma=1.0, n0=50, n=500, alpha_cert=0.001)
    x = np.zeros(2)  # exactly on the decision boundary
    abstained = 0
    for rep in range(100):
        out = certify(params, x, cfg, StreamId(14, ("rep", rep)))
        abstained += not out.certified
        if not out.certified:
            assert out.predicted_class == ABSTAIN and out.radius == 0.0
    assert abstained >= 95


def test_certify_reproducible():
    params = _linear_two_class(np.array([0.3, -0.7]), 0.2)
    cfg = SmoothingConfig(sigma=0.5)
    a = certify(params, np.array([0.1, 0.4]), cfg, StreamId(15, ("pt", 3)))
    b = certify(params, np.array([0.1, 0.4]), cfg, StreamId(15, ("pt", 3)))
    assert a == b


def test_certify_radius_nondecreasing_in_n_unanimous():
    params = _constant_net(dim=2, classes=2)
    radii = []
    for n in (100, 1000, 10000):
        cfg = SmoothingConfig(sigma=1.0, n0=100, n=n, alpha_cert=0.001)
        radii.append(certify(params, np.zeros(2), cfg, StreamId(16)).radius)
    assert radii[0] < radii[1] < radii[2]


def test_outcome_invariants_enforced():
    with pytest.raises(ValueError):
        CertifyOutcome(certified=True, predicted_class=1, radius=0.1,
                       p_lower=0.4)  # certified requires p_lower > 1/2
    with pytest.raises(ValueError):
        CertifyOutcome(certified=False, predicted_class=2, radius=0.0,
                       p_lower=0.4)  # abstain carries the sentinel class
    with pytest.raises(ValueError):
        CertifyOutcome(certified=False, predicted_class=ABSTAIN, radius=0.5,
                       p_lower=0.4)  # abstain carries no radius


def test_smoothing_config_validation():
    with pytest.raises(ValueError):
        SmoothingConfig(sigma=0.5, n0=200, n=100)
    with pytest.raises(ValueError):
        SmoothingConfig(sigma=-1.0)
    with pytest.raises(ValueError):
        SmoothingConfig(sigma=0.5, alpha_cert=1.0)


# ---------------------------------------------------------------- csv


def test_certification_csv_round_trip(tmp_path):
    rows = [
        {"idx": 0, "label": 1, "predicted": 1, "radius": 0.293001,
         "p_lower": 0.933254300797, "correct": 1, "abstain": 0,
         "seconds": 0.0032},
        {"idx": 1, "label": 0, "predicted": ABSTAIN, "radius": 0.0,
         "p_lower": 0.41, "correct": 0, "abstain": 1, "seconds": 0.0041},
    ]
    path = tmp_path / "cert.csv"
    write_certification_csv(path, rows)
    header = path.read_text().splitlines()[0]
    assert header == "idx,label,predicted,radius,p_lower,correct,abstain,seconds"
    back = read_certification_csv(path)
    assert back == rows


def test_certification_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_certification_csv(path)
