import numpy as np
import pytest

from survcontrast import autodiff as ad
from survcontrast.autodiff import Tensor
from survcontrast.model import (
    ModelConfig,
    HazardModel,
    init_model,
    pmf_from_hazard,
    risk_from_hazard,
    survival_from_hazard,
)


def small_config(**kw):
    base = dict(input_dim=6, n_time_bins=11, hidden_dim=8, depth=2, embedding_dim=4)
    base.update(kw)
    return ModelConfig(**base)


def test_encode_zeroed_final_layer_gives_bias():
    model = init_model(small_config(), seed=0)
    w, b = model.encoder.layers[-1]
    w.values[...] = 0.0
    b.values[...] = np.arange(w.cols)
    h = model.encode(Tensor(np.random.default_rng(0).uniform(size=(3, 6))))
    np.testing.assert_array_equal(h.values, np.tile(np.arange(w.cols), (3, 1)))


def test_identical_rows_identical_latents_and_embeddings():
    model = init_model(small_config(), seed=1)
    x = np.tile(np.random.default_rng(1).uniform(size=(1, 6)), (4, 1))
    h = model.encode(Tensor(x))
    z = model.project(h)
    for mat in (h.values, z.values):
        assert np.all(mat == mat[0])


def test_forward_finite_on_random_inputs():
    model = init_model(small_config(), seed=2)
    x = np.random.default_rng(2).normal(scale=0.1, size=(200, 6))
    lam = model.hazard_curve(x)
    emb = model.embed(x)
    assert np.all(np.isfinite(lam)) and np.all(np.isfinite(emb))


def test_embedding_norms_positive():
    model = init_model(small_config(hidden_dim=32), seed=3)
    x = np.random.default_rng(3).uniform(size=(10_000, 6))
    z = model.embed(x)
    assert np.linalg.norm(z, axis=1).min() > 0


def test_embedding_dim_respected():
    model = init_model(small_config(embedding_dim=2), seed=4)
    assert model.embed(np.zeros((3, 6))).shape == (3, 2)


def test_encode_dimension_mismatch():
    model = init_model(small_config(), seed=0)
    with pytest.raises(ad.ShapeError):
        model.encode(Tensor(np.zeros((2, 5))))


def test_hazard_zero_logits_half():
    model = init_model(small_config(), seed=5)
    for w, b in model.hazard_net.layers:
        w.values[...] = 0.0
        b.values[...] = 0.0
    lam = model.hazard_curve(np.random.default_rng(5).uniform(size=(3, 6)))
    np.testing.assert_array_equal(lam, np.full((3, 11), 0.5))


def test_hazard_saturation_clamped():
    model = init_model(small_config(depth=1), seed=6)
    w, b = model.hazard_net.layers[-1]
    w.values[...] = 0.0
    b.values[...] = 1e4
    lam = model.hazard_curve(np.zeros((1, 6)))
    np.testing.assert_array_equal(lam, np.full((1, 11), 1.0 - 1e-7))


def test_hazard_output_length():
    model = init_model(small_config(n_time_bins=21), seed=7)
    assert model.hazard_curve(np.zeros((2, 6))).shape == (2, 21)


def test_survival_no_risk():
    lam = np.zeros((1, 5))
    np.testing.assert_array_equal(survival_from_hazard(lam), np.ones((1, 5)))
    np.testing.assert_array_equal(risk_from_hazard(lam), np.zeros((1, 5)))


def test_survival_constant_half():
    lam = np.full((1, 5), 0.5)
    surv = survival_from_hazard(lam)
    assert surv[0, 2] == pytest.approx(0.125)
    assert risk_from_hazard(lam)[0, 2] == pytest.approx(0.875)


def test_survival_monotone_random():
    lam = np.random.default_rng(8).uniform(size=(50, 30))
    surv = survival_from_hazard(lam)
    assert np.all(np.diff(surv, axis=1) <= 0)
    assert np.all(np.diff(risk_from_hazard(lam), axis=1) >= 0)
    assert np.all((surv > 0) & (surv < 1))


def test_survival_matches_loop_oracle():
    rng = np.random.default_rng(9)
    lam = rng.uniform(size=(20, 12))
    surv = survival_from_hazard(lam)
    for i in range(lam.shape[0]):
        acc = 1.0
        for t in range(lam.shape[1]):
            acc *= 1.0 - lam[i, t]
            assert abs(surv[i, t] - acc) < 1e-12


def test_pmf_cases():
    lam = np.full((1, 5), 0.5)
    assert pmf_from_hazard(lam, [0])[0] == pytest.approx(0.5)
    assert pmf_from_hazard(lam, [2])[0] == pytest.approx(0.125)
    with pytest.raises(ValueError):
        pmf_from_hazard(lam, [5])


def test_pmf_survival_normalization_identity():
    rng = np.random.default_rng(10)
    lam = rng.uniform(size=(200, 25))
    total = pmf_from_hazard(lam).sum(axis=1) + survival_from_hazard(lam)[:, -1]
    np.testing.assert_allclose(total, 1.0, atol=1e-10)


def test_risk_survival_complement_exact():
    lam = np.random.default_rng(11).uniform(size=(10, 8))
    np.testing.assert_array_equal(risk_from_hazard(lam) + survival_from_hazard(lam), np.ones((10, 8)))


def test_init_deterministic():
    a = init_model(small_config(), seed=42)
    b = init_model(small_config(), seed=42)
    for pa, pb in zip(a.all_params(), b.all_params()):
        np.testing.assert_array_equal(pa.values, pb.values)


def test_init_he_scaling():
    config = ModelConfig(input_dim=64, n_time_bins=11, hidden_dim=64, depth=3, embedding_dim=8)
    model = init_model(config, seed=0)
    for w, b in model.encoder.layers:
        assert np.all(b.values == 0.0)
        if w.values.size >= 256:
            expected = np.sqrt(2.0 / w.rows)
            assert abs(w.values.std() - expected) / expected < 0.10


def test_depth_equals_weight_matrix_count():
    model = init_model(small_config(depth=3), seed=0)
    assert len(model.encoder.layers) == 3
    assert len(model.hazard_net.layers) == 3
    assert len(model.projection.layers) == 2


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = init_model(small_config(), seed=13)
    # perturb away from init so the roundtrip is non-trivial
    rng = np.random.default_rng(14)
    for p in model.all_params():
        p.values += rng.normal(size=p.values.shape)
    path = tmp_path / "model.json"
    model.save(path)
    loaded = HazardModel.load(path)
    assert loaded.config == model.config
    for pa, pb in zip(model.all_params(), loaded.all_params()):
        np.testing.assert_array_equal(pa.values, pb.values)
