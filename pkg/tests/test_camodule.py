import numpy as np
import pytest

from sggadjust.base_model import logits_matrix, train_base
from sggadjust.camodule import (
    TrainConfig, adjust_logits, adjustment_factors, camodule_forward, cross_entropy, init_camodule,
    load_camodule, materialize_adjustment_tensor, save_camodule, train_camodule, vanilla_adjustment,
)
from sggadjust.dataset import Dataset, Scene, SynthConfig, Vocabulary, generate_synthetic
from sggadjust.distributions import batch_lookup, extract_distributions
from sggadjust.errors import ConfigurationError, DomainError, ShapeError
from sggadjust.nn import Tensor, grad_check


def _tiny(n_o=4, n_r=5):
    vocab = Vocabulary(tuple(f"o{i}" for i in range(n_o)), tuple(f"r{k}" for k in range(n_r)))
    rng = np.random.default_rng(0)
    scenes = []
    for s in range(6):
        trip = [(int(rng.integers(n_o)), int(rng.integers(n_r)), int(rng.integers(n_o))) for _ in range(4)]
        scenes.append(Scene.from_triplets(f"s{s}", trip))
    return Dataset(vocab, tuple(scenes))


def _randomize(params, rng, scale=0.3):
    # move away from the symmetric init so every path carries gradient
    for t in params.parameters():
        t.data = t.data + scale * rng.standard_normal(t.shape)


def test_default_blocks_are_128_wide_with_256_hidden():
    p = init_camodule(20, 10)
    blk = p.blocks["t_oc"]
    assert blk.wq.shape == (128, 128)
    assert blk.w1.shape == (128, 256)
    assert p.tensors["out_w"].shape == (128, 10)


def test_init_is_seeded():
    a, b = init_camodule(5, 3, e_dim=8, n_heads=2, seed=4), init_camodule(5, 3, e_dim=8, n_heads=2, seed=4)
    for k, v in a.state_dict().items():
        assert v.tobytes() == b.state_dict()[k].tobytes()


def test_indivisible_heads_rejected():
    with pytest.raises(ConfigurationError):
        init_camodule(5, 3, e_dim=6, n_heads=4)


def test_forward_shape_non_negative_and_pair_determined():
    ds = _tiny()
    d = extract_distributions(ds)
    p = init_camodule(4, 5, e_dim=8, n_heads=2, seed=1)
    _randomize(p, np.random.default_rng(1))
    sub = batch_lookup(d, np.array([0, 1, 0, 3]), np.array([2, 1, 2, 0]))
    f = adjustment_factors(p, sub)
    assert f.shape == (4, 5)
    assert (f >= 0).all()
    np.testing.assert_array_equal(f[0], f[2])


def test_forward_rejects_mismatched_predicate_count():
    d = extract_distributions(_tiny())
    p = init_camodule(4, 3, e_dim=8, n_heads=2)
    with pytest.raises(ShapeError):
        camodule_forward(p, batch_lookup(d, np.array([0]), np.array([1])))


def test_adjust_examples():
    np.testing.assert_array_equal(adjust_logits(np.array([[2.0, 1.0]]), np.array([[0.5, 3.0]])), [[1.0, 3.0]])
    z = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_array_equal(adjust_logits(z, np.ones_like(z)), z)
    pos = np.array([[0.3, 1.2, 0.0]])
    assert adjust_logits(pos, np.full_like(pos, 2.5)).argmax() == pos.argmax()


def test_adjust_softplus_mode_and_errors():
    z = np.array([[0.0, 1.0]])
    out = adjust_logits(z, np.array([[2.0, 1.0]]), "softplus")
    np.testing.assert_allclose(out, [[2 * np.log(2.0), np.log1p(np.e)]], atol=1e-15)
    with pytest.raises(ShapeError):
        adjust_logits(z, np.ones((1, 3)))
    with pytest.raises(ConfigurationError):
        adjust_logits(z, np.ones((1, 2)), "exp")


def test_adjust_accepts_tensors():
    out = adjust_logits(np.array([[1.0, 2.0]]), Tensor(np.array([[3.0, 0.5]])))
    assert isinstance(out, Tensor)
    np.testing.assert_array_equal(out.data, [[3.0, 1.0]])


@pytest.mark.parametrize("mode", ["literal", "softplus"])
def test_end_to_end_loss_gradient(mode):
    ds = _tiny()
    d = extract_distributions(ds)
    rng = np.random.default_rng(2)
    p = init_camodule(4, 5, e_dim=8, n_heads=2, seed=2, dropout=0.0)
    _randomize(p, rng)
    sub = batch_lookup(d, np.array([0, 2, 3]), np.array([1, 1, 0]))
    logits = rng.standard_normal((3, 5))
    gold = np.array([4, 0, 2])
    loss = lambda: cross_entropy(adjust_logits(logits, camodule_forward(p, sub), mode), gold)
    assert grad_check(loss, p.parameters()) <= 1e-4


def test_every_tensor_receives_gradient():
    ds = _tiny()
    d = extract_distributions(ds)
    rng = np.random.default_rng(3)
    p = init_camodule(4, 5, e_dim=8, n_heads=2, seed=3, dropout=0.0)
    _randomize(p, rng)
    sub = batch_lookup(d, np.array([0, 2, 3]), np.array([1, 1, 0]))
    cross_entropy(adjust_logits(rng.standard_normal((3, 5)), camodule_forward(p, sub)), np.array([1, 2, 3])).backward()
    for name, t in p.named_tensors().items():
        assert t.grad is not None and np.abs(t.grad).max() > 0, name


def test_identity_factors_give_plain_cross_entropy():
    ds = _tiny()
    d = extract_distributions(ds)
    z = np.random.default_rng(4).standard_normal((ds.n_instances, 5))
    cfg = TrainConfig(epochs=1, batch_size=ds.n_instances, e_dim=8, n_heads=2, identity_factors=True)
    _, curve = train_camodule(None, d, ds, cfg, logits=z)
    gold = ds.arrays["predicate"]
    shifted = z - z.max(axis=1, keepdims=True)
    plain = -(shifted[np.arange(len(gold)), gold] - np.log(np.exp(shifted).sum(axis=1))).mean()
    assert curve[0] == pytest.approx(plain, abs=1e-12)


def test_training_is_deterministic_and_copy_on_train():
    ds = _tiny()
    d = extract_distributions(ds)
    z = np.random.default_rng(5).standard_normal((ds.n_instances, 5))
    cfg = TrainConfig(epochs=3, e_dim=8, n_heads=2, seed=9)
    pa, ca = train_camodule(None, d, ds, cfg, logits=z)
    pb, cb = train_camodule(None, d, ds, cfg, logits=z)
    assert ca == cb
    for k, v in pa.state_dict().items():
        assert v.tobytes() == pb.state_dict()[k].tobytes()


def test_training_reduces_loss_on_default_corpus():
    ds = generate_synthetic(SynthConfig())
    d = extract_distributions(ds)
    z = logits_matrix(train_base(ds), list(ds))
    drops = []
    for seed in range(5):
        cfg = TrainConfig(epochs=3, e_dim=32, n_heads=4, seed=seed, adjust_mode="softplus")
        _, curve = train_camodule(None, d, ds, cfg, logits=z)
        drops.append(curve[0] - curve[-1])
    assert np.median(drops) > 0


def test_training_rejects_mismatched_sizes():
    ds = _tiny()
    d = extract_distributions(_tiny(n_r=6))
    with pytest.raises(ConfigurationError):
        train_camodule(None, d, ds, TrainConfig(epochs=1, e_dim=8, n_heads=2), logits=np.zeros((24, 5)))
    with pytest.raises(ShapeError):
        train_camodule(None, extract_distributions(ds), ds, TrainConfig(epochs=1, e_dim=8, n_heads=2),
                       logits=np.zeros((3, 5)))


def test_train_config_validation_and_aliases():
    assert TrainConfig.from_dict({"lr": 0.5, "batch": 4, "heads": 2, "e_dim": 8}).learning_rate == 0.5
    for bad in ({"epochs": -1}, {"batch_size": 0}, {"lr": 0.0}, {"e_dim": 6, "n_heads": 4}, {"adjust_mode": "exp"}, {"dropout": 1.0}):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict(bad)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"learning_rat": 0.1})


def test_materialized_tensor_matches_singleton_forward():
    ds = _tiny()
    d = extract_distributions(ds)
    p = init_camodule(4, 5, e_dim=8, n_heads=2, seed=6)
    _randomize(p, np.random.default_rng(6))
    T = materialize_adjustment_tensor(p, d)
    assert T.shape == (4, 5, 4)
    for i in range(4):
        for j in range(4):
            single = adjustment_factors(p, batch_lookup(d, np.array([i]), np.array([j])))[0]
            np.testing.assert_allclose(T[i, :, j], single, atol=1e-12)


def test_symmetric_pairs_share_slices():
    # A and B are interchangeable: same slot counts, pairs A->C and B->C once each
    vocab = Vocabulary(("a", "b", "c"), ("p", "q"))
    ds = Dataset(vocab, (Scene.from_triplets("s0", [(0, 0, 2), (1, 1, 2)]),))
    d = extract_distributions(ds)
    p = init_camodule(3, 2, e_dim=8, n_heads=2, seed=7)
    _randomize(p, np.random.default_rng(7))
    T = materialize_adjustment_tensor(p, d)
    np.testing.assert_allclose(T[0, :, 2], T[1, :, 2], atol=1e-12)
    assert not np.allclose(T[0, :, 2], T[2, :, 0])


def test_factors_are_triplet_level():
    ds = _tiny()
    d = extract_distributions(ds)
    p = init_camodule(4, 5, e_dim=8, n_heads=2, seed=8)
    _randomize(p, np.random.default_rng(8))
    T = materialize_adjustment_tensor(p, d)
    # a relationship-level method would give one column for all pairs
    assert np.ptp(T.reshape(4, 5, 4).transpose(0, 2, 1).reshape(16, 5), axis=0).max() > 1e-3


def test_checkpoint_round_trip(tmp_path):
    p = init_camodule(4, 5, e_dim=8, n_heads=2, seed=10)
    _randomize(p, np.random.default_rng(10))
    save_camodule(p, tmp_path / "c.json", {"seed": 10})
    back = load_camodule(tmp_path / "c.json")
    for k, v in p.state_dict().items():
        assert back.state_dict()[k].tobytes() == v.tobytes()
    assert (back.e_dim, back.n_heads, back.n_predicates) == (8, 2, 5)


def test_vanilla_adjustment_examples():
    np.testing.assert_allclose(vanilla_adjustment([0.5, 0.25, 0.25]), [2.0, 4.0, 4.0])
    np.testing.assert_array_equal(vanilla_adjustment([0.5, 0.0, 0.5]), [2.0, 0.0, 2.0])
    f = vanilla_adjustment(np.full(4, 0.25))
    row = np.array([0.1, 0.7, 0.3, 0.0])
    assert (row * f).argmax() == row.argmax()
    with pytest.raises(DomainError):
        vanilla_adjustment([0.0, 0.0])
