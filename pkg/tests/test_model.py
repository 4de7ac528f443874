import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from syncasd.checkpoint import load_checkpoint, save_checkpoint
from syncasd.model import HEADS, ModelSpec, build_head, product_probability, window_index
from syncasd.nn import DimensionError, no_grad
from syncasd.training import training_loss_gradcheck


def _inputs(T, spec, seed=0):
    r = np.random.default_rng(seed)
    return r.uniform(size=(T, spec.hv, spec.wv)), r.normal(size=(4 * T, spec.ha))


@pytest.mark.parametrize("head", HEADS)
@pytest.mark.parametrize("T", [1, 2, 7, 13])
def test_heads_emit_one_logit_per_frame(head, T):
    spec = ModelSpec(head=head, hv=4, wv=5, ha=3, d=4)
    model = build_head(spec, 0)
    frames, mfcc = _inputs(T, spec)
    p = model.predict_proba(frames, mfcc)
    assert p.shape == (T,)
    assert np.all((p > 0) & (p < 1))


def test_same_seed_same_init_across_flags():
    a = build_head(ModelSpec(d=4, hv=4, wv=4, ha=3), 3).named_params()
    b = build_head(ModelSpec(d=4, hv=4, wv=4, ha=3, pe_cross=False, pe_self=False), 3).named_params()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_param_names_unique():
    for head in HEADS:
        names = [p.name for p in build_head(ModelSpec(head=head, d=4, hv=4, wv=4, ha=3), 0).params()]
        assert len(names) == len(set(names))


@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_sync_backend_pe_off_is_permutation_equivariant(T, seed):
    spec = ModelSpec(d=4, hv=4, wv=4, ha=3, pe_cross=False, pe_self=False)
    model = build_head(spec, seed % 1000)
    r = np.random.default_rng(seed)
    V, A = r.normal(size=(T, 4)), r.normal(size=(T, 4))
    perm = r.permutation(T)
    with no_grad():
        z = model.backend(V, A).data
        zp = model.backend(V[perm], A[perm]).data
    np.testing.assert_allclose(zp, z[perm], atol=1e-9)


def test_sync_backend_pe_on_breaks_equivariance():
    model = build_head(ModelSpec(d=4, hv=4, wv=4, ha=3), 0)
    r = np.random.default_rng(0)
    V, A = r.normal(size=(8, 4)), r.normal(size=(8, 4))
    perm = np.roll(np.arange(8), 3)
    with no_grad():
        z = model.backend(V, A).data
        zp = model.backend(V[perm], A[perm]).data
    assert np.max(np.abs(zp - z[perm])) > 1e-3


def test_backend_rejects_mismatched_embeddings():
    model = build_head(ModelSpec(d=4, hv=4, wv=4, ha=3), 0)
    with pytest.raises(DimensionError):
        model.backend(np.zeros((3, 4)), np.zeros((4, 4)))


def test_audio_rows_must_match_frames():
    spec = ModelSpec(d=4, hv=4, wv=4, ha=3)
    model = build_head(spec, 0)
    frames, mfcc = _inputs(5, spec)
    with pytest.raises(DimensionError):
        model.predict_proba(frames, mfcc[:-2])
    with pytest.raises(DimensionError):
        model.predict_proba(frames[:, :3], mfcc)


def test_window_index_replicates_edges():
    idx = window_index(4, 5)
    np.testing.assert_array_equal(idx[0], [0, 0, 0, 1, 2])
    np.testing.assert_array_equal(idx[3], [1, 2, 3, 3, 3])
    assert window_index(30).shape == (30, 11)


def test_product_probability_matches_factors():
    model = build_head(ModelSpec(head="product", d=4, hv=4, wv=4, ha=3), 1)
    frames, mfcc = _inputs(6, model.spec)
    with no_grad():
        V, A = model.encode(frames, mfcc)
        za, zv = model.factor_logits(V, A)
    sig = lambda z: 1 / (1 + np.exp(-z))
    np.testing.assert_allclose(model.predict_proba(frames, mfcc), product_probability(sig(za.data), sig(zv.data)), rtol=1e-12)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.001, 0.2))
def test_product_probability_monotone(pa, pv, dp):
    p = product_probability(pa, pv)
    assert 0 < p < 1
    assert product_probability(min(pa + dp, 1.0), pv) >= p
    assert product_probability(pa, min(pv + dp, 1.0)) >= p


@pytest.mark.parametrize("head", ["product", "rothnet"])
def test_training_loss_gradcheck_small(head):
    spec = ModelSpec(head=head, hv=4, wv=4, ha=3, d=4)
    assert training_loss_gradcheck(spec, seed=1, lengths=(5, 6)) < 1e-5


@pytest.mark.parametrize("head", HEADS)
def test_checkpoint_roundtrip(tmp_path, head):
    model = build_head(ModelSpec(head=head, d=4, hv=4, wv=4, ha=3, pe_self=False), 5)
    save_checkpoint(model, tmp_path / "ck", extra={"note": 1})
    back, index = load_checkpoint(tmp_path / "ck")
    assert back.spec == model.spec and index["extra"] == {"note": 1}
    for name, p in model.named_params().items():
        np.testing.assert_array_equal(back.named_params()[name].data, p.data.astype(np.float32))
    save_checkpoint(back, tmp_path / "again")
    for f in (tmp_path / "ck").iterdir():
        if f.name != "index.json":
            assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()


def test_checkpoint_detects_corruption(tmp_path):
    model = build_head(ModelSpec(d=4, hv=4, wv=4, ha=3), 0)
    save_checkpoint(model, tmp_path)
    path = tmp_path / "cls.W.avt"
    data = bytearray(path.read_bytes())
    data[-1] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(Exception, match="checksum"):
        load_checkpoint(tmp_path)
