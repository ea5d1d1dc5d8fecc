import numpy as np
import pytest

from encoding.sae_encoder import (
    SaeWeights,
    TokenActivationRecord,
    decode,
    encode,
    encode_batch,
    load_weights,
    reconstruction_error,
    save_weights,
)
from exceptions import FormatError, InvalidParameterError


def test_relu_identity_keeps_positive_entries(identity_weights):
    record = encode(np.array([1.0, -2.0, 3.0]), identity_weights)
    assert record.entries == [(0, 1.0), (2, 3.0)]


def test_topk_keeps_largest(identity_weights):
    eye = np.eye(3)
    w = SaeWeights(eye, np.zeros(3), eye, np.zeros(3), activation_kind="topk", k=1)
    assert encode(np.array([1.0, -2.0, 3.0]), w).entries == [(2, 3.0)]


def test_topk_tie_breaks_by_lower_id():
    eye = np.eye(4)
    w = SaeWeights(eye, np.zeros(4), eye, np.zeros(4), activation_kind="topk", k=2)
    assert encode(np.array([2.0, 2.0, 2.0, 1.0]), w).entries == [(0, 2.0), (1, 2.0)]


def test_topk_never_exceeds_k(random_weights, rng):
    w = random_weights(activation_kind="topk", k=3)
    for record in encode_batch(rng.normal(size=(40, w.d_model)), w):
        assert len(record) <= 3
        assert np.all(record.values > 0)
        assert np.all(np.diff(record.latent_ids) > 0)


def test_batchtopk_is_per_token_topk(random_weights, rng):
    topk = random_weights(activation_kind="topk", k=4)
    batch = SaeWeights(
        topk.w_enc, topk.b_enc, topk.w_dec, topk.b_dec, activation_kind="batchtopk", k=4
    )
    x = rng.normal(size=(10, topk.d_model))
    assert encode_batch(x, topk) == encode_batch(x, batch)


def test_all_negative_input_gives_empty_record(identity_weights):
    record = encode(np.array([-1.0, -0.5, -3.0]), identity_weights)
    assert len(record) == 0
    assert np.array_equal(decode(record, identity_weights), np.zeros(3))


def test_encode_batch_matches_encode(random_weights, rng):
    w = random_weights()
    x = rng.normal(size=(5, w.d_model))
    batch = encode_batch(x, w)
    for n, row in enumerate(x):
        single = encode(row, w, token_index=n)
        assert single.token_index == batch[n].token_index == n
        np.testing.assert_array_equal(single.latent_ids, batch[n].latent_ids)
        np.testing.assert_allclose(single.values, batch[n].values)


def test_wrong_width_is_rejected(identity_weights):
    with pytest.raises(InvalidParameterError):
        encode(np.ones(4), identity_weights)


def test_decode_identity_reconstructs_positive_part(identity_weights):
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(decode(encode(x, identity_weights), identity_weights), [1.0, 0.0, 3.0])
    assert reconstruction_error(x, identity_weights) == pytest.approx(2.0)


def test_decode_rejects_out_of_range_latent(identity_weights):
    with pytest.raises(InvalidParameterError):
        decode(TokenActivationRecord(0, np.array([5]), np.array([1.0])), identity_weights)


def test_record_rejects_unsorted_or_non_positive():
    with pytest.raises(InvalidParameterError):
        TokenActivationRecord(0, np.array([3, 1]), np.array([1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        TokenActivationRecord(0, np.array([1]), np.array([0.0]))


def test_weights_round_trip(tmp_path, random_weights):
    w = random_weights(activation_kind="topk", k=5)
    path = str(tmp_path / "w.saew")
    save_weights(path, w)
    loaded = load_weights(path)
    assert loaded.activation_kind == w.activation_kind
    assert loaded.k == 5
    for name in ("w_enc", "b_enc", "w_dec", "b_dec"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(w, name))


def test_truncated_weights_name_the_tensor(tmp_path, random_weights):
    path = str(tmp_path / "w.saew")
    save_weights(path, random_weights())
    with open(path, "rb") as file:
        blob = file.read()
    with open(path, "wb") as file:
        file.write(blob[:-4])
    with pytest.raises(FormatError, match="b_dec.*tensor length mismatch"):
        load_weights(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "w.saew"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        load_weights(str(path))


def test_mismatched_shapes_are_rejected():
    with pytest.raises(FormatError, match="b_enc"):
        SaeWeights(np.eye(3), np.zeros(2), np.eye(3), np.zeros(3))


def test_topk_needs_k():
    with pytest.raises(FormatError):
        SaeWeights(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3), activation_kind="topk")


def test_weights_are_read_only(identity_weights):
    with pytest.raises(ValueError):
        identity_weights.w_enc[0, 0] = 2.0
