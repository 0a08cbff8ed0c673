import itertools
import random

import pytest

from mixedraft.crypto import (
    DEFAULT_GROUP,
    TOY_GROUP,
    CryptoError,
    ParticipationBitmap,
    Signature,
    challenge,
    cosi_aggregate_commitments,
    cosi_aggregate_responses,
    cosi_challenge,
    cosi_commit,
    cosi_respond,
    cosi_verify,
    cosi_verify_partial,
    encode_fields,
    keygen,
    keypair_from_secret,
    sign,
    sign_with_nonce,
    verify,
)

G = TOY_GROUP


def test_toy_keypair():
    assert keypair_from_secret(3, G).pk == 8
    assert keypair_from_secret(4, G).pk == 16


def test_keygen_is_deterministic_and_nonzero():
    assert keygen("node-1", G) == keygen("node-1", G)
    secrets = {keygen(s, G).sk for s in range(200)}
    assert 0 not in secrets
    assert secrets <= set(range(1, G.q))


def test_secret_key_range_checked():
    with pytest.raises(CryptoError):
        keypair_from_secret(0, G)
    with pytest.raises(CryptoError):
        keypair_from_secret(G.q, G)


def test_toy_schnorr_vector():
    sig = sign_with_nonce(3, 5, b"m", G, forced_challenge=7)
    assert (sig.commitment, sig.response) == (9, 4)
    assert verify(8, b"m", sig, G, forced_challenge=7)


def test_toy_schnorr_wrong_public_key():
    sig = sign_with_nonce(3, 5, b"m", G, forced_challenge=7)
    assert not verify(keypair_from_secret(4, G).pk, b"m", sig, G, forced_challenge=7)


def test_verify_returns_false_on_garbage():
    kp = keygen(1)
    assert not verify(kp.pk, b"m", None)
    assert not verify(kp.pk, b"m", Signature(0, 1))
    assert not verify(kp.pk, b"m", Signature(1, DEFAULT_GROUP.q))


def test_nonce_range_checked():
    with pytest.raises(CryptoError):
        sign_with_nonce(3, 0, b"m", G)


def test_challenge_is_deterministic():
    assert challenge(DEFAULT_GROUP, 12345, b"abc") == challenge(DEFAULT_GROUP, 12345, b"abc")
    assert 0 <= challenge(G, 9, b"abc") < G.q


def test_encode_fields_is_length_prefixed():
    assert encode_fields(1, 23) != encode_fields(12, 3)
    assert encode_fields(b"ab", b"c") != encode_fields(b"a", b"bc")
    assert encode_fields(1, 2) == encode_fields(1, 2)


def test_sign_verify_and_mutation_fuzz():
    for seed in range(1000):
        rng = random.Random(seed)
        kp = keygen(seed)
        msg = rng.randbytes(rng.randrange(1, 64))
        sig = sign(kp.sk, msg, nonce_seed=seed)
        assert verify(kp.pk, msg, sig)
        bit = rng.randrange(len(msg) * 8)
        mutated = bytearray(msg)
        mutated[bit // 8] ^= 1 << (bit % 8)
        assert not verify(kp.pk, bytes(mutated), sig)


def test_two_signer_aggregate_vector():
    pks = [keypair_from_secret(3, G).pk, keypair_from_secret(4, G).pk]
    commitments = [G.exp(G.g, 5), G.exp(G.g, 2)]
    v_hat = cosi_aggregate_commitments(commitments, G)
    assert v_hat == 13
    r_hat = cosi_aggregate_responses([cosi_respond(5, 7, 3, G), cosi_respond(2, 7, 4, G)], G)
    assert r_hat == 1
    bitmap = ParticipationBitmap.from_members(2, [0, 1])
    assert cosi_verify(pks, bitmap, b"m", v_hat, r_hat, G, forced_challenge=7)


def test_omitted_response_fails():
    pks = [8, 16]
    v_hat = cosi_aggregate_commitments([G.exp(G.g, 5), G.exp(G.g, 2)], G)
    only_first = cosi_aggregate_responses([cosi_respond(5, 7, 3, G)], G)
    bitmap = ParticipationBitmap.from_members(2, [0, 1])
    assert not cosi_verify(pks, bitmap, b"m", v_hat, only_first, G, forced_challenge=7)


def test_empty_aggregation_rejected():
    with pytest.raises(CryptoError):
        cosi_aggregate_commitments([], G)
    with pytest.raises(CryptoError):
        cosi_aggregate_responses([], G)
    assert not cosi_verify([8, 16], ParticipationBitmap.from_members(2, []), b"m", 1, 0, G)


def test_bitmap_length_must_match():
    assert not cosi_verify([8, 16, 4], ParticipationBitmap.from_members(2, [0, 1]), b"m", 13, 1, G,
                           forced_challenge=7)


def test_single_participant_matches_plain_schnorr():
    kp = keygen("solo")
    msg = b"entry"
    v, V = cosi_commit(kp.sk, "round-1")
    c = cosi_challenge(V, msg)
    r = cosi_respond(v, c, kp.sk)
    bitmap = ParticipationBitmap.from_members(1, [0])
    assert cosi_verify([kp.pk], bitmap, msg, V, r)
    assert verify(kp.pk, msg, Signature(V, r))
    assert cosi_verify_partial(kp.pk, V, r, c)


def test_subset_aggregation_brute_force():
    secrets = [1, 3, 4, 7, 9]
    pks = [G.exp(G.g, s) for s in secrets]
    nonces = [2, 5, 6, 8, 10]
    c = 7
    for size in range(1, 6):
        for subset in itertools.combinations(range(5), size):
            bitmap = ParticipationBitmap.from_members(5, subset)
            v_hat = cosi_aggregate_commitments([G.exp(G.g, nonces[i]) for i in subset], G)
            honest = [cosi_respond(nonces[i], c, secrets[i], G) for i in subset]
            assert cosi_verify(pks, bitmap, b"m", v_hat, cosi_aggregate_responses(honest, G), G, c)
            for pos, i in enumerate(subset):
                for wrong_c in range(G.q):
                    if wrong_c == c:
                        continue
                    rs = list(honest)
                    rs[pos] = cosi_respond(nonces[i], wrong_c, secrets[i], G)
                    r_hat = cosi_aggregate_responses(rs, G)
                    assert not cosi_verify(pks, bitmap, b"m", v_hat, r_hat, G, c)


def test_bitmap_helpers():
    bm = ParticipationBitmap.from_members(5, [0, 3])
    assert str(bm) == "10010"
    assert bm.popcount == 2
    assert bm.members == (0, 3)
    assert 3 in bm and 1 not in bm and 9 not in bm
    with pytest.raises(CryptoError):
        ParticipationBitmap.from_members(2, [2])
