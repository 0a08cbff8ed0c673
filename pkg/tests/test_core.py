import pytest

from mixedraft.core import (
    GENESIS_DIGEST,
    ClusterConfig,
    ConfigError,
    LogEntry,
    ReplicatedLog,
    Request,
    chain_digest,
    derive_params,
    election_quorum_intersection,
    is_more_up_to_date,
)


@pytest.mark.parametrize("n,f,q_rep,q_elec", [(5, 1, 3, 4), (11, 3, 7, 8), (20, 6, 13, 14), (47, 15, 31, 32)])
def test_derive_params(n, f, q_rep, q_elec):
    p = derive_params(n)
    assert (p.f, p.q_rep, p.q_elec) == (f, q_rep, q_elec)


@pytest.mark.parametrize("n", [0, 1, 3, 4, 6, 7, 10])
def test_derive_params_rejects_bad_sizes(n):
    with pytest.raises(ConfigError):
        derive_params(n)


def test_election_quorums_overlap_in_f_plus_2():
    for f in range(1, 8):
        n = 3 * f + 2
        assert election_quorum_intersection(n, 2 * f + 2) == f + 2
        assert election_quorum_intersection(n, 2 * f + 1) == f


def test_cluster_config_needs_f_plus_1_tee():
    cfg = ClusterConfig.build(5, [True, True, False, False, False])
    assert cfg.n_tee == 2 and cfg.q_elec == 4
    with pytest.raises(ConfigError):
        ClusterConfig.build(5, [True, False, False, False, False])
    with pytest.raises(ConfigError):
        ClusterConfig.build(5, [True, True])


def test_cluster_config_quorum_override():
    assert ClusterConfig.build(5, [True] * 5, q_elec=3).q_elec == 3
    with pytest.raises(ConfigError):
        ClusterConfig.build(5, [True] * 5, q_elec=6)


def test_up_to_date_rule():
    assert is_more_up_to_date((3, 1), (2, 9))
    assert is_more_up_to_date((2, 5), (2, 5))
    assert is_more_up_to_date((2, 6), (2, 5))
    assert not is_more_up_to_date((2, 4), (2, 5))
    assert not is_more_up_to_date((1, 100), (2, 1))


def _entry(term, index, rid):
    return LogEntry(term, index, (Request(rid, b"x%d" % rid),))


def test_log_chain_digest_covers_prefix():
    a, b = ReplicatedLog(), ReplicatedLog()
    a.append(_entry(1, 1, 1))
    b.append(_entry(1, 1, 2))
    da = a.append(_entry(1, 2, 3))
    db = b.append(_entry(1, 2, 3))
    assert da != db
    assert a.digest(0) == GENESIS_DIGEST
    assert a.digest(1) == chain_digest(GENESIS_DIGEST, 1, 1, _entry(1, 1, 1).payload_digest)


def test_log_append_rules():
    log = ReplicatedLog()
    log.append(_entry(2, 1, 1))
    with pytest.raises(ValueError):
        log.append(_entry(2, 3, 2))
    with pytest.raises(ValueError):
        log.append(_entry(1, 2, 2))
    assert log.position == (2, 1)


def test_log_commit_and_truncate():
    log = ReplicatedLog()
    for i in range(1, 5):
        log.append(_entry(1, i, i))
    assert [e.index for e in log.commit_to(2)] == [1, 2]
    assert log.commit_to(1) == []
    assert [e.index for e in log.commit_to(99)] == [3, 4]
    log2 = ReplicatedLog()
    for i in range(1, 4):
        log2.append(_entry(1, i, i))
    log2.commit_to(1)
    with pytest.raises(ValueError):
        log2.truncate_from(1)
    log2.truncate_from(2)
    assert log2.last_index == 1
    assert log2.entry(2) is None
