import random
from pathlib import Path

import pytest

from filecomm.FileComm_Base import DuplicateRank, GapInRanks, ParseError, RankOutOfRange, UnknownNode
from filecomm.fc_topology import HostRankMap, RankEntry, load_map, parse_map, write_map


def random_map(rng: random.Random) -> HostRankMap:
    np_ = rng.randint(1, 24)
    nodes = rng.randint(1, np_)
    return HostRankMap(tuple(RankEntry(f"n{k}", Path(f"/tmp/job/n{k}"))
                             for k in (rng.randrange(nodes) for _ in range(np_))))


def test_load_two_line_file(tmp_path):
    f = tmp_path / "hostmap.txt"
    f.write_text("0 vnode0 /tmp/j/v0\n1 vnode1 /tmp/j/v1")
    hmap = load_map(f)
    assert hmap.np == 2
    assert hmap.node_of(1) == "vnode1"
    assert hmap.msg_dir_of(0) == Path("/tmp/j/v0")


def test_comments_blank_lines_and_any_order():
    hmap = parse_map("# job 7\n\n2 b /d/b\n0 a /d/a  # leader\n1 a /d/a\n")
    assert [e.node for e in hmap.entries] == ["a", "a", "b"]


def test_missing_rank(tmp_path):
    with pytest.raises(GapInRanks):
        parse_map("0 a /d\n2 a /d\n")


def test_duplicate_rank():
    with pytest.raises(DuplicateRank):
        parse_map("0 a /d\n0 b /e\n")


@pytest.mark.parametrize("text", ["0 a\n", "x a /d\n", "0 a relative/dir\n", "0 a /d extra\n"])
def test_malformed_lines(text):
    with pytest.raises(ParseError):
        parse_map(text)


def test_write_then_load_round_trip(tmp_path):
    rng = random.Random(5)
    for i in range(50):
        hmap = random_map(rng)
        f = tmp_path / f"map{i}.txt"
        write_map(hmap, f)
        assert load_map(f) == hmap


def test_colocated_pairs(two_node_map):
    assert two_node_map.colocated(2, 3)
    assert not two_node_map.colocated(0, 2)
    assert all(two_node_map.colocated(r, r) for r in range(4))


def test_colocated_out_of_range(two_node_map):
    with pytest.raises(RankOutOfRange):
        two_node_map.colocated(0, 4)


def test_colocated_is_equivalence():
    rng = random.Random(11)
    for _ in range(30):
        hmap = random_map(rng)
        ranks = range(hmap.np)
        for a in ranks:
            assert hmap.colocated(a, a)
            for b in ranks:
                assert hmap.colocated(a, b) == hmap.colocated(b, a)
                for c in ranks:
                    if hmap.colocated(a, b) and hmap.colocated(b, c):
                        assert hmap.colocated(a, c)


def test_leaders_of_contiguous_pairs():
    hmap = HostRankMap(tuple(RankEntry(f"n{r // 2}", Path(f"/j/n{r // 2}")) for r in range(8)))
    assert {hmap.leader_of(n) for n in hmap.nodes()} == {0, 2, 4, 6}


def test_single_node_leader_is_zero():
    hmap = HostRankMap(tuple(RankEntry("solo", Path("/j")) for _ in range(5)))
    assert hmap.leader_of("solo") == 0


def test_round_robin_leaders():
    hmap = HostRankMap(tuple(RankEntry(f"n{r % 3}", Path(f"/j/n{r % 3}")) for r in range(6)))
    assert hmap.node_peers(0) == [0, 3]
    assert sorted(hmap.leader_of(n) for n in hmap.nodes()) == [0, 1, 2]


def test_unknown_node(two_node_map):
    with pytest.raises(UnknownNode):
        two_node_map.leader_of("vnode9")


def test_node_peers(two_node_map):
    assert two_node_map.node_peers(3) == [2, 3]
    assert HostRankMap((RankEntry("a", Path("/a")),)).node_peers(0) == [0]


def test_peers_partition_and_leader_idempotence():
    rng = random.Random(21)
    for _ in range(50):
        hmap = random_map(rng)
        groups = [hmap.node_peers(hmap.leader_of(n)) for n in hmap.nodes()]
        flat = [r for g in groups for r in g]
        assert sorted(flat) == list(range(hmap.np))
        assert len(flat) == len(set(flat))
        for n in hmap.nodes():
            leader = hmap.leader_of(n)
            assert hmap.leader_of(hmap.node_of(leader)) == leader
            assert leader == min(hmap.node_peers(leader))


def test_node_id_must_not_contain_whitespace():
    with pytest.raises(ParseError):
        HostRankMap((RankEntry("bad node", Path("/a")),))
