"""Smoke test for the secgraph extension module.

Build and install first, for example:

    pip install maturin
    maturin develop -m crates/py/Cargo.toml
"""

import os
import tempfile

import secgraph

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "..", "cli", "fixtures")


def main():
    triples = secgraph.parse_snap(os.path.join(FIXTURES, "toy_edges.txt"))
    assert len(triples) == 14, triples

    g = secgraph.SecGraph(seed=1)
    for keyword, id_in, weight in triples:
        g.insert(keyword, id_in, weight)
    assert g.count("2:friendship") == 3
    assert [i for i, _ in g.search(["3:friendship", "5:friendship"])] == [2]
    assert g.last_op_counts()["token_roundtrips"] == 1

    g.delete("2:friendship", 5)
    assert [i for i, _ in g.search(["2:friendship"])] == [1, 3]
    try:
        g.delete("2:friendship", 5)
    except KeyError:
        pass
    else:
        raise AssertionError("deleting a missing pair should raise KeyError")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "toy.edb")
        g.save(path)
        h = secgraph.SecGraph.open(path)
        assert h.search(["3:friendship", "5:friendship"]) == g.search(["3:friendship", "5:friendship"])

    f = secgraph.SecGraph(mode="fuzzy", seed=2)
    for line in open(os.path.join(FIXTURES, "toy_names.tsv"), encoding="utf-8"):
        vid, name = line.rstrip("\n").split("\t")
        f.add_name(int(vid), name)
    assert sorted(i for i, _ in f.fuzzy_search("ha")) == [1, 5]
    assert secgraph.split_name("Harry", 2)[:2] == [("#h", 1), ("ha", 2)]

    oxt = secgraph.Oxt(triples, seed=3)
    hits, roundtrips = oxt.search(["3:friendship", "5:friendship"])
    assert [i for i, _ in hits] == [2] and roundtrips == 2

    print("smoke test passed:", g)


if __name__ == "__main__":
    main()
