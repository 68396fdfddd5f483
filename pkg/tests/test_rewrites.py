import itertools

from hypothesis import given, strategies as st

from predguide.rewrites import (
    SINGLE_SCENE_CLAUSE, RewritePool, build_pool, guard_prompt, next_rewrite, requests_multi_panel, select_initial,
)


def test_build_pool_filters_in_order():
    pool = build_pool("a dog", ["", "a dog", "A  Dog", "a puppy", "a puppy", "one dog", "  "])
    assert pool.rewrites == ["a puppy", "one dog"]
    assert len(build_pool("x", [f"r{i}" for i in range(12)])) == 8


def test_build_pool_falls_back_to_source():
    assert build_pool("a dog", ["", "a dog"]).rewrites == ["a dog"]


@given(st.lists(st.text(max_size=8), max_size=20), st.text(max_size=8))
def test_pool_invariants(raw, source):
    pool = build_pool(source, raw)
    keys = [" ".join(r.split()).lower() for r in pool.rewrites]
    assert len(set(keys)) == len(keys) and 1 <= len(pool) <= 8
    if pool.rewrites != [source]:
        assert all(keys) and " ".join(source.split()).lower() not in keys


def test_select_initial():
    pool = build_pool("s", ["only"])
    assert select_initial(pool, 12345, 7) == 0
    for size, pid, seed in itertools.product(range(1, 9), range(0, 40, 7), range(5)):
        pool = build_pool("s", [f"r{i}" for i in range(size)])
        idx = select_initial(pool, pid, seed)
        assert idx == (pid ^ seed) % size and pool.used == {idx}
    assert select_initial(build_pool("s", ["a", "b", "c"]), "ff", 1) == (0xFF ^ 1) % 3


def test_next_rewrite_unused_first_then_cycles():
    pool = RewritePool("s", ["a", "b", "c", "d"])
    pool.mark(0)
    pool.mark(1)
    pool.mark(3)
    assert next_rewrite(pool) == 2
    assert next_rewrite(pool) == 3
    assert [next_rewrite(pool) for _ in range(3)] == [0, 1, 2]
    single = RewritePool("s", ["a"])
    assert [next_rewrite(single) for _ in range(3)] == [0, 0, 0]


def test_guard_prompt():
    assert guard_prompt("a dog") == f"a dog {SINGLE_SCENE_CLAUSE}"
    assert guard_prompt(guard_prompt("a dog")) == guard_prompt("a dog")
    assert guard_prompt("a four-panel comic of a dog") == "a four-panel comic of a dog"
    # the source prompt decides, not the rewrite
    assert guard_prompt("a dog in squares", "a grid of dogs") == "a dog in squares"
    assert requests_multi_panel("Storyboards of a heist")
    assert not requests_multi_panel("a paneled wall")
