import json
import os

import pytest

from fuserec import corpus as cp
from fuserec.corpus import (
    CorpusError,
    Interaction,
    SplitSpec,
    Vocab,
    build_corpus,
    build_examples,
    k_core_filter,
    leave_one_out_split,
    locate_placeholders,
    parse_interactions,
    render_prompt,
)

from synthdata import two_genre_data


def brute_force_k_core(data, k):
    """Independent fixpoint oracle: alternately drop sparse users and items
    until nothing changes."""
    current = list(data)
    while True:
        users = {}
        for it in current:
            users[it.user_id] = users.get(it.user_id, 0) + 1
        kept = [it for it in current if users[it.user_id] >= k]
        items = {}
        for it in kept:
            items[it.item_id] = items.get(it.item_id, 0) + 1
        kept = [it for it in kept if items[it.item_id] >= k]
        if len(kept) == len(current):
            return current
        current = kept


class TestParsing:
    def test_ml_dat_line(self, tmp_path):
        path = tmp_path / "ratings.dat"
        path.write_text("1::1193::5::978300760\n")
        result = parse_interactions(str(path), "ml-dat")
        assert result.interactions == [Interaction(1, 1193, 5, 978300760, None)]
        assert result.catalog[1193] == "item 1193"

    def test_tsv_line(self, tmp_path):
        path = tmp_path / "ratings.tsv"
        path.write_text("7\t42\t3\t100\n")
        result = parse_interactions(str(path), "tsv")
        assert result.interactions == [Interaction(7, 42, 3, 100, None)]

    def test_jsonl_review_text_becomes_comment(self, tmp_path):
        path = tmp_path / "reviews.jsonl"
        rec = {"user": "a", "item": "b", "rating": 5, "timestamp": 9, "title": "some book", "review_text": "great book"}
        path.write_text(json.dumps(rec) + "\n")
        result = parse_interactions(str(path), "review-jsonl")
        assert result.interactions[0].comment == "great book"
        assert result.catalog[0] == "some book"

    def test_duplicate_triple_dropped_and_counted(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("1\t2\t5\t10\n1\t2\t4\t10\n1\t2\t5\t11\n")
        result = parse_interactions(str(path), "tsv")
        assert result.duplicates_dropped == 1
        assert len(result.interactions) == 2

    def test_sorted_by_user_then_time(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("2\t1\t5\t10\n1\t2\t5\t30\n1\t3\t5\t20\n")
        result = parse_interactions(str(path), "tsv")
        assert [(it.user_id, it.timestamp) for it in result.interactions] == [(1, 20), (1, 30), (2, 10)]

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("1\t2\t5\t10\nbroken line\n")
        with pytest.raises(CorpusError, match=":2"):
            parse_interactions(str(path), "tsv")

    def test_rating_out_of_range(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("1\t2\t6\t10\n")
        with pytest.raises(CorpusError, match="outside"):
            parse_interactions(str(path), "tsv")


def mk(u, v, t=0, r=5, c=None):
    return Interaction(u, v, r, t, c)


CASCADE_FIXTURE = [
    mk(0, 10, 1), mk(0, 11, 2),
    mk(1, 10, 1), mk(1, 11, 2),
    mk(2, 11, 1), mk(2, 12, 2),
    mk(3, 12, 1), mk(3, 13, 2),
    mk(4, 13, 1), mk(4, 14, 2),
]


class TestKCore:
    def test_user_below_threshold_removed(self):
        data = [mk(0, v, t=v) for v in range(19)] + [mk(1, v, t=v) for v in range(25)]
        for iterative in (False, True):
            out = k_core_filter(data, 20, iterative)
            assert all(it.user_id != 0 for it in out)

    def test_k_zero_is_identity(self):
        assert k_core_filter(CASCADE_FIXTURE, 0) == CASCADE_FIXTURE
        assert k_core_filter(CASCADE_FIXTURE, 0, iterative=True) == CASCADE_FIXTURE

    def test_single_pass_and_iterative_differ_on_cascade(self):
        single = k_core_filter(CASCADE_FIXTURE, 2, iterative=False)
        iterative = k_core_filter(CASCADE_FIXTURE, 2, iterative=True)
        assert single != iterative
        # single pass guarantees items >= k but can leave a user starved
        users = {}
        for it in single:
            users[it.user_id] = users.get(it.user_id, 0) + 1
        assert min(users.values()) < 2

    def test_iterative_matches_brute_force_fixpoint(self):
        assert k_core_filter(CASCADE_FIXTURE, 2, iterative=True) == brute_force_k_core(CASCADE_FIXTURE, 2)

    def test_iterative_guarantees_k_core(self):
        out = k_core_filter(CASCADE_FIXTURE, 2, iterative=True)
        users, items = {}, {}
        for it in out:
            users[it.user_id] = users.get(it.user_id, 0) + 1
            items[it.item_id] = items.get(it.item_id, 0) + 1
        assert min(users.values()) >= 2 and min(items.values()) >= 2


class TestSplits:
    def test_leave_one_out_by_time(self):
        data = [Interaction(1, i, 5, t) for i, t in zip(range(5), range(5))]
        split = leave_one_out_split(data, SplitSpec(k_core=0))
        assert [it.item_id for it in split.train] == [0, 1, 2]
        assert [it.item_id for it in split.valid] == [3]
        assert [it.item_id for it in split.test] == [4]

    def test_user_below_three_interactions_dropped(self):
        data = [mk(1, 0, 0), mk(1, 1, 1), mk(2, 0, 0), mk(2, 1, 1), mk(2, 2, 2)]
        split = leave_one_out_split(data, SplitSpec(k_core=0))
        assert split.dropped_users == 1
        assert all(it.user_id == 2 for it in split.train + split.valid + split.test)

    def test_warm_cold_counts(self):
        data = []
        for u in range(4):
            data += [mk(u, v, t=v) for v in range(5)]
        spec = SplitSpec(mode="warm-cold", k_core=0, cold_user_fraction=0.5, seed=7)
        split = leave_one_out_split(data, spec)
        assert len(split.cold_user_ids) == 2
        train_users = {it.user_id for it in split.train}
        valid_users = {it.user_id for it in split.valid}
        assert not (split.cold_user_ids & train_users)
        assert not (split.cold_user_ids & valid_users)
        test_users = {it.user_id for it in split.test}
        assert split.cold_user_ids <= test_users

    def test_spec_invariants(self):
        with pytest.raises(CorpusError):
            SplitSpec(mode="few-shot")  # missing few_shot_n
        with pytest.raises(CorpusError):
            SplitSpec(mode="warm-cold", cold_user_fraction=1.5)
        with pytest.raises(CorpusError):
            SplitSpec(mode="leave-one-out", cold_user_fraction=0.5)


@pytest.fixture(scope="module")
def small_corpus():
    interactions, catalog = two_genre_data(n_users=20, n_items=30, per_user=10, seed=5)
    parsed = cp.ParseResult(interactions, catalog, 0)
    return build_corpus(parsed, SplitSpec(k_core=0, seed=3))


class TestExamples:
    def test_ctr_pairs_positive_and_negative(self, small_corpus):
        examples = build_examples(small_corpus, "CTR", "test", seed=1)
        # one test interaction per user -> exactly two examples each
        assert len(examples) == 2 * len(small_corpus.user_ids)
        by_user = {}
        for ex in examples:
            by_user.setdefault(ex.user_id, []).append(ex.label)
        assert all(sorted(labels) == [0, 1] for labels in by_user.values())

    def test_topk_candidate_set_size(self, small_corpus):
        examples = build_examples(small_corpus, "TopK", "test", n_neg=10, seed=1)
        assert all(len(ex.candidate_set) == 11 for ex in examples)
        assert all(ex.candidate_set.count(ex.label) == 1 for ex in examples)

    def test_negatives_never_in_full_history(self, small_corpus):
        # exhaustive membership check over every generated example
        for task in ("CTR", "TopK"):
            for split in ("train", "valid", "test"):
                for ex in build_examples(small_corpus, task, split, seed=9):
                    full = small_corpus.full_history(ex.user_id)
                    if task == "CTR" and ex.label == 0:
                        assert ex.candidate not in full
                    if task == "TopK":
                        for v in ex.candidate_set:
                            if v != ex.label:
                                assert v not in full

    def test_candidate_never_in_history(self, small_corpus):
        for task in ("RP", "CTR", "TopK"):
            for ex in build_examples(small_corpus, task, "test", seed=2):
                assert ex.candidate not in ex.history

    def test_same_seed_same_examples(self, small_corpus):
        a = build_examples(small_corpus, "TopK", "test", seed=11)
        b = build_examples(small_corpus, "TopK", "test", seed=11)
        assert a == b
        c = build_examples(small_corpus, "TopK", "test", seed=12)
        assert a != c

    def test_explain_requires_comments(self):
        interactions, catalog = two_genre_data(n_users=8, n_items=20, per_user=6, seed=2, with_comments=False)
        corpus = build_corpus(cp.ParseResult(interactions, catalog, 0), SplitSpec(k_core=0))
        assert corpus.tasks == ("RP", "CTR", "TopK")
        with pytest.raises(CorpusError):
            build_examples(corpus, "Explain", "test")

    def test_few_shot_subsamples_train_pool(self):
        interactions, catalog = two_genre_data(n_users=10, n_items=20, per_user=10, seed=4)
        spec = SplitSpec(mode="few-shot", k_core=0, few_shot_n=64, seed=8)
        corpus = build_corpus(cp.ParseResult(interactions, catalog, 0), spec)
        examples = build_examples(corpus, "RP", "train", seed=8)
        assert len(examples) == 64

    def test_test_item_is_timestamp_maximal(self, small_corpus):
        for it in small_corpus.split.test:
            seq = small_corpus.by_user[it.user_id]
            assert it.timestamp == max(x.timestamp for x in seq)


class TestPrompts:
    def test_no_placeholders_without_injection(self, small_corpus):
        ex = build_examples(small_corpus, "RP", "test", seed=1)[0]
        rendered = render_prompt(ex, small_corpus.catalog, inject_collab=False)
        assert cp.USER_MARK not in rendered.text and cp.ITEM_MARK not in rendered.text

    def test_exactly_one_placeholder_each_with_injection(self, small_corpus):
        ex = build_examples(small_corpus, "CTR", "test", seed=1)[0]
        rendered = render_prompt(ex, small_corpus.catalog, inject_collab=True)
        ids = small_corpus.vocab.encode(rendered.text)
        pos = locate_placeholders(ids, small_corpus.vocab, expected=True)
        assert pos.user_pos is not None and pos.item_pos is not None
        assert ids.count(small_corpus.vocab.user_unk) == 1
        assert ids.count(small_corpus.vocab.item_unk) == 1

    def test_rendering_is_deterministic(self, small_corpus):
        ex = build_examples(small_corpus, "TopK", "test", seed=3)[0]
        r1 = render_prompt(ex, small_corpus.catalog, inject_collab=True)
        r2 = render_prompt(ex, small_corpus.catalog, inject_collab=True)
        assert r1 == r2

    def test_missing_title_names_item(self, small_corpus):
        ex = build_examples(small_corpus, "RP", "test", seed=1)[0]
        with pytest.raises(CorpusError, match="has no title") as exc:
            render_prompt(ex, {}, inject_collab=False)
        named = int(str(exc.value).split()[1])
        assert named == ex.candidate or named in ex.history

    def test_answer_text_per_task(self, small_corpus):
        rp = build_examples(small_corpus, "RP", "test", seed=1)[0]
        assert render_prompt(rp, small_corpus.catalog, False).answer_text == str(rp.label)
        ctr = build_examples(small_corpus, "CTR", "test", seed=1)[0]
        assert render_prompt(ctr, small_corpus.catalog, False).answer_text in ("yes", "no")
        topk = build_examples(small_corpus, "TopK", "test", seed=1)[0]
        assert render_prompt(topk, small_corpus.catalog, False).answer_text == small_corpus.catalog[topk.label]


class TestVocab:
    def test_yes_token(self):
        vocab = Vocab.build(["nothing here"])
        ids = vocab.encode("Yes")
        assert ids[0] == vocab.bos
        assert ids[1:] == [vocab.index["yes"]]

    def test_round_trip_normalized(self):
        vocab = Vocab.build(["The cat, ran FAST!"])
        text = "The cat ran fast"
        assert vocab.decode(vocab.encode(text)) == cp.normalize_text(text)

    def test_vocab_size_is_words_plus_specials(self):
        sentences = ["the cat sat", "the dog ran fast", "a cat ran"]
        vocab = Vocab.build(sentences)
        distinct = {w for s in sentences for w in s.split()}
        assert len(vocab) == len(distinct) + len(cp.SPECIAL_TOKENS)

    def test_oov_maps_to_unk(self):
        vocab = Vocab.build(["known words only"])
        assert vocab.encode("mystery", bos=False) == [vocab.unk]

    def test_save_load_stable_ids(self, tmp_path):
        vocab = Vocab.build(["alpha beta gamma"])
        path = tmp_path / "vocab.txt"
        vocab.save(str(path))
        loaded = Vocab.load(str(path))
        assert loaded.tokens == vocab.tokens
        assert loaded.user_unk == vocab.user_unk and loaded.item_unk == vocab.item_unk

    def test_markers_are_distinct_tokens(self):
        vocab = Vocab.build(["plain text"])
        ids = vocab.encode(f"before {cp.USER_MARK} mid {cp.ITEM_MARK} after", bos=False)
        assert vocab.user_unk in ids and vocab.item_unk in ids
        assert vocab.user_unk != vocab.item_unk


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, small_corpus):
        out = tmp_path / "corpus"
        cp.save_corpus(small_corpus, str(out))
        loaded = cp.load_corpus(str(out))
        assert loaded.interactions == small_corpus.interactions
        assert loaded.catalog == small_corpus.catalog
        assert loaded.vocab.tokens == small_corpus.vocab.tokens
        assert [it.item_id for it in loaded.split.test] == [it.item_id for it in small_corpus.split.test]
        # example generation survives the round trip bit-for-bit
        assert build_examples(loaded, "TopK", "test", seed=5) == build_examples(small_corpus, "TopK", "test", seed=5)

    def test_rewrite_is_byte_identical(self, tmp_path, small_corpus):
        a, b = tmp_path / "a", tmp_path / "b"
        cp.save_corpus(small_corpus, str(a))
        cp.save_corpus(cp.load_corpus(str(a)), str(b))
        for name in ("interactions.tsv", "catalog.tsv", "vocab.txt", "splits.tsv", "corpus.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_comment_escaping(self, tmp_path):
        interactions = [
            Interaction(0, 0, 5, t, "has\ttab and\nnewline" if t == 0 else "plain") for t in range(3)
        ]
        catalog = {0: "only item"}
        corpus = build_corpus(cp.ParseResult(interactions, catalog, 0), SplitSpec(k_core=0))
        out = tmp_path / "c"
        cp.save_corpus(corpus, str(out))
        loaded = cp.load_corpus(str(out))
        assert loaded.interactions[0].comment == "has\ttab and\nnewline"


class TestStats:
    def test_stats_shape(self, small_corpus):
        stats = cp.corpus_stats(small_corpus, seed=1)
        assert stats["users"] == len(small_corpus.user_ids)
        assert stats["items"] == len(small_corpus.item_ids)
        assert stats["interactions"] == len(small_corpus.interactions)
        assert stats["avg_u"] == pytest.approx(stats["interactions"] / stats["users"])
        assert stats["test"] > 0 and stats["train"] > 0
