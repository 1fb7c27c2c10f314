import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdg.data import (
    ActionRecord,
    DataError,
    DatasetSplit,
    FeatureStore,
    NarrationEmbedder,
    SeqMixPool,
    SeqMixStats,
    aggregate_clips,
    build_windows,
    import_csv_dataset,
    materialize,
    read_annotation_csv,
    sample_clip_indices,
    seqmix,
    write_annotation_csv,
)


def make_record(i, video="v0", domain="S0", verb=0, noun=0, t=None, d_v=4, clips=2):
    return ActionRecord(action_id=i, video_id=video, domain_id=domain, verb=verb,
                        noun=noun, narration=(verb, noun), temporal_index=t if t is not None else i,
                        blob_offset=i * clips * d_v, n_clips=clips)


def make_store(n_actions=6, d_v=4, clips=2, n_videos=2, domains=("S0", "S1"),
               targets=(), seed=0, with_text=False, d_t=3):
    rng = np.random.default_rng(seed)
    per_video = n_actions // n_videos
    records = []
    for i in range(n_actions):
        vid = i // per_video
        records.append(ActionRecord(
            action_id=i, video_id=f"v{vid}", domain_id=domains[vid % len(domains)],
            verb=i % 3, noun=i % 2, narration=(i % 3, 3 + i % 2),
            temporal_index=i % per_video, blob_offset=i * clips * d_v, n_clips=clips))
    visual = rng.standard_normal(n_actions * clips * d_v).astype("<f4")
    text = rng.standard_normal(n_actions * d_t).astype("<f4") if with_text else None
    vocab = ["a", "b", "c", "d", "e"]
    split = DatasetSplit(source=tuple(d for d in domains if d not in targets),
                         target=tuple(targets))
    meta = {"name": "toy", "d_v": d_v, "d_t": d_t, "clips_per_action": clips}
    return FeatureStore(meta, records, vocab, split, visual, text)


class TestFeatureStore:
    def test_blob_length_validated(self):
        with pytest.raises(DataError, match="blob"):
            store = make_store()
            FeatureStore(store.meta, store.records, store.vocab, store.split,
                         store.visual[:-1])

    def test_roundtrip_is_bitwise(self, tmp_path):
        store = make_store(with_text=True, seed=3)
        store.save(tmp_path / "ds")
        again = FeatureStore.load(tmp_path / "ds")
        assert again.visual.tobytes() == store.visual.tobytes()
        assert again.text.tobytes() == store.text.tobytes()
        assert again.records == store.records
        assert again.vocab == store.vocab
        assert again.split == store.split
        for rec in store.records:
            assert np.array_equal(again.clips(rec), store.clips(rec))

    def test_split_domains_must_be_disjoint(self):
        with pytest.raises(DataError, match="overlap"):
            DatasetSplit(source=("S0", "S1"), target=("S1",))

    def test_clips_shape(self):
        store = make_store()
        clips = store.clips(store.records[0])
        assert clips.shape == (2, 4)


class TestBuildWindows:
    def test_replicate_padding_at_video_start(self):
        records = [make_record(i) for i in range(7)]
        windows = build_windows(records, W=5)
        assert len(windows) == 7
        first = windows[0]
        ids = [r.action_id for r in first.records]
        assert ids == [0, 0, 0, 1, 2]
        assert first.padding == (True, True, False, False, False)
        assert first.center == 2

    def test_degenerate_single_slot_windows(self):
        records = [make_record(i) for i in range(3)]
        windows = build_windows(records, W=1)
        assert all(w.records == (records[i],) for i, w in enumerate(windows))
        assert all(w.padding == (False,) for w in windows)

    def test_counting_bijection_on_random_corpus(self):
        rng = np.random.default_rng(5)
        records = []
        i = 0
        for vid in range(10):
            length = int(rng.integers(1, 20))
            for t in range(length):
                records.append(make_record(i, video=f"v{vid}", t=t))
                i += 1
        windows = build_windows(records, W=5)
        assert len(windows) == len(records)
        centers = sorted(w.center_record.action_id for w in windows)
        assert centers == sorted(r.action_id for r in records)

    def test_even_window_rejected(self):
        with pytest.raises(DataError):
            build_windows([make_record(0)], W=4)

    def test_nonconsecutive_indices_rejected(self):
        bad = [make_record(0, t=0), make_record(1, t=2)]
        with pytest.raises(DataError, match="consecutive"):
            build_windows(bad, W=3)

    @given(st.integers(min_value=1, max_value=12), st.sampled_from([1, 3, 5, 7]))
    @settings(max_examples=30, deadline=None)
    def test_center_of_window_i_is_action_i(self, n, w):
        records = [make_record(i, t=i) for i in range(n)]
        windows = build_windows(records, W=w)
        assert [win.center_record.action_id for win in windows] == list(range(n))


class TestClipAggregation:
    def test_mean_of_identical_clips(self):
        c = np.array([1.5, -2.0, 0.5])
        clips = np.stack([c] * 5)
        np.testing.assert_array_equal(aggregate_clips(clips, "mean"), c)

    def test_mean_of_simple_clips(self):
        clips = np.array([[1.0], [2.0], [3.0]])
        assert aggregate_clips(clips, "mean").tolist() == [2.0]

    def test_relational_identity_init_is_concatenation(self):
        clips = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = aggregate_clips(clips, "relational", weight=np.eye(4))
        assert out.tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_relational_requires_matching_weight(self):
        with pytest.raises(DataError):
            aggregate_clips(np.ones((2, 2)), "relational", weight=np.eye(3))

    def test_eval_indices_evenly_spaced_and_deterministic(self):
        idx = sample_clip_indices(25, 5)
        assert idx.tolist() == [0, 6, 12, 18, 24]
        assert sample_clip_indices(25, 5).tolist() == idx.tolist()

    def test_train_sampling_without_replacement(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            idx = sample_clip_indices(25, 5, rng)
            assert len(set(idx.tolist())) == 5
            assert sorted(idx.tolist()) == idx.tolist()

    def test_oversampling_rejected(self):
        with pytest.raises(DataError):
            sample_clip_indices(3, 4)


class TestNarrationEmbedder:
    def test_same_tokens_bitwise_identical(self):
        emb = NarrationEmbedder(vocab_size=10, dim=8, seed=1)
        a = emb.embed((1, 2, 3))
        b = emb.embed((1, 2, 3))
        assert a.tobytes() == b.tobytes()

    def test_single_token_is_table_row(self):
        emb = NarrationEmbedder(vocab_size=10, dim=8, seed=1)
        np.testing.assert_array_equal(emb.embed((4,)), emb.table[4])

    def test_default_width(self):
        emb = NarrationEmbedder(vocab_size=10, dim=768, seed=0)
        assert emb.embed((0,)).shape == (768,)

    def test_unknown_token_rejected(self):
        emb = NarrationEmbedder(vocab_size=4, dim=2, seed=0)
        with pytest.raises(DataError):
            emb.embed((4,))

    def test_seed_controls_table(self):
        a = NarrationEmbedder(5, 4, seed=1).table
        b = NarrationEmbedder(5, 4, seed=2).table
        assert not np.array_equal(a, b)


def mixing_setup(n_domains=3, actions_per_domain=8):
    """Every (verb, noun) label exists in every domain."""
    records = []
    i = 0
    for d in range(n_domains):
        for t in range(actions_per_domain):
            records.append(ActionRecord(
                action_id=i, video_id=f"S{d}_v0", domain_id=f"S{d}",
                verb=t % 2, noun=t % 2, narration=(0,), temporal_index=t,
                blob_offset=0, n_clips=1))
            i += 1
    return records


class TestSeqMix:
    def test_probability_zero_never_changes_window(self):
        records = mixing_setup()
        pool = SeqMixPool(records, [f"S{d}" for d in range(3)])
        windows = build_windows(records, W=3)
        rng = np.random.default_rng(0)
        for win in windows:
            assert seqmix(win, pool, 0.0, rng) is win

    def test_unsatisfiable_pool_counts_no_candidate(self):
        # the only matching labels live in the window's own domain
        records = [make_record(i, video="S0_v0", domain="S0", verb=9, noun=9, t=i)
                   for i in range(3)]
        pool = SeqMixPool(records, ["S0"])
        window = build_windows(records, W=3)[1]
        stats = SeqMixStats()
        rng = np.random.default_rng(1)
        out = seqmix(window, pool, 1.0, rng, stats=stats)
        assert out.records == window.records
        assert stats.no_candidate == 1

    def test_replacement_swaps_whole_tuple(self):
        records = mixing_setup()
        pool = SeqMixPool(records, ["S0", "S1", "S2"])
        window = build_windows([r for r in records if r.domain_id == "S0"], W=3)[1]
        rng = np.random.default_rng(2)
        out = seqmix(window, pool, 1.0, rng)
        changed = [i for i in range(3) if out.records[i] is not window.records[i]]
        assert len(changed) == 1
        old, new = window.records[changed[0]], out.records[changed[0]]
        assert new.domain_id != old.domain_id
        assert new.label == old.label
        assert out.padding == window.padding

    def test_center_labels_never_change(self):
        records = mixing_setup()
        pool = SeqMixPool(records, ["S0", "S1", "S2"])
        windows = build_windows([r for r in records if r.domain_id == "S0"], W=3)
        rng = np.random.default_rng(3)
        for win in windows:
            out = seqmix(win, pool, 1.0, rng)
            assert out.center_record.label == win.center_record.label

    def test_cross_domain_slot_present_iff_replaced(self):
        records = mixing_setup()
        pool = SeqMixPool(records, ["S0", "S1", "S2"])
        windows = build_windows([r for r in records if r.domain_id == "S1"], W=3)
        rng = np.random.default_rng(4)
        stats = SeqMixStats()
        for win in windows * 30:
            before = stats.replaced
            out = seqmix(win, pool, 0.5, rng, stats=stats)
            mixed = any(r.domain_id != "S1" for r in out.records)
            assert mixed == (stats.replaced > before)

    def test_monte_carlo_rate_and_constraint(self):
        records = mixing_setup(n_domains=4, actions_per_domain=6)
        pool = SeqMixPool(records, [f"S{d}" for d in range(4)])
        windows = build_windows([r for r in records if r.domain_id == "S0"], W=3)
        rng = np.random.default_rng(20240)
        stats = SeqMixStats()
        n_draws = 20_000
        for i in range(n_draws):
            win = windows[i % len(windows)]
            out = seqmix(win, pool, 0.5, rng, stats=stats)
            if out is not win:
                changed = [j for j in range(3)
                           if out.records[j] is not win.records[j]]
                assert len(changed) == 1
                old, new = win.records[changed[0]], out.records[changed[0]]
                assert new.domain_id != old.domain_id
                assert new.label == old.label
        rate = stats.replaced / n_draws
        assert 0.48 <= rate <= 0.52
        assert stats.no_candidate == 0

    def test_exclude_center_flag(self):
        records = mixing_setup()
        pool = SeqMixPool(records, ["S0", "S1", "S2"])
        window = build_windows([r for r in records if r.domain_id == "S0"], W=3)[1]
        rng = np.random.default_rng(5)
        for _ in range(50):
            out = seqmix(window, pool, 1.0, rng, exclude_center=True)
            assert out.records[window.center] is window.records[window.center]


class TestMaterialize:
    def test_mean_aggregated_batch_shapes(self):
        store = make_store(with_text=False)
        windows = build_windows(store.records, W=3)
        emb = NarrationEmbedder(len(store.vocab), store.d_t, seed=0)
        batch = materialize(store, windows[:4], embedder=emb, with_text=True)
        assert batch.visual.shape == (4, 3, 4)
        assert batch.text.shape == (4, 3, 3)
        assert batch.verbs.shape == (4,)
        assert len(batch.center_tokens) == 4

    def test_store_text_features_take_precedence(self):
        store = make_store(with_text=True)
        windows = build_windows(store.records, W=1)
        batch = materialize(store, windows[:1], with_text=True)
        expected = store.text_feature(windows[0].center_record)
        np.testing.assert_allclose(batch.visual[0, 0],
                                   store.clips(windows[0].center_record)
                                   .astype(np.float64).mean(axis=0))
        np.testing.assert_allclose(batch.text[0, 0], expected.astype(np.float64))

    def test_keep_clips_returns_stack(self):
        store = make_store()
        windows = build_windows(store.records, W=1)
        batch = materialize(store, windows[:2], keep_clips=True)
        assert batch.visual.shape == (2, 1, 2, 4)

    def test_clip_sampling_deterministic_without_rng(self):
        store = make_store()
        windows = build_windows(store.records, W=3)
        a = materialize(store, windows[:3], n_clips_sample=1)
        b = materialize(store, windows[:3], n_clips_sample=1)
        assert a.visual.tobytes() == b.visual.tobytes()


class TestAnnotationCSV:
    def rows(self):
        return [
            {"video_id": "v0", "domain_id": "P01", "temporal_index": 0,
             "verb_class": 1, "noun_class": 2, "narration": "open fridge"},
            {"video_id": "v0", "domain_id": "P01", "temporal_index": 1,
             "verb_class": 0, "noun_class": 2, "narration": "close fridge"},
        ]

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "ann.csv"
        write_annotation_csv(path, self.rows())
        assert read_annotation_csv(path) == self.rows()

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("video_id,domain_id,temporal_index,verb_class,noun_class,narration\n"
                        "v0,P01,zero,1,2,open fridge\n")
        with pytest.raises(DataError, match="line 2"):
            read_annotation_csv(path)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("video_id,domain_id\nv0,P01\n")
        with pytest.raises(DataError, match="missing columns"):
            read_annotation_csv(path)

    def test_import_builds_store(self, tmp_path):
        csv_path = tmp_path / "ann.csv"
        write_annotation_csv(csv_path, self.rows())
        rng = np.random.default_rng(0)
        blob = rng.standard_normal(2 * 3 * 4).astype("<f4")
        blob.tofile(tmp_path / "feat.f32")
        store = import_csv_dataset(csv_path, tmp_path / "feat.f32", d_v=4,
                                   clips_per_action=3, d_t=2,
                                   target_domains=())
        assert len(store.records) == 2
        assert store.vocab == ["open", "fridge", "close"]
        assert store.records[1].narration == (2, 1)
        assert store.split.source == ("P01",)
        np.testing.assert_array_equal(store.clips(store.records[1]),
                                      blob[12:].reshape(3, 4))

    def test_import_checks_blob_size(self, tmp_path):
        csv_path = tmp_path / "ann.csv"
        write_annotation_csv(csv_path, self.rows())
        np.zeros(5, dtype="<f4").tofile(tmp_path / "feat.f32")
        with pytest.raises(DataError, match="expected"):
            import_csv_dataset(csv_path, tmp_path / "feat.f32", d_v=4,
                               clips_per_action=3)
