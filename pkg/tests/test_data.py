import json
import logging
import shutil
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iris_aqa.data import (
    MAX_WINDOWS,
    EmbeddingSequence,
    PerformanceRecord,
    SegmentLabeling,
    batch_sequences,
    labels_to_segments,
    load_dataset,
    load_record,
    pad_and_slice,
    read_embeddings,
    segments_to_labels,
    split,
    write_embeddings,
    write_record,
)
from iris_aqa.errors import DatasetError, DimensionError
from iris_aqa.rubric import ActionType, Segment, element_counts
from iris_aqa.synthetic import SyntheticConfig, generate_synthetic, make_world, write_dataset

from conftest import SMALL

T_, J, S, Q = ActionType

label_lists = st.lists(st.integers(0, 3), min_size=0, max_size=40)


# ---------------------------------------------------------------- embeddings


def test_embedding_padding_must_be_zero():
    w = np.zeros((5, 3))
    w[4, 0] = 1.0
    with pytest.raises(DimensionError):
        EmbeddingSequence(w, 3)


def test_embedding_rejects_non_finite_and_bad_counts():
    with pytest.raises(DimensionError):
        EmbeddingSequence(np.full((2, 2), np.nan), 2)
    with pytest.raises(DimensionError):
        EmbeddingSequence(np.zeros((2, 2)), 3)
    with pytest.raises(DimensionError):
        EmbeddingSequence(np.zeros(4), 4)


def test_padded_keeps_valid_region(rng):
    e = EmbeddingSequence.from_valid(rng.standard_normal((10, 4)))
    p = e.padded()
    assert p.length == MAX_WINDOWS and p.valid_count == 10
    np.testing.assert_array_equal(p.valid, e.valid)
    assert np.all(p.windows[10:] == 0.0)
    assert p.mask.sum() == 10
    with pytest.raises(DimensionError):
        e.padded(5)


def test_embeddings_are_read_only(rng):
    e = EmbeddingSequence.from_valid(rng.standard_normal((3, 2)))
    with pytest.raises(ValueError):
        e.windows[0, 0] = 1.0


def test_embedding_file_round_trip(tmp_path, rng):
    w = rng.standard_normal((7, 5))
    write_embeddings(tmp_path / "a.emb.f64", w)
    raw = (tmp_path / "a.emb.f64").read_bytes()
    assert raw[:16] == (7).to_bytes(8, "little") + (5).to_bytes(8, "little")
    assert len(raw) == 16 + 8 * 35
    np.testing.assert_array_equal(read_embeddings(tmp_path / "a.emb.f64"), w)


def test_truncated_embedding_file(tmp_path, rng):
    write_embeddings(tmp_path / "a.emb.f64", rng.standard_normal((4, 4)))
    raw = (tmp_path / "a.emb.f64").read_bytes()
    (tmp_path / "a.emb.f64").write_bytes(raw[:-8])
    with pytest.raises(DatasetError, match="header declares"):
        read_embeddings(tmp_path / "a.emb.f64")


# ---------------------------------------------------------------- labelings


@given(label_lists)
def test_labels_segments_bijection(labels):
    segs = labels_to_segments(labels)
    np.testing.assert_array_equal(segments_to_labels(segs), np.asarray(labels, dtype=np.int64))
    assert labels_to_segments(segments_to_labels(segs)) == segs
    pos = 0
    for i, s in enumerate(segs):
        assert s.start == pos and s.end > s.start
        if i:
            assert segs[i - 1].action != s.action
        pos = s.end
    assert pos == len(labels)


def test_segments_to_labels_rejects_gaps_and_repeats():
    with pytest.raises(ValueError):
        segments_to_labels([Segment(J, 0, 2), Segment(S, 3, 4)])
    with pytest.raises(ValueError):
        segments_to_labels([Segment(J, 0, 2), Segment(J, 2, 4)])


def test_labeling_from_actions_and_timeline():
    lab = SegmentLabeling.from_actions(["Transition", "Jump", "Jump", "StepSequence"])
    assert lab.timeline() == "TJJQ"
    assert [s.action for s in lab.element_segments] == [J, Q]
    with pytest.raises(ValueError):
        SegmentLabeling(np.array([0, 4]))


# ---------------------------------------------------------------- slicing


def test_slice_exact_length_is_raw(rng):
    e = EmbeddingSequence.from_valid(rng.standard_normal((12, 3)))
    blocks, lengths = pad_and_slice(e, [Segment(J, 2, 7)], 5)
    np.testing.assert_array_equal(blocks[0], e.valid[2:7])
    assert lengths.tolist() == [5]


def test_slice_short_segment_is_tail_padded(rng):
    e = EmbeddingSequence.from_valid(rng.standard_normal((12, 3)))
    blocks, lengths = pad_and_slice(e, [Segment(S, 4, 7)], 5)
    np.testing.assert_array_equal(blocks[0, :3], e.valid[4:7])
    assert np.all(blocks[0, 3:] == 0.0)
    assert lengths.tolist() == [3]


def test_slice_long_segment_is_centre_cropped(rng):
    e = EmbeddingSequence.from_valid(rng.standard_normal((12, 3)))
    blocks, _ = pad_and_slice(e, [Segment(Q, 0, 9)], 5)
    # 9 rows, keep 5: drop (9 - 5) // 2 = 2 from the front, rows 2..6
    np.testing.assert_array_equal(blocks[0], e.valid[2:7])


def test_slice_skips_transitions_keeps_order(rng):
    e = EmbeddingSequence.from_valid(rng.standard_normal((10, 2)))
    segs = [Segment(T_, 0, 2), Segment(S, 2, 4), Segment(T_, 4, 5), Segment(J, 5, 10)]
    blocks, lengths = pad_and_slice(e, segs, 8)
    assert blocks.shape == (2, 8, 2) and lengths.tolist() == [2, 5]
    np.testing.assert_array_equal(blocks[1, :5], e.valid[5:10])


def test_slice_out_of_range():
    e = EmbeddingSequence.from_valid(np.ones((4, 2)))
    with pytest.raises(DimensionError):
        pad_and_slice(e, [Segment(J, 2, 6)], 8)


@given(st.integers(1, 30), st.integers(1, 12), st.data())
def test_padding_never_leaks(T, max_w, data):
    e = EmbeddingSequence.from_valid(np.arange(T * 2, dtype=float).reshape(T, 2) + 1.0)
    start = data.draw(st.integers(0, T - 1))
    end = data.draw(st.integers(start + 1, T))
    blocks, lengths = pad_and_slice(e, [Segment(J, start, end)], max_w)
    n = lengths[0]
    assert n == min(end - start, max_w)
    assert blocks[0, n:].sum() == 0.0
    # every kept row is an unaltered row of the valid region
    for row in blocks[0, :n]:
        assert any(np.array_equal(row, v) for v in e.valid[start:end])


def test_batch_sequences_masks(rng):
    a = EmbeddingSequence.from_valid(rng.standard_normal((3, 2)))
    b = EmbeddingSequence.from_valid(rng.standard_normal((5, 2)))
    x, m = batch_sequences([a, b])
    assert x.shape == (2, 5, 2)
    assert m.tolist() == [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]]
    assert np.all(x[0, 3:] == 0)


# ---------------------------------------------------------------- records and loading


def test_record_rejects_count_mismatch(small_records):
    r = small_records[0]
    labels = r.truth_labels.labels.copy()
    # turn the first transition window after an element into an extra jump run
    seg = next(s for s in r.truth_labels.segments[1:] if s.action is T_ and s.length >= 3)
    labels[seg.start + 1] = int(J)
    with pytest.raises(DatasetError, match="count mismatch"):
        PerformanceRecord(r.sheet, r.embeddings, SegmentLabeling(labels))


def test_record_rejects_wrong_order_and_length(small_records):
    r = next(x for x in small_records if x.sheet.actions[0] != x.sheet.actions[-1])
    segs = r.truth_labels.segments
    elem = [s for s in segs if s.action is not T_]
    swapped = {elem[0].start: elem[-1].action, elem[-1].start: elem[0].action}
    new = [Segment(swapped.get(s.start, s.action), s.start, s.end) for s in segs]
    with pytest.raises(DatasetError):
        PerformanceRecord(r.sheet, r.embeddings, SegmentLabeling.from_segments(new))
    with pytest.raises(DatasetError):
        PerformanceRecord(r.sheet, r.embeddings, SegmentLabeling(r.truth_labels.labels[:-1]))


def test_load_two_records(tmp_path, small_records):
    for r in small_records[:2]:
        write_record(tmp_path, r)
    loaded = load_dataset(tmp_path)
    assert [r.id for r in loaded] == [r.id for r in small_records[:2]]
    np.testing.assert_array_equal(loaded[0].embeddings.windows, small_records[0].embeddings.windows)
    assert loaded[0].sheet == small_records[0].sheet
    assert loaded[0].truth_labels == small_records[0].truth_labels


def test_load_count_mismatch_names_file(tmp_path, small_records):
    r = small_records[0]
    write_record(tmp_path, r)
    lines = (tmp_path / f"{r.id}.labels.txt").read_text().splitlines()
    seg = next(s for s in r.truth_labels.segments[1:] if s.action is T_ and s.length >= 3)
    lines[seg.start + 1] = "Jump"
    (tmp_path / f"{r.id}.labels.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="count mismatch") as info:
        load_dataset(tmp_path)
    assert info.value.path.endswith(".labels.txt")


def test_load_missing_pair_member(tmp_path, small_records):
    write_record(tmp_path, small_records[0])
    (tmp_path / f"{small_records[0].id}.emb.f64").unlink()
    with pytest.raises(DatasetError, match="missing pair member") as info:
        load_dataset(tmp_path)
    assert info.value.path.endswith(".emb.f64")


def test_load_without_labels_when_allowed(tmp_path, small_records):
    write_record(tmp_path, small_records[0])
    (tmp_path / f"{small_records[0].id}.labels.txt").unlink()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    (rec,) = load_dataset(tmp_path, require_labels=False)
    assert rec.truth_labels is None


def test_load_dimension_inconsistency(tmp_path, small_records):
    write_record(tmp_path, small_records[0])
    other = generate_synthetic(replace(SMALL, n_records=1, dim=9), seed=3)[0]
    other = PerformanceRecord(replace(other.sheet, performance_id="zzz"), other.embeddings, other.truth_labels)
    write_record(tmp_path, other)
    with pytest.raises(DatasetError, match="dimensions disagree"):
        load_dataset(tmp_path)


def test_load_empty_directory_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        assert load_dataset(tmp_path) == []
    assert "no records" in caplog.text


def test_load_missing_directory(tmp_path):
    with pytest.raises(DatasetError, match="does not exist"):
        load_dataset(tmp_path / "nope")


def test_bad_sheet_reported_with_path(tmp_path, small_records):
    r = small_records[0]
    write_record(tmp_path, r)
    doc = json.loads((tmp_path / f"{r.id}.sheet.json").read_text())
    doc["pcs_factor"] = 0.5
    (tmp_path / f"{r.id}.sheet.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="pcs_factor") as info:
        load_dataset(tmp_path)
    assert info.value.path.endswith(".sheet.json")


# ---------------------------------------------------------------- split


def test_split_120_30_and_deterministic():
    recs = generate_synthetic(SyntheticConfig(n_records=150, dim=8), seed=1)
    tr, te = split(recs, 120, seed=5)
    assert len(tr) == 120 and len(te) == 30
    assert not {r.id for r in tr} & {r.id for r in te}
    tr2, te2 = split(recs, 120, seed=5)
    assert [r.id for r in tr] == [r.id for r in tr2] and [r.id for r in te] == [r.id for r in te2]
    assert [r.id for r in split(recs, 120, seed=6)[1]] != [r.id for r in te]


def test_split_insufficient(small_records):
    with pytest.raises(DatasetError):
        split(small_records, len(small_records))


# ---------------------------------------------------------------- generator


def test_generator_records_satisfy_invariants_over_many_seeds():
    cfg = SyntheticConfig(n_records=1000, dim=8)
    recs = generate_synthetic(cfg, seed=99)  # construction re-runs every record check
    for r in recs[:: 50]:
        assert cfg.t_valid_range[0] <= r.embeddings.valid_count <= cfg.t_valid_range[1]
        counts = element_counts(r.sheet)
        assert cfg.jumps[0] <= counts[J] <= cfg.jumps[1]
        assert all(-5 <= g <= 5 for g in r.sheet.truth.goe)
        assert all(0 <= p <= 10 for p in r.sheet.truth.pcs)
        t = r.sheet.truth
        assert t.total == pytest.approx(t.tes_total + t.pcs_total, abs=1e-12)
    assert len({r.id for r in recs}) == 1000


def test_generated_dataset_loads(tmp_path):
    cfg = SyntheticConfig()
    recs = generate_synthetic(cfg, seed=7)
    manifest = write_dataset(tmp_path, recs, cfg, 7)
    loaded = load_dataset(tmp_path)
    assert len(loaded) == 150
    doc = json.loads(manifest.read_text())
    assert doc["generator_seed"] == 7 and len(doc["ids"]) == 150


def test_different_seeds_differ():
    a = generate_synthetic(SyntheticConfig(n_records=3, dim=8), seed=1)
    b = generate_synthetic(SyntheticConfig(n_records=3, dim=8), seed=2)
    assert any(not np.array_equal(x.truth_labels.labels, y.truth_labels.labels) for x, y in zip(a, b))


def test_same_seed_identical():
    a = generate_synthetic(SyntheticConfig(n_records=3, dim=8), seed=4)
    b = generate_synthetic(SyntheticConfig(n_records=3, dim=8), seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.embeddings.windows, y.embeddings.windows)
        assert x.sheet == y.sheet


def test_noise_free_linear_probe_recovers_goe():
    cfg = SyntheticConfig(n_records=60, noise=0.0)
    feats, goe = [], []
    for r in generate_synthetic(cfg, seed=2):
        for seg, g in zip(r.truth_labels.element_segments, r.sheet.truth.goe):
            feats.append(r.embeddings.valid[seg.start : seg.end].mean(axis=0))
            goe.append(g)
    X = np.column_stack([np.asarray(feats), np.ones(len(feats))])
    y = np.asarray(goe)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    r2 = 1.0 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
    assert r2 == pytest.approx(1.0, abs=1e-9)


def test_world_quality_directions_orthogonal():
    w = make_world(SyntheticConfig())
    np.testing.assert_allclose(w.quality_dirs @ w.quality_dirs.T, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(w.quality_dirs @ w.signatures.T, 0.0, atol=1e-12)


@pytest.mark.parametrize(
    "cfg",
    [
        SyntheticConfig(dim=4),
        SyntheticConfig(t_valid_range=(20, 30)),
        SyntheticConfig(noise=-1.0),
        SyntheticConfig(jumps=(3, 2)),
        SyntheticConfig(boundary_blur=-1),
    ],
)
def test_infeasible_configurations(cfg):
    with pytest.raises(DatasetError):
        generate_synthetic(cfg, seed=0)


def test_write_dataset_unwritable_leaves_no_manifest(tmp_path, small_records):
    target = tmp_path / "ro"
    target.mkdir()
    target.chmod(0o500)
    try:
        if (target / "probe").exists() or _can_write(target):
            pytest.skip("running with privileges that ignore directory permissions")
        with pytest.raises(OSError):
            write_dataset(target, small_records, SyntheticConfig(), 0)
        assert not (target / "manifest.json").exists()
    finally:
        target.chmod(0o700)
        shutil.rmtree(target)


def _can_write(d):
    try:
        (d / ".probe").write_text("x")
        (d / ".probe").unlink()
        return True
    except OSError:
        return False


def test_load_record_single(tmp_path, small_records):
    write_record(tmp_path, small_records[3])
    assert load_record(tmp_path, small_records[3].id).sheet == small_records[3].sheet


def test_write_failure_midway_leaves_no_manifest(tmp_path, small_records, monkeypatch):
    import iris_aqa.synthetic as syn

    calls = []
    real = syn.write_record

    def flaky(directory, record):
        calls.append(record.id)
        if len(calls) == 3:
            raise OSError(28, "No space left on device")
        real(directory, record)

    monkeypatch.setattr(syn, "write_record", flaky)
    with pytest.raises(OSError):
        write_dataset(tmp_path, small_records, SMALL, 0)
    assert not (tmp_path / "manifest.json").exists()


def test_write_dataset_under_a_file_fails(tmp_path, small_records):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        write_dataset(blocker / "out", small_records, SMALL, 0)
