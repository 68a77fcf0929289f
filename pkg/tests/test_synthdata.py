import numpy as np
import pytest

from zsdet.geometry import encode_offsets, iou
from zsdet.semantics import build_similarity_matrix, cosine_similarity, load_embeddings
from zsdet.synthdata import (SPLITS, SynthConfig, SynthDataset, assign_labels, batch_iterator,
                             generate_embeddings, generate_scene, make_vocabulary,
                             write_dataset_files)

SMALL = dict(n_train_images=12, n_test_images=6)


def _world(**kw):
    cfg = SynthConfig(**{**SMALL, **kw})
    return cfg, generate_embeddings(cfg)


def test_voc_vocabulary_for_16_4_split():
    v = make_vocabulary(SynthConfig())
    assert v.n_seen == 16 and v.n_unseen == 4 and "dog" in v.names
    assert make_vocabulary(SynthConfig(n_s=3, n_u=2)).names[1] == "seen_00"


def test_embeddings_deterministic_and_unit_norm():
    cfg = SynthConfig()
    a, b = generate_embeddings(cfg), generate_embeddings(cfg)
    assert a.embeddings.tobytes() == b.embeddings.tobytes()
    np.testing.assert_allclose(np.linalg.norm(a.embeddings, axis=1), 1.0, atol=1e-12)
    assert generate_embeddings(cfg, seed=1).embeddings.tobytes() != a.embeddings.tobytes()


def test_single_parent_unseen_without_noise_copies_its_parent():
    found = 0
    for seed in range(20):
        cfg = SynthConfig(embedding_noise=0.0, seed=seed)
        table, parents = generate_embeddings(cfg, return_parents=True)
        for u, ps in enumerate(parents):
            if len(ps) == 1:
                found += 1
                c = ps[0][0]
                assert cosine_similarity(table.embeddings[c], table.embeddings[cfg.n_s + u]) == \
                    pytest.approx(1.0, abs=1e-12)
    assert found > 0


def test_similarity_rows_favour_the_mixed_in_parent():
    # one group per unseen class; with shared groups a sibling can be closer
    for seed in range(5):
        cfg = SynthConfig(embedding_noise=0.0, n_groups=0, seed=seed)
        table, parents = generate_embeddings(cfg, return_parents=True)
        S = build_similarity_matrix(table, make_vocabulary(cfg))
        for u, ps in enumerate(parents):
            heaviest = max(ps, key=lambda p: p[1])[0]
            assert np.argmax(S[1 + heaviest]) == u


def test_scene_deterministic():
    cfg, table = _world()
    a = generate_scene(cfg, table, "train")
    b = generate_scene(cfg, table, "train")
    assert [im.to_json() for im in a.images] == [im.to_json() for im in b.images]


def test_images_are_independent_of_count():
    cfg, table = _world()
    few = generate_scene(cfg, table, "test_zsd", n_images=2)
    many = generate_scene(cfg, table, "test_zsd", n_images=5)
    assert [im.to_json() for im in few.images] == [im.to_json() for im in many.images[:2]]


@pytest.mark.parametrize("split,role", [("train", "seen"), ("test_seen", "seen"), ("test_zsd", "unseen")])
def test_split_label_spaces(split, role):
    cfg, table = _world()
    ds = generate_scene(cfg, table, split)
    labels = np.concatenate([im.gt_labels for im in ds.images])
    assert all(ds.vocab.role(int(c)) == role for c in labels)
    _, region_labels, _, _ = ds.regions()
    assert all(ds.vocab.role(int(c)) in (role, "background") for c in region_labels)


def test_gzsd_split_mixes_roles():
    cfg, table = _world(n_test_images=40)
    ds = generate_scene(cfg, table, "test_gzsd")
    roles = {ds.vocab.role(int(c)) for im in ds.images for c in im.gt_labels}
    assert roles == {"seen", "unseen"}


def test_unknown_split():
    cfg, table = _world()
    with pytest.raises(ValueError):
        generate_scene(cfg, table, "val")


def test_zero_jitter_proposals_hit_their_gt():
    cfg, table = _world(jitter=0.0)
    ds = generate_scene(cfg, table, "train")
    for im in ds.images:
        for k in range(len(im.gt_labels) * cfg.proposals_per_object):
            assert im.labels[k] > 0
            np.testing.assert_allclose(im.targets[k], 0.0, atol=1e-12)


def test_label_assignment_matches_brute_force_scan():
    rng = np.random.default_rng(0)
    for _ in range(50):
        gts = np.column_stack([rng.uniform(0, 30, (3, 2)), rng.uniform(5, 15, (3, 2))])
        gl = rng.integers(1, 5, 3)
        props = np.column_stack([rng.uniform(0, 30, (10, 2)), rng.uniform(5, 15, (10, 2))])
        labels, targets, best = assign_labels(props, gts, gl, 0.5)
        for p, lab, t, b in zip(props, labels, targets, best):
            scores = [iou(p, g) for g in gts]
            j = int(np.argmax(scores))
            assert b == pytest.approx(scores[j], abs=1e-12)
            if scores[j] >= 0.5:
                assert lab == gl[j]
                np.testing.assert_allclose(t, encode_offsets(p, gts[j]), atol=1e-12)
            else:
                assert lab == 0 and np.all(t == 0)


def test_assign_labels_without_gt():
    labels, targets, _ = assign_labels(np.ones((2, 4)), np.zeros((0, 4)), np.zeros(0, np.int64), 0.5)
    assert np.all(labels == 0) and np.all(targets == 0)


def test_dataset_jsonl_round_trip(tmp_path):
    cfg, table = _world()
    ds = generate_scene(cfg, table, "test_gzsd")
    ds.save(tmp_path / "x.jsonl")
    back = SynthDataset.load(tmp_path / "x.jsonl", ds.vocab, table, "test_gzsd")
    for a, b in zip(ds.images, back.images):
        for field in ("gt_boxes", "gt_labels", "proposals", "features", "labels", "targets"):
            assert getattr(a, field).tobytes() == getattr(b, field).tobytes()


def test_batches_cover_dataset_once_and_replay():
    cfg, table = _world()
    ds = generate_scene(cfg, table, "train")
    n = len(ds.regions()[1])
    batches = list(batch_iterator(ds, 7, seed=3, epoch=2))
    idx = np.concatenate([b.index for b in batches])
    assert sorted(idx.tolist()) == list(range(n))
    again = list(batch_iterator(ds, 7, seed=3, epoch=2))
    assert all(np.array_equal(a.index, b.index) for a, b in zip(batches, again))
    other = np.concatenate([b.index for b in batch_iterator(ds, 7, seed=3, epoch=3)])
    assert not np.array_equal(idx, other)


def test_oversized_batch_is_single_short_batch():
    cfg, table = _world()
    ds = generate_scene(cfg, table, "train")
    batches = list(batch_iterator(ds, 10_000, seed=0))
    assert len(batches) == 1 and len(batches[0].labels) == len(ds.regions()[1])
    with pytest.raises(ValueError):
        list(batch_iterator(ds, 0, seed=0))


def test_written_files_are_byte_identical(tmp_path):
    cfg = SynthConfig(**SMALL)
    pa = write_dataset_files(cfg, tmp_path / "a" / "nested")
    pb = write_dataset_files(cfg, tmp_path / "b")
    assert set(pa) == {"embeddings", "vocabulary", *SPLITS}
    for key in pa:
        assert pa[key].read_bytes() == pb[key].read_bytes()
    table = load_embeddings(pa["embeddings"], make_vocabulary(cfg))
    assert table.embeddings.tobytes() == generate_embeddings(cfg).embeddings.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_s=0)
    with pytest.raises(ValueError):
        SynthConfig(min_objects=3, max_objects=2)
    with pytest.raises(ValueError):
        SynthConfig(feature_noise=-1)
