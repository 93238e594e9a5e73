import shutil

import numpy as np
import pytest
from scipy import stats

from spikekws.dataset import (CLASSES, NOISE_DIR, SILENCE, SPLITS, UNKNOWN, ZERO_SOURCE, Entry,
                              FeatureStore, Manifest, build_manifest, generate_silence,
                              make_batches, sampler_weights)
from spikekws.errors import CorpusLayoutError, DataError
from spikekws.features import load_wav


@pytest.fixture(scope="module")
def manifest(corpus):
    return build_manifest(corpus, seed=0)


def test_label_mapping_and_list_precedence(corpus, manifest):
    by_source = {e.source: e for e in manifest.entries}
    assert by_source["yes/0000abcd_nohash_0.wav"].label == CLASSES.index("yes")
    assert by_source["yes/0000abcd_nohash_0.wav"].split == "train"
    assert by_source["bed/0000abcd_nohash_0.wav"].label == UNKNOWN
    test_list = (corpus / "testing_list.txt").read_text().split()
    valid_list = (corpus / "validation_list.txt").read_text().split()
    assert {e.source for e in manifest.split("test") if not e.is_crop} == set(test_list)
    assert {e.source for e in manifest.split("valid") if not e.is_crop} == set(valid_list)


def test_split_integrity_and_coverage(manifest):
    sets = [{e.source for e in manifest.split(s) if not e.is_crop} for s in SPLITS]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    for s in SPLITS:
        assert np.all(manifest.class_counts(s) > 0), s


def test_silence_counts_and_regions(corpus, manifest):
    for split in SPLITS:
        counts = manifest.class_counts(split)
        assert counts[SILENCE] == max(1, round(counts[2:].mean()))
    # crops from different splits come from disjoint parts of each noise file
    spans = {}
    for e in manifest.entries:
        if e.is_crop and not e.source.startswith(ZERO_SOURCE):
            src, off = e.source.rsplit(":", 1)
            spans.setdefault((src, e.split), []).append(int(off))
    for (src, split), offs in spans.items():
        n = load_wav(corpus / src).size
        lo, hi = {"train": (0, 0.8), "valid": (0.8, 0.9), "test": (0.9, 1.0)}[split]
        assert all(int(lo * n) <= o and o + 16000 <= int(hi * n) for o in offs)


def test_generate_silence_is_seeded_and_bounded(corpus, caplog):
    noise = [f"{NOISE_DIR}/{p.name}" for p in sorted((corpus / NOISE_DIR).glob("*.wav"))]
    a = generate_silence(corpus, noise, 50, seed=3)
    b = generate_silence(corpus, noise, 50, seed=3)
    assert a == b and len(a) == 50
    assert "short.wav" in caplog.text
    assert sum(e.source == f"{ZERO_SOURCE}:0" for e in a) == 5
    for e in a:
        src, off = e.source.rsplit(":", 1)
        if src != ZERO_SOURCE:
            assert int(off) + 16000 <= load_wav(corpus / src).size
    with pytest.raises(ValueError):
        generate_silence(corpus, noise, 0, seed=0)
    with pytest.raises(DataError):
        generate_silence(corpus, [f"{NOISE_DIR}/short.wav"], 20, seed=0)


def test_corpus_layout_errors(corpus, tmp_path):
    broken = tmp_path / "broken"
    shutil.copytree(corpus, broken)
    (broken / "testing_list.txt").unlink()
    with pytest.raises(CorpusLayoutError, match="testing_list"):
        build_manifest(broken)
    broken2 = tmp_path / "broken2"
    shutil.copytree(corpus, broken2)
    shutil.rmtree(broken2 / "go")
    with pytest.raises(CorpusLayoutError, match="go"):
        build_manifest(broken2)


def test_manifest_round_trip(manifest, tmp_path):
    path = tmp_path / "m.tsv"
    manifest.save(path)
    first = path.read_text().splitlines()[1]
    assert len(first.split("\t")) == 3
    back = Manifest.load(path)
    assert back.entries == manifest.entries and back.root == manifest.root
    path.write_text(path.read_text() + "x.wav\t99\ttrain\n")
    with pytest.raises(DataError, match="out of range"):
        Manifest.load(path)


def test_manifest_load_checks_files_exist(manifest, tmp_path):
    path = tmp_path / "m.tsv"
    Manifest(manifest.root, manifest.entries + [Entry("yes/ghost.wav", 2, "train")]).save(path)
    with pytest.raises(DataError, match="ghost"):
        Manifest.load(path)


def test_sampler_is_class_balanced():
    # strongly unbalanced toy split
    counts = [40, 300, 5, 20, 20, 60, 10, 10, 80, 15, 25, 30]
    entries = [Entry(f"f{c}_{i}", c, "train") for c, n in enumerate(counts) for i in range(n)]
    w = sampler_weights(entries)
    rng = np.random.default_rng(0)
    draws = rng.choice(len(entries), size=10_000, p=w / w.sum())
    observed = np.bincount([entries[i].label for i in draws], minlength=12)
    assert stats.chisquare(observed).pvalue > 0.01


def test_batches_shapes_and_determinism(manifest):
    store = FeatureStore(manifest.root)
    batches = list(make_batches(manifest, "train", 8, seed=1, epoch=0, store=store))
    n = len(manifest.split("train"))
    assert len(batches) == -(-n // 8)
    assert all(x.shape == (8, 1, 100, 40) and y.shape == (8,) for x, y in batches)
    again = list(make_batches(manifest, "train", 8, seed=1, epoch=0, store=store))
    assert all(np.array_equal(a[1], b[1]) and a[0].tobytes() == b[0].tobytes()
               for a, b in zip(batches, again))
    other = list(make_batches(manifest, "train", 8, seed=1, epoch=1, store=store))
    assert any(not np.array_equal(a[1], b[1]) for a, b in zip(batches, other))


def test_eval_split_visits_each_entry_once(manifest):
    entries = manifest.split("test")
    batches = list(make_batches(manifest, "test", 5))
    assert len(batches) == -(-len(entries) // 5)
    assert batches[-1][0].shape[0] == len(entries) - 5 * (len(batches) - 1)
    labels = np.concatenate([y for _, y in batches])
    np.testing.assert_array_equal(labels, [e.label for e in entries])


def test_batch_errors(manifest):
    with pytest.raises(ValueError):
        next(make_batches(manifest, "train", 0))
    with pytest.raises(DataError):
        next(make_batches(Manifest(manifest.root, []), "valid", 4))


def test_feature_store_disk_cache(manifest, tmp_path):
    store = FeatureStore(manifest.root, cache_dir=tmp_path / "c", memory=False)
    e = manifest.split("valid")[0]
    a = store(e)
    assert len(list((tmp_path / "c").glob("*.spk"))) == 1
    assert store(e).tobytes() == a.tobytes()
    zero = store(Entry(f"{ZERO_SOURCE}:0", SILENCE, "train"))
    assert np.all(zero == 0)
