import numpy as np
import pytest

from bowmerge.core import (
    Corpus,
    FeatureRef,
    FormatError,
    ImageRecord,
    Vocabulary,
    read_descriptors,
    read_ground_truth,
    read_vocabulary,
    write_descriptors,
    write_ground_truth,
    write_vocabulary,
)


def corpus_of(*arrays):
    return Corpus.from_arrays([np.asarray(a, dtype=np.float32) for a in arrays])


class TestCorpusInvariants:
    def test_dense_ids_required(self):
        rec = ImageRecord(1, np.zeros((1, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="dense"):
            Corpus([rec], 4)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            Corpus(
                [
                    ImageRecord(0, np.zeros((1, 4), dtype=np.float32)),
                    ImageRecord(1, np.zeros((1, 5), dtype=np.float32)),
                ],
                4,
            )

    def test_non_finite_rejected(self):
        bad = np.full((1, 4), np.nan, dtype=np.float32)
        with pytest.raises(ValueError, match="non-finite"):
            corpus_of(bad)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            Corpus.from_arrays([])

    def test_zero_feature_image_allowed(self):
        c = corpus_of(np.zeros((0, 4)), np.ones((2, 4)))
        assert c.total_features == 2

    def test_feature_keys_strictly_increasing(self):
        c = corpus_of(np.zeros((3, 4)), np.ones((2, 4)))
        keys = c.feature_keys()
        assert np.all(keys[1:] > keys[:-1])


class TestDescriptorFile:
    def test_single_descriptor_file_size(self, tmp_path):
        # magic(4) + dim(4) + count(4) + image header(8) + 4 floats(16)
        c = corpus_of([[1.0, 2.0, 3.0, 4.0]])
        path = tmp_path / "one.desc"
        write_descriptors(c, path)
        assert path.stat().st_size == 12 + 8 + 16

    def test_round_trip_exact(self, tmp_path, rng):
        c = corpus_of(*[rng.normal(size=(n, 8)) for n in (3, 0, 5)])
        path = tmp_path / "c.desc"
        write_descriptors(c, path)
        assert read_descriptors(path) == c

    def test_empty_image_round_trips(self, tmp_path):
        c = corpus_of(np.zeros((0, 4)), np.ones((1, 4)))
        path = tmp_path / "c.desc"
        write_descriptors(c, path)
        back = read_descriptors(path)
        assert back == c
        assert back.images[0].n_features == 0

    def test_write_is_deterministic(self, tmp_path, rng):
        arrays = [rng.normal(size=(n, 8)) for n in (40, 30, 30)]
        c = corpus_of(*arrays)
        p1, p2 = tmp_path / "a.desc", tmp_path / "b.desc"
        write_descriptors(c, p1)
        write_descriptors(c, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.desc"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError, match="bad magic"):
            read_descriptors(path)

    def test_truncated_payload_names_image(self, tmp_path, rng):
        c = corpus_of(rng.normal(size=(2, 4)), rng.normal(size=(3, 4)))
        path = tmp_path / "c.desc"
        write_descriptors(c, path)
        data = path.read_bytes()
        path.write_bytes(data[:-10])  # chop into image 1's payload
        with pytest.raises(FormatError, match="image_id 1"):
            read_descriptors(path)

    def test_non_finite_value_reports_offset(self, tmp_path):
        c = corpus_of([[1.0, 2.0]])
        path = tmp_path / "c.desc"
        write_descriptors(c, path)
        data = bytearray(path.read_bytes())
        data[24:28] = np.array([np.inf], dtype="<f4").tobytes()  # second value
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="image_id 0.*offset 24") as exc:
            read_descriptors(path)
        assert exc.value.offset == 24

    def test_trailing_bytes_rejected(self, tmp_path):
        c = corpus_of([[1.0, 2.0]])
        path = tmp_path / "c.desc"
        write_descriptors(c, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            read_descriptors(path)


class TestVocabularyFile:
    def test_round_trip(self, tmp_path, rng):
        v = Vocabulary(rng.normal(size=(16, 8)).astype(np.float32), seed=42)
        path = tmp_path / "v.vocab"
        write_vocabulary(v, path)
        back = read_vocabulary(path)
        assert back == v
        assert back.seed == 42

    def test_duplicate_centroids_rejected_at_load(self, tmp_path, rng):
        cents = rng.normal(size=(4, 8)).astype(np.float32)
        v = Vocabulary(cents, seed=0)
        path = tmp_path / "v.vocab"
        write_vocabulary(v, path)
        data = bytearray(path.read_bytes())
        # overwrite centroid 1 with centroid 0's bytes
        row = 8 * 4
        data[20 + row : 20 + 2 * row] = data[20 : 20 + row]
        path.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="duplicate"):
            read_vocabulary(path)

    def test_duplicate_centroids_rejected_at_construction(self):
        cents = np.ones((2, 4), dtype=np.float32)
        with pytest.raises(ValueError, match="duplicate"):
            Vocabulary(cents, seed=0)

    def test_size_mismatch(self, tmp_path, rng):
        v = Vocabulary(rng.normal(size=(4, 8)).astype(np.float32), seed=0)
        path = tmp_path / "v.vocab"
        write_vocabulary(v, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="expected"):
            read_vocabulary(path)


class TestGroundTruthFile:
    def test_round_trip(self, tmp_path):
        gt = {0: {5, 3}, 2: {7}}
        path = tmp_path / "gt.txt"
        write_ground_truth(gt, path)
        assert read_ground_truth(path) == gt

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "gt.txt"
        path.write_text("0: 1 2\nnot a line\n")
        with pytest.raises(FormatError, match="line 2"):
            read_ground_truth(path)

    def test_empty_relevant_set_rejected(self, tmp_path):
        path = tmp_path / "gt.txt"
        path.write_text("3:\n")
        with pytest.raises(FormatError, match="empty relevant"):
            read_ground_truth(path)

    def test_duplicate_query_rejected(self, tmp_path):
        path = tmp_path / "gt.txt"
        path.write_text("3: 1\n3: 2\n")
        with pytest.raises(FormatError, match="duplicate query"):
            read_ground_truth(path)


def test_feature_ref_key_round_trip():
    ref = FeatureRef(12345, 678)
    assert FeatureRef.from_key(ref.key()) == ref
