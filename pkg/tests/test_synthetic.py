"""Synthetic generator: determinism, label consistency, and the nearest-mean
separability oracle."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from evloc.records import load_manifest, load_samples
from evloc.synthetic import (SynthConfig, class_means, nearest_mean_accuracy,
                             synthesize_dataset)
from evloc.validation import ValidationError

SMALL = SynthConfig(num_classes=3, feature_dim=8, snippets=20, train_videos=4,
                    test_videos=2, max_segment_len=6)


def tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        synthesize_dataset(SMALL, tmp_path / "a", seed=7)
        synthesize_dataset(SMALL, tmp_path / "b", seed=7)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        synthesize_dataset(SMALL, tmp_path / "a", seed=7)
        synthesize_dataset(SMALL, tmp_path / "c", seed=8)
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


class TestStructure:
    def test_labels_are_union_of_segments(self, tmp_path):
        train, test = synthesize_dataset(SMALL, tmp_path, seed=11)
        for manifest in (train, test):
            for record in load_manifest(manifest):
                assert record.segments, "every synthetic video plants segments"
                classes = sorted({c for _, _, c in record.segments})
                assert list(record.labels) == classes

    def test_segments_fit_and_do_not_overlap(self, tmp_path):
        train, _ = synthesize_dataset(SMALL, tmp_path, seed=13)
        for record in load_manifest(train):
            previous_end = 0
            for start, end, class_id in record.segments:
                assert 0 <= start < end <= SMALL.snippets
                assert start >= previous_end
                assert 0 <= class_id < SMALL.num_classes
                previous_end = end
            count = len(record.segments)
            assert SMALL.min_segments <= count <= SMALL.max_segments

    def test_feature_files_load_with_expected_shape(self, tmp_path):
        train, _ = synthesize_dataset(SMALL, tmp_path, seed=17)
        samples = load_samples(load_manifest(train), tmp_path)
        for sample in samples:
            assert sample.rgb.shape == (SMALL.feature_dim, SMALL.snippets)
            assert sample.flow.shape == (SMALL.feature_dim, SMALL.snippets)

    def test_infeasible_config_rejected(self):
        with pytest.raises(ValidationError):
            SynthConfig(snippets=10, max_segments=3, min_segment_len=4,
                        max_segment_len=4)


class TestSeparabilityOracle:
    def test_noiseless_nearest_mean_is_perfect(self, tmp_path):
        clean = SynthConfig(num_classes=3, feature_dim=8, snippets=20,
                            train_videos=5, test_videos=0, max_segment_len=6,
                            noise_std=0.0, distractor_prob=0.0)
        train, _ = synthesize_dataset(clean, tmp_path, seed=23)
        means, background = class_means(clean, seed=23)
        for record, sample in zip(load_manifest(train),
                                  load_samples(load_manifest(train), tmp_path)):
            features = np.stack([sample.rgb, sample.flow])
            accuracy = nearest_mean_accuracy(features, record.segments, clean,
                                             means, background)
            assert accuracy == 1.0

    def test_default_noise_keeps_high_separability(self, tmp_path):
        noisy = SynthConfig(num_classes=3, feature_dim=16, snippets=40,
                            train_videos=6, test_videos=0)
        train, _ = synthesize_dataset(noisy, tmp_path, seed=29)
        means, background = class_means(noisy, seed=29)
        accuracies = []
        for record, sample in zip(load_manifest(train),
                                  load_samples(load_manifest(train), tmp_path)):
            features = np.stack([sample.rgb, sample.flow])
            accuracies.append(nearest_mean_accuracy(features, record.segments,
                                                    noisy, means, background))
        assert float(np.mean(accuracies)) >= 0.9
