import numpy as np
import pytest

from fedcast.config import FLConfig, TaskConfig
from fedcast.synth_task import (Dataset, DirectionSpec, build_partition, dump_tsv, load_tsv,
                                make_direction, sample_pairs)


def _identity_seed(vocab=2):
    for seed in range(1000):
        if make_direction(seed, 0, vocab).substitution == tuple(range(vocab)):
            return seed
    raise AssertionError("no identity seed found")


class TestDirections:
    def test_deterministic(self):
        assert make_direction(7, 1) == make_direction(7, 1)

    def test_is_permutation(self):
        for d in range(5):
            assert sorted(make_direction(3, d).substitution) == list(range(16))

    def test_distinct_ids_differ(self):
        assert make_direction(7, 0) != make_direction(7, 1)

    def test_identity_for_v2(self):
        seed = _identity_seed()
        assert make_direction(seed, 0, 2).substitution == (0, 1)

    def test_rejects_tiny_vocab(self):
        with pytest.raises(ValueError):
            make_direction(0, 0, 1)


class TestSampling:
    def test_empty(self):
        assert sample_pairs(make_direction(0, 0), 0, seed=1) == []

    def test_identity_direction(self):
        spec = DirectionSpec(0, tuple(range(16)), False)
        assert all(p.src == p.tgt for p in sample_pairs(spec, 50, seed=2))

    def test_reversed_by_hand(self):
        spec = DirectionSpec(0, tuple(range(16)), True)
        assert spec.translate(np.array([1, 2, 3, 4])).tolist() == [4, 3, 2, 1]

    def test_rule_holds(self):
        spec = make_direction(11, 2)
        for p in sample_pairs(spec, 100, seed=5):
            src = p.src[::-1] if spec.reversed else p.src
            assert p.tgt == tuple(spec.substitution[t] for t in src)

    def test_seeded(self):
        spec = make_direction(0, 0)
        assert sample_pairs(spec, 20, 9) == sample_pairs(spec, 20, 9)
        assert sample_pairs(spec, 20, 9) != sample_pairs(spec, 20, 10)


class TestPartition:
    def test_non_iid_assignment(self):
        part = build_partition(FLConfig(task=TaskConfig(train_per_client=50)))
        assert [set(ds.direction.tolist()) for ds in part.train] == [{0}, {1}, {2}]
        assert part.n == sum(part.n_k) == 150
        assert len({d.substitution for d in part.directions}) == 3

    def test_iid_balance_chi_square(self):
        part = build_partition(FLConfig(data_mode="iid", task=TaskConfig(train_per_client=3000)))
        for ds in part.train:
            counts = np.bincount(ds.direction, minlength=3)
            assert np.all(np.abs(counts / 3000 - 1 / 3) <= 0.05)
            chi2 = float(((counts - 1000) ** 2 / 1000).sum())
            assert chi2 < 13.8  # p = 0.001 with 2 degrees of freedom
            rules = [part.directions[d] for d in ds.direction[:200]]
            for s, t, spec in zip(ds.src, ds.tgt, rules):
                assert t.tolist() == spec.translate(s).tolist()

    def test_shared_eval_sets(self):
        part = build_partition(FLConfig(task=TaskConfig(val_per_direction=10, test_per_direction=7)))
        assert np.bincount(part.validation.direction).tolist() == [10, 10, 10]
        assert np.bincount(part.test.direction).tolist() == [7, 7, 7]

    def test_uneven_sizes_and_weights(self):
        part = build_partition(FLConfig(task=TaskConfig(train_per_client=(10, 20, 70))))
        assert part.weights() == [0.1, 0.2, 0.7]

    def test_reproducible(self):
        cfg = FLConfig(data_mode="iid", task=TaskConfig(train_per_client=40))
        a, b = build_partition(cfg), build_partition(cfg)
        assert all(x.digest() == y.digest() for x, y in zip(a.train, b.train))
        assert a.validation.digest() == b.validation.digest()


def test_tsv_round_trip(tmp_path):
    pairs = sample_pairs(make_direction(0, 1), 5, seed=3)
    pairs = [type(p)(p.src, p.tgt, 1) for p in pairs]
    dump_tsv(pairs, tmp_path / "d.tsv")
    assert load_tsv(tmp_path / "d.tsv") == pairs
    (tmp_path / "two.tsv").write_text("1 2\t3 4\n", encoding="utf-8")
    assert load_tsv(tmp_path / "two.tsv", direction=2)[0].direction == 2
    (tmp_path / "bad.tsv").write_text("1 2\t3\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_tsv(tmp_path / "bad.tsv")


def test_dataset_indexing():
    ds = Dataset.from_pairs(sample_pairs(make_direction(0, 0), 6, seed=0))
    assert len(ds[1:4]) == 3 and len(ds[np.array([0, 5])]) == 2
    assert len(Dataset.from_pairs([], seq_len=8)) == 0
