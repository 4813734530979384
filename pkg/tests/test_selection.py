import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedcast.errors import FormatError, SelectionError
from fedcast.selection import (HEADER, PartialUpdate, dp_names, random_count, select_dp, select_random,
                               select_send_all, select_threshold, threshold_names)
from fedcast.tensor_core import DeviationProfile, ParameterSet, encode_frames


def _params(n=15, seed=0):
    rng = np.random.default_rng(seed)
    return ParameterSet({f"t{i:02d}": rng.normal(size=(2, 3)) for i in range(n)})


def _profile(params, devs):
    return DeviationProfile(1, 0, dict(zip(params.names(), devs)))


class TestSendAll:
    def test_everything(self):
        p = _params()
        u = select_send_all(p)
        assert u.names() == p.names()
        s = u.stats(15)
        assert s.sent_tensors == 15 and s.saving_ratio == 0.0
        assert s.bytes_sent == HEADER.size + len(encode_frames(p)) == len(u.encode())

    def test_values_unmodified(self):
        p = _params()
        u = select_send_all(p)
        assert all(u.sent[n] is p[n] for n in p)


class TestRandom:
    def test_counts(self):
        assert random_count(0.5, 15) == 8
        assert random_count(0.5, 14) == 7
        for L in range(1, 65):
            assert random_count(0.5, L) == math.floor(L / 2 + 0.5)

    def test_extremes(self):
        p = _params()
        assert select_random(p, 1.0, seed=0).names() == select_send_all(p).names()
        u = select_random(p, 0.0, seed=0)
        assert u.sent == {} and u.stats(15).saving_ratio == 1.0

    def test_seeded(self):
        p = _params()
        assert select_random(p, 0.5, 4).names() == select_random(p, 0.5, 4).names()
        draws = {tuple(select_random(p, 0.5, s).names()) for s in range(20)}
        assert len(draws) > 1

    def test_bad_fraction(self):
        with pytest.raises(SelectionError):
            select_random(_params(), 1.5, 0)


class TestDP:
    devs = {"a": 0.1, "b": 0.2, "c": 0.3, "d": 0.4}

    def test_examples(self):
        assert sorted(dp_names(self.devs, "g")) == ["c", "d"]
        assert sorted(dp_names(self.devs, "l")) == ["a", "b"]

    def test_odd_count(self):
        p = _params(15)
        prof = _profile(p, np.linspace(0, 1, 15))
        assert len(select_dp(p, prof, "g").sent) == 8
        assert len(select_dp(p, prof, "l").sent) == 8

    def test_ties_lexicographic(self):
        assert dp_names({"b": 1.0, "a": 1.0, "c": 0.0}, "g") == ["a", "b"]
        assert dp_names({"b": 1.0, "a": 1.0, "c": 1.0}, "l") == ["b", "c"]

    def test_infinite_ranks_first(self):
        assert dp_names({"a": math.inf, "b": 0.5, "c": 0.1}, "g") == ["a", "b"]

    def test_missing_dev(self):
        p = _params(3)
        with pytest.raises(SelectionError):
            select_dp(p, DeviationProfile(1, 0, {"t00": 0.1}), "g")


class TestThreshold:
    devs = {"a": 0.1, "b": 0.5, "c": 0.9}

    def test_examples(self):
        assert threshold_names(self.devs, 0.5, "g") == ["b", "c"]
        assert threshold_names(self.devs, 0.5, "l") == ["a"]
        assert threshold_names(self.devs, 0.0, "g") == ["a", "b", "c"]
        assert threshold_names(self.devs, 0.0, "l") == []

    def test_infinity_in_g(self):
        assert threshold_names({"a": math.inf}, 1e300, "g") == ["a"]

    def test_errors(self):
        with pytest.raises(SelectionError):
            threshold_names(self.devs, -0.1, "g")
        with pytest.raises(SelectionError):
            threshold_names(self.devs, 0.1, "x")

    @given(st.lists(st.floats(0, 2), min_size=1, max_size=30), st.floats(0, 2), st.floats(0, 2))
    def test_partition_and_monotone(self, values, t1, t2):
        devs = {f"n{i}": v for i, v in enumerate(values)}
        g, l = set(threshold_names(devs, t1, "g")), set(threshold_names(devs, t1, "l"))
        assert g | l == set(devs) and not g & l
        lo, hi = sorted((t1, t2))
        assert set(threshold_names(devs, hi, "g")) <= set(threshold_names(devs, lo, "g"))
        assert set(threshold_names(devs, lo, "l")) <= set(threshold_names(devs, hi, "l"))

    def test_select_values(self):
        p = _params(3)
        u = select_threshold(p, _profile(p, [0.1, 0.5, 0.9]), 0.5, "g", n_k=7, train_loss=0.3)
        assert u.names() == ["t01", "t02"] and u.n_k == 7
        assert all(u.sent[n] is p[n] for n in u.sent)


class TestWire:
    def test_round_trip(self):
        p = _params(4)
        u = select_random(p, 0.5, 1, client_id=2, round=9, n_k=123, train_loss=0.25)
        v = PartialUpdate.decode(u.encode())
        assert (v.client_id, v.round, v.n_k, v.train_loss) == (2, 9, 123, 0.25)
        assert v.names() == u.names()
        assert all(np.array_equal(v.sent[n], u.sent[n]) for n in u.sent)
        assert len(u.encode()) == u.encoded_size()

    def test_empty_update(self):
        u = PartialUpdate(0, 1)
        assert len(u.encode()) == HEADER.size
        assert PartialUpdate.decode(u.encode()).sent == {}

    def test_corrupt(self):
        data = select_send_all(_params(2)).encode()
        with pytest.raises(FormatError):
            PartialUpdate.decode(data[:10])
        with pytest.raises(FormatError):
            PartialUpdate.decode(data + b"x")
        with pytest.raises(FormatError):
            PartialUpdate.decode(data[:-1])
