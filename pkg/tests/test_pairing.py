from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from crlc_ssl.augment import AugmentSpec
from crlc_ssl.errors import InvalidArgumentError, StrategyInapplicableError
from crlc_ssl.pairing import (
    build_pair_batch,
    cac_pair,
    check_strategy,
    crlc_pair,
    crlc_split,
    csc_pair,
    make_pair,
)


def _window(C, T=100):
    # each row holds its own channel index so views reveal which channels they hold
    return np.tile(np.arange(C, dtype=np.float64)[:, None], (1, T))


class TestCrlc:
    @pytest.mark.parametrize("C", range(4, 21))
    def test_partition(self, C, rng):
        for _ in range(50):
            a, b = crlc_split(C, rng)
            assert len(a) >= 2 and len(b) >= 2
            assert sorted(np.concatenate([a, b]).tolist()) == list(range(C))

    def test_views_hold_original_channels(self, rng):
        v1, v2 = crlc_pair(_window(10), rng)
        assert v1.shape[1] == v2.shape[1] == 100
        assert v1.shape[0] + v2.shape[0] == 10
        assert set(v1[:, 0]).isdisjoint(set(v2[:, 0]))

    def test_c1_range_uniform(self):
        # c1 is uniform over {2, ..., C-2}
        rng = np.random.default_rng(0)
        sizes = np.array([len(crlc_split(10, rng)[0]) for _ in range(7000)])
        assert sizes.min() == 2 and sizes.max() == 8
        freq = np.bincount(sizes, minlength=9)[2:] / len(sizes)
        np.testing.assert_allclose(freq, 1 / 7, atol=0.02)

    def test_every_channel_appears_in_both_views(self):
        rng = np.random.default_rng(1)
        in_first = np.zeros(10)
        for _ in range(2000):
            in_first[crlc_split(10, rng)[0]] += 1
        assert np.all((in_first > 0) & (in_first < 2000))

    @pytest.mark.parametrize("C", [2, 3])
    def test_too_few_channels(self, C, rng):
        with pytest.raises(StrategyInapplicableError):
            crlc_split(C, rng)


class TestCsc:
    def test_paired(self, rng):
        w, nxt = rng.normal(size=(3, 100)), rng.normal(size=(3, 100))
        a, b = csc_pair(w, nxt)
        assert a is w and b is nxt

    def test_halving(self):
        w = np.arange(400.0).reshape(2, 200)
        a, b = csc_pair(w)
        np.testing.assert_array_equal(a, w[:, :100])
        np.testing.assert_array_equal(b, w[:, 100:])

    def test_odd_length(self):
        with pytest.raises(InvalidArgumentError):
            csc_pair(np.zeros((2, 201)))

    def test_channel_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            csc_pair(np.zeros((2, 200)), np.zeros((3, 200)))


class TestCac:
    def test_views_differ(self, rng):
        w = rng.normal(size=(4, 500))
        a, b = cac_pair(w, AugmentSpec("eeg"), rng)
        assert a.shape == b.shape == w.shape
        assert not np.array_equal(a, b)


class TestStrategyChecks:
    def test_crlc_three_channels(self):
        with pytest.raises(StrategyInapplicableError):
            check_strategy("crlc", 3, 3000, True)

    def test_csc_odd_without_pairs(self):
        with pytest.raises(InvalidArgumentError):
            check_strategy("csc", 10, 3001, False)
        check_strategy("csc", 10, 3001, True)

    def test_unknown(self):
        with pytest.raises(InvalidArgumentError):
            check_strategy("xyz", 10, 3000, True)
        with pytest.raises(InvalidArgumentError):
            make_pair("xyz", np.zeros((4, 100)), np.random.default_rng(0))


class TestBatch:
    @pytest.mark.parametrize("strategy", ["crlc", "csc", "cac"])
    def test_executor_matches_serial(self, strategy):
        g = np.random.default_rng(3)
        windows = g.normal(size=(6, 10, 200))
        paired = g.normal(size=(6, 10, 200))

        def streams():
            return [np.random.default_rng([5, i]) for i in range(6)]

        serial = build_pair_batch(strategy, windows, streams(), paired)
        with ThreadPoolExecutor(4) as pool:
            threaded = build_pair_batch(strategy, windows, streams(), paired, executor=pool)
        assert len(serial) == len(threaded) == 6
        for a, b in zip(serial.view1 + serial.view2, threaded.view1 + threaded.view2):
            np.testing.assert_array_equal(a, b)
