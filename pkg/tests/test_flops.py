import numpy as np
import pytest

from spectral_nn.diagnostics import measure_spectral_flops
from spectral_nn.flops import FlopCounter, leading_flops, predicted_flops
from spectral_nn.householder import hprod


class TestCounter:
    def test_scope_records_delta(self):
        c = FlopCounter()
        c.add("hprod", 5)
        with c.scope("outer"):
            c.add("hprod", 7)
            c.add("sigma", 3)
        assert c.total == 15
        assert c["outer"] == 10
        assert c["hprod"] == 12

    def test_merge_and_reset(self):
        a, b = FlopCounter(), FlopCounter()
        a.add("x", 2)
        b.add("x", 3)
        a.merge(b)
        assert a.total == 5 and a["x"] == 5
        a.reset()
        assert a.total == 0 and a["x"] == 0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            FlopCounter().add("x", -1)


class TestPredicted:
    def test_hprod(self):
        assert predicted_flops("hprod", k=32) == 128

    def test_spectral_fp(self):
        assert predicted_flops("spectral_fp", 64, 8, 8) == 3840
        assert leading_flops("spectral_fp", 64, 8, 8) == 4096

    def test_unknown(self):
        with pytest.raises(ValueError):
            predicted_flops("lstm")


class TestMeasured:
    def test_hprod_measured(self):
        c = FlopCounter()
        hprod(np.ones(64), np.arange(1.0, 33.0), counter=c)
        assert abs(c.total - 128) <= 1

    def test_forward_matches_closed_form(self):
        m = measure_spectral_flops(64, 8, 8, rng=0)
        # per reflector 4k + 1; the p sigma multiplies are the O(n) slack
        band = sum(range(57, 65))
        assert m["hprod"] == 2 * (4 * band + 8)
        assert abs(m["spectral_fp"] - predicted_flops("spectral_fp", 64, 8, 8)) <= 64 + 8 * 2 + 64

    def test_backward_is_seven_per_entry(self):
        m = measure_spectral_flops(64, 8, 8, rng=0)
        band = sum(range(57, 65))
        # length-k reflector: beta 2k, dh 2k, du 3k, plus two scalars
        assert m["hgrad"] == 2 * (7 * band + 2 * 8)

    def test_diagonal_only(self):
        m = measure_spectral_flops(64, 0, 0, rng=0)
        assert m["hprod"] == 0 and m["hgrad"] == 0
        assert m["spectral_fp"] == 64
