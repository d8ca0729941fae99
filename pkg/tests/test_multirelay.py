import numpy as np
import pytest

from afrelay.channel import TwoHopChannel, rayleigh_channel
from afrelay.errors import InvalidInputError
from afrelay.linear import design_p1
from afrelay.mse import relay_tx_power
from afrelay.multirelay import MultiRelayChannel, multirelay_design


def test_single_relay_matches_two_hop():
    rng = np.random.default_rng(41)
    for _ in range(10):
        ch = TwoHopChannel.random(3, 3, 2, rng)
        ref = design_p1(ch, "SumMSE", 10.0, 10.0)
        mr = multirelay_design(MultiRelayChannel((ch.h_sr,), (ch.h_rd,), 1.0, 1.0, 2), 10.0, 10.0)
        for x, y in ((mr.design.u, ref.design.u), (mr.design.f, ref.design.f), (mr.design.g, ref.design.g)):
            assert np.max(np.abs(x - y)) <= 1e-9
        assert mr.fit_residual <= 1e-9
        assert mr.sum_mse == pytest.approx(ref.objective_value, abs=1e-9)


@pytest.mark.parametrize("q", [2, 3, 5])
def test_block_diagonal_relay_and_budget(q):
    rng = np.random.default_rng(42)
    ch = MultiRelayChannel(tuple(rayleigh_channel(2, 3, rng) for _ in range(q)),
                           tuple(rayleigh_channel(3, 2, rng) for _ in range(q)), 1.0, 1.0, 3)
    mr = multirelay_design(ch, 10.0, 20.0)
    f = mr.design.f
    mask = np.kron(np.eye(q), np.ones((2, 2))) == 0
    assert np.all(f[mask] == 0)
    h_sr, _ = ch.stacked()
    assert relay_tx_power(f, h_sr, mr.design.u, 1.0) == pytest.approx(20.0, rel=1e-10)
    assert 0 <= mr.fit_residual < 1
    assert 0 < mr.sum_mse < 3


def test_identical_relays_get_identical_blocks(rng):
    h_sr, h_rd = rayleigh_channel(2, 2, rng), rayleigh_channel(2, 2, rng)
    mr = multirelay_design(MultiRelayChannel((h_sr, h_sr), (h_rd, h_rd), 1.0, 1.0, 2), 5.0, 5.0)
    np.testing.assert_allclose(mr.blocks[0], mr.blocks[1], atol=1e-10)


def test_more_relays_lower_average_mse():
    rng = np.random.default_rng(43)
    means = []
    for q in (1, 2, 3, 5):
        vals = []
        for _ in range(100):
            ch = MultiRelayChannel(tuple(rayleigh_channel(3, 3, rng) for _ in range(q)),
                                   tuple(rayleigh_channel(3, 3, rng) for _ in range(q)), 1.0, 1.0, 3)
            vals.append(multirelay_design(ch, 10.0, 100.0).sum_mse)
        means.append(np.mean(vals))
    assert all(np.diff(means) < 0)


def test_validation(rng):
    with pytest.raises(InvalidInputError):
        MultiRelayChannel((rayleigh_channel(2, 2, rng),), (), 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        MultiRelayChannel((rayleigh_channel(2, 2, rng), rayleigh_channel(3, 2, rng)),
                          (rayleigh_channel(2, 2, rng), rayleigh_channel(2, 3, rng)))
    ch = MultiRelayChannel((rayleigh_channel(2, 2, rng),), (rayleigh_channel(2, 2, rng),), 1.0, 1.0, 2)
    with pytest.raises(InvalidInputError):
        multirelay_design(ch, 0.0, 1.0)
