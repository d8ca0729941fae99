import numpy as np
import pytest

from afrelay.allocation import grid_oracle_chain
from afrelay.channel import TwoHopChannel, rayleigh_channel
from afrelay.errors import DegenerateChannelError, InvalidInputError
from afrelay.linear import design_p1
from afrelay.mse import chain_stream_mse, stream_mse
from afrelay.multihop import MultiHopChannel, multihop_design, node_tx_powers
from afrelay.objectives import Branch


@pytest.mark.parametrize("spec", ["MutualInfo", "SumMSE", "MaxMSE", "ProdSINR"])
def test_two_hops_identical_to_two_hop_design(spec):
    rng = np.random.default_rng(31)
    for _ in range(5):
        ch = TwoHopChannel.random(3, 3, 2, rng, rho_1=0.5, rho_2=1.5)
        ref = design_p1(ch, spec, 8.0, 12.0)
        mh = multihop_design(MultiHopChannel.from_two_hop(ch, 8.0, 12.0), spec)
        np.testing.assert_array_equal(mh.nodes[0], ref.design.u)
        np.testing.assert_array_equal(mh.nodes[1], ref.design.f)
        np.testing.assert_array_equal(mh.g, ref.design.g)
        np.testing.assert_array_equal(mh.mse, ref.mse)


def test_chain_formula_reduces_to_two_hop():
    rng = np.random.default_rng(32)
    a, b, ls, lr = rng.exponential(1.0, (4, 50))
    rho = 0.3
    two = stream_mse(a, b, ls, lr, rho)
    chain = chain_stream_mse(np.stack([a * ls / rho, b * lr / rho], axis=-1))
    np.testing.assert_allclose(chain, two, rtol=0, atol=1e-14)


@pytest.mark.parametrize("spec,equal", [("SumMSE", False), ("MaxMSE", True)])
def test_four_hop_chain(spec, equal):
    rng = np.random.default_rng(33)
    hops = [rayleigh_channel(3, 3, rng) for _ in range(4)]
    ch = MultiHopChannel(hops, (1.0, 0.5, 2.0, 1.0), (10.0, 5.0, 8.0, 4.0), 2)
    d = multihop_design(ch, spec)
    np.testing.assert_allclose(node_tx_powers(ch, d.nodes), ch.budgets, rtol=1e-10)
    diag = np.real(np.diag(d.mse))
    want = chain_stream_mse(np.swapaxes(d.hop_snrs, 0, 1))
    if equal:
        assert np.ptp(diag) <= 1e-10
        assert diag[0] == pytest.approx(want.mean(), abs=1e-10)
    else:
        np.testing.assert_allclose(diag, want, atol=1e-10)
        h = d.g @ hops[3] @ d.nodes[3] @ hops[2] @ d.nodes[2] @ hops[1] @ d.nodes[1] @ hops[0] @ d.nodes[0]
        assert np.max(np.abs(h - np.diag(np.diag(h)))) <= 1e-9


def test_three_hop_single_stream_against_grid():
    rng = np.random.default_rng(34)
    hops = [rayleigh_channel(2, 2, rng) for _ in range(3)]
    ch = MultiHopChannel(hops, (1.0, 1.0, 1.0), (3.0, 2.0, 4.0), 1)
    d = multihop_design(ch, "SumMSE")
    lams = np.array([[np.linalg.svd(h, compute_uv=False)[0] ** 2] for h in hops])
    _, ref = grid_oracle_chain(lams, [1.0] * 3, [3.0, 2.0, 4.0], "SumMSE", 10, Branch.CONCAVE)
    assert d.objective_value <= ref * 1.05


def test_three_hops_two_streams_against_grid():
    rng = np.random.default_rng(35)
    hops = [rayleigh_channel(2, 2, rng) for _ in range(3)]
    ch = MultiHopChannel(hops, (1.0, 1.0, 1.0), (3.0, 2.0, 4.0), 2)
    d = multihop_design(ch, "SumMSE")
    lams = np.stack([np.linalg.svd(h, compute_uv=False) ** 2 for h in hops])
    _, ref = grid_oracle_chain(lams, [1.0] * 3, [3.0, 2.0, 4.0], "SumMSE", 40, Branch.CONCAVE)
    assert d.objective_value <= ref * 1.05


def test_dead_hop_is_degenerate(rng):
    hops = [rayleigh_channel(2, 2, rng), np.zeros((2, 2)), rayleigh_channel(2, 2, rng)]
    with pytest.raises(DegenerateChannelError):
        multihop_design(MultiHopChannel(hops, (1, 1, 1), (1, 1, 1), 1), "SumMSE")


def test_channel_validation(rng):
    with pytest.raises(InvalidInputError):
        MultiHopChannel([rayleigh_channel(2, 2, rng)], (1,), (1,))
    with pytest.raises(InvalidInputError):
        MultiHopChannel([rayleigh_channel(3, 2, rng), rayleigh_channel(2, 2, rng)], (1, 1), (1, 1))
    with pytest.raises(InvalidInputError):
        MultiHopChannel([rayleigh_channel(2, 2, rng)] * 2, (1, 0), (1, 1))
