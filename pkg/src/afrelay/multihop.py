"""Chains of L hops with a relay at every intermediate node."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import TwoHopChannel, as_matrix
from .errors import InvalidInputError
from .linear import ChainDesign, DesignOptions, _branch_for, chain_design
from .mse import _h, _herm
from .objectives import get_objective


@dataclass(frozen=True)
class MultiHopChannel:
    """Ordered hop matrices with noise variances and node budgets.

    Attributes
    ----------
    hops : tuple of ndarray
        ``H_1 .. H_L``; ``H_i`` maps node ``i-1`` to node ``i`` (node 0 is the source).
    rhos : tuple of float
        Noise variance at nodes ``1 .. L``.
    budgets : tuple of float
        Power budgets of the transmitting nodes ``0 .. L-1``.
    num_streams : int
    """

    hops: tuple
    rhos: tuple
    budgets: tuple
    num_streams: int = 1

    def __post_init__(self):
        hops = tuple(as_matrix(h, f"hop {i + 1}") for i, h in enumerate(self.hops))
        if len(hops) < 2:
            raise InvalidInputError("a multi-hop chain needs at least two hops")
        for i in range(1, len(hops)):
            if hops[i].shape[1] != hops[i - 1].shape[0]:
                raise InvalidInputError(f"hop {i + 1} has {hops[i].shape[1]} inputs but node {i} has {hops[i - 1].shape[0]} antennas")
        if len(self.rhos) != len(hops) or any(not r > 0 for r in self.rhos):
            raise InvalidInputError("one positive noise variance per hop is required")
        if len(self.budgets) != len(hops) or any(not p > 0 for p in self.budgets):
            raise InvalidInputError("one positive power budget per transmitting node is required")
        object.__setattr__(self, "hops", hops)
        object.__setattr__(self, "rhos", tuple(float(r) for r in self.rhos))
        object.__setattr__(self, "budgets", tuple(float(p) for p in self.budgets))

    @property
    def num_hops(self):
        return len(self.hops)

    @classmethod
    def from_two_hop(cls, channel: TwoHopChannel, p_s, p_r):
        return cls((channel.h_sr, channel.h_rd), (channel.rho_1, channel.rho_2), (p_s, p_r), channel.num_streams)


@dataclass
class MultiHopDesign:
    """Per-node matrices (source precoder first) and the destination receiver."""

    nodes: list
    g: np.ndarray
    mse: np.ndarray
    powers: np.ndarray  # (L, K) per-node per-stream powers
    hop_snrs: np.ndarray  # (L, K)
    s_rotation: np.ndarray
    objective_value: float
    iterations: int
    converged: bool


def node_tx_powers(channel: MultiHopChannel, nodes):
    """Actual transmit power of every node computed from the matrices."""
    cov = nodes[0] @ _h(nodes[0])
    out = [float(np.real(np.trace(cov)))]
    for i in range(1, channel.num_hops):
        h = channel.hops[i - 1]
        received = _herm(h @ cov @ _h(h) + channel.rhos[i - 1] * np.eye(h.shape[0]))
        cov = nodes[i] @ received @ _h(nodes[i])
        out.append(float(np.real(np.trace(cov))))
    return np.array(out)


def multihop_design(channel: MultiHopChannel, spec, budgets=None, opts: DesignOptions = None) -> MultiHopDesign:
    """Structured design of an L-hop chain with cyclic per-node power loading.

    ``budgets`` overrides the channel's node budgets.  For ``L = 2`` the result
    is identical to :func:`afrelay.linear.design_p1` on the same channel.
    """
    spec = get_objective(spec)
    opts = opts or DesignOptions()
    budgets = channel.budgets if budgets is None else tuple(budgets)
    cd: ChainDesign = chain_design(list(channel.hops), list(channel.rhos), list(budgets), channel.num_streams, spec,
                                   _branch_for(spec, opts), opts)
    lams = np.stack([np.linalg.svd(h, compute_uv=False)[: channel.num_streams] ** 2 for h in channel.hops])
    snrs = cd.powers * lams / np.asarray(channel.rhos)[:, None]
    mses = np.clip(np.real(np.diag(cd.mse)), 1e-300, 1.0)
    return MultiHopDesign(cd.nodes, cd.g, cd.mse, cd.powers, snrs, cd.s_rotation,
                          float(spec.evaluate(mses)), int(cd.iterations), bool(cd.converged))
