"""BER sweeps, QoS power sweeps and empirical MSE checks.

Randomness is organised in fixed-size blocks of trials.  Block ``b`` of SNR
point ``p`` draws everything from ``SeedSequence((seed, p, b))``, so results
do not depend on the number of worker threads or on evaluation order.  Within
a block every design sees the same channels, bits and noise.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..channel import KroneckerErrorModel, TwoHopChannel, rayleigh_channel
from ..errors import InfeasibleTargetError, InvalidInputError, RelayDesignError, UnsupportedConfigurationError
from ..linear import DesignOptions, _branch_for, chain_design, naf_matrices, solve_p2, solve_sa_p2
from ..mse import TransceiverDesign
from ..multirelay import multirelay_matrices
from ..nonlinear import _require_convex, dfe_filters, gmd_rotation, solve_dfe_p2
from ..objectives import Branch, get_objective
from ..robust import RobustChannelState, robust_design_p1
from ..linear import design_p1
from .detect import detect_dfe, detect_linear
from .qam import SUPPORTED_ORDERS, bits_per_symbol, qam_mod

SCENARIOS = ("two_hop_p1", "two_hop_p2", "dfe", "robust", "multihop", "multirelay", "naf")
BLOCK_SIZE = 5000
THREADS_ENV = "AFRELAY_THREADS"

_DEFAULT_DESIGNS = {
    "two_hop_p1": ["MaxMSE"],
    "two_hop_p2": ["RC", "SA", "RC-DFE"],
    "dfe": ["MaxMSE-DFE"],
    "robust": ["SumMSE"],
    "multihop": ["MaxMSE"],
    "multirelay": ["SumMSE"],
    "naf": ["NAF"],
}


@dataclass(frozen=True)
class SimConfig:
    """Experiment description; JSON configs name these fields exactly.

    ``objective`` lists the designs to simulate: objective names for linear
    designs, ``<objective>-DFE`` for a decision-feedback receiver, ``NAF``
    for the naive baseline, and ``RC``/``SA``/``RC-DFE`` for QoS designs.
    ``snr_rd_db`` is either fixed or paired element-wise with ``snr_sr_db``.
    Noise variances are ``10^(noise_db/10)`` on every link and budgets follow
    ``P = 10^(snr_db/10) * rho`` with unit-variance channel entries.
    """

    scenario: str
    n_s: int = 3
    n_r: int = 3
    k: int = 2
    n_d: Optional[int] = None
    num_hops: Optional[int] = None
    num_relays: Optional[Union[int, list]] = None
    objective: Optional[Union[str, list]] = None
    qos_targets: Optional[list] = None
    eta: Optional[list] = None
    qam_order: int = 4
    snr_sr_db: list = field(default_factory=lambda: [10.0])
    snr_rd_db: Union[float, list] = 20.0
    trials: int = 1000
    seed: int = 0
    output: Optional[str] = None
    error_variance: float = 0.1
    include_naf: bool = False
    noise_db: float = 0.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidInputError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if self.qam_order not in SUPPORTED_ORDERS:
            raise InvalidInputError(f"qam_order must be one of {SUPPORTED_ORDERS}")
        if int(self.trials) < 1:
            raise InvalidInputError("trials must be at least 1")
        sweep = [float(x) for x in np.atleast_1d(self.snr_sr_db)]
        if not sweep:
            raise InvalidInputError("snr_sr_db sweep is empty")
        object.__setattr__(self, "snr_sr_db", sweep)
        if isinstance(self.snr_rd_db, (list, tuple)):
            rd = [float(x) for x in self.snr_rd_db]
            if len(rd) != len(sweep):
                raise InvalidInputError("a snr_rd_db list must pair with snr_sr_db")
            object.__setattr__(self, "snr_rd_db", rd)
        if min(self.n_s, self.n_r, self.k) < 1 or self.k > min(self.n_s, self.n_r, self.dest_antennas):
            raise InvalidInputError("stream count exceeds the antenna counts")
        if self.scenario == "multihop" and (self.num_hops is None or self.num_hops < 2):
            raise InvalidInputError("multihop needs num_hops >= 2")
        if self.scenario == "multirelay" and not self.relay_counts:
            raise InvalidInputError("multirelay needs num_relays")
        if self.scenario == "two_hop_p2" and self.qos_targets is None and self.eta is None:
            raise InvalidInputError("two_hop_p2 needs qos_targets or an eta sweep")
        if not self.error_variance >= 0:
            raise InvalidInputError("error_variance must be non-negative")

    @property
    def dest_antennas(self):
        return self.n_s if self.n_d is None else self.n_d

    @property
    def relay_counts(self):
        if self.num_relays is None:
            return []
        return [int(q) for q in np.atleast_1d(self.num_relays)]

    @property
    def rho(self):
        return 10.0 ** (self.noise_db / 10.0)

    def snr_pairs(self):
        rd = self.snr_rd_db if isinstance(self.snr_rd_db, list) else [float(self.snr_rd_db)] * len(self.snr_sr_db)
        return list(zip(self.snr_sr_db, rd))

    def designs(self):
        names = self.objective if self.objective is not None else _DEFAULT_DESIGNS[self.scenario]
        names = [names] if isinstance(names, str) else list(names)
        if self.include_naf and "NAF" not in names:
            names.append("NAF")
        return names

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidInputError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    ber: float
    ci95: float
    trials: int
    bit_errors: int
    bits: int


@dataclass
class BerCurve:
    """BER of one design across the SNR sweep, with raw counts."""

    design: str
    points: list
    config_hash: str
    seed: int


def ci95(errors, bits):
    """Half-width of the normal-approximation binomial 95% interval."""
    p = errors / bits
    return 1.96 * float(np.sqrt(p * (1.0 - p) / bits))


def _rng(seed, point, block):
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(point), int(block))))


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# batched design construction: each returns (nodes, g, b_or_None)


def _linear_chain(hops, rhos, budgets, k, name):
    spec = get_objective(name)
    opts = DesignOptions()
    cd = chain_design(hops, rhos, budgets, k, spec, _branch_for(spec, opts), opts, check=False)
    return cd.nodes, cd.g, None


def _dfe_chain(hops, rhos, budgets, k, name):
    _require_convex(name)
    cd = chain_design(hops, rhos, budgets, k, "ProdMSE", Branch.DFE, DesignOptions(), rotation_fn=gmd_rotation,
                      check=False)
    g, b, _, _, _ = dfe_filters(cd.nodes[0], cd.h_equiv, cd.noise_cov, check=False)
    return cd.nodes, g, b


def _naf_chain(hops, rhos, budgets, k):
    if len(hops) != 2:
        raise UnsupportedConfigurationError("the NAF baseline is defined for two hops")
    u, f, g, _, _ = naf_matrices(hops[0], hops[1], rhos[0], rhos[1], k, budgets[0], budgets[1], check=False)
    return [u, f], g, None


def _chain_builder(name, hops, rhos, budgets, k):
    if name == "NAF":
        return _naf_chain(hops, rhos, budgets, k)
    if name.endswith("-DFE"):
        return _dfe_chain(hops, rhos, budgets, k, name[: -len("-DFE")])
    return _linear_chain(hops, rhos, budgets, k, name)


def _per_trial(build, n, k, n_nodes):
    """Stack per-trial designs ``build(t) -> (nodes, g, b)``."""
    out = [build(t) for t in range(n)]
    nodes = [np.stack([o[0][i] for o in out]) for i in range(n_nodes)]
    g = np.stack([o[1] for o in out])
    b = None if out[0][2] is None else np.stack([o[2] for o in out])
    return nodes, g, b


def _qos_builder(name, hops, rhos, k, targets):
    h_sr, h_rd = hops

    def build(t):
        ch = TwoHopChannel(h_sr[t], h_rd[t], rhos[0], rhos[1], k)
        if name == "RC":
            d = solve_p2(ch, targets).design
            return [d.u, d.f], d.g, None
        if name == "SA":
            d = solve_sa_p2(ch, targets).design
            return [d.u, d.f], d.g, None
        if name == "RC-DFE":
            d = solve_dfe_p2(ch, targets).design.base
            return [d.u, d.f], d.g, d.backward
        raise InvalidInputError(f"unknown QoS design {name!r}; expected RC, SA or RC-DFE")

    return _per_trial(build, h_sr.shape[0], k, 2)


# ---------------------------------------------------------------------------
# transmission


def _transmit(hops, nodes, s, noises):
    x = np.einsum("...ij,...j->...i", nodes[0], s)
    for i, h in enumerate(hops):
        r = np.einsum("...ij,...j->...i", h, x) + noises[i]
        if i + 1 < len(hops):
            x = np.einsum("...ij,...j->...i", nodes[i + 1], r)
    return r


def _count(bits, y, g, b, m):
    det = detect_linear(y, g, m) if b is None else detect_dfe(y, g, b, m)
    return int(np.count_nonzero(det != bits))


def _hop_dims(cfg):
    if cfg.scenario == "multihop":
        return [cfg.n_s] + [cfg.n_r] * (cfg.num_hops - 1) + [cfg.dest_antennas]
    return [cfg.n_s, cfg.n_r, cfg.dest_antennas]


def _budgets(cfg, snr_sr, snr_rd, hops=2):
    rho = cfg.rho
    return [10.0 ** (snr_sr / 10.0) * rho] + [10.0 ** (snr_rd / 10.0) * rho] * (hops - 1)


def _run_block(cfg, designs, point, block, n, snr_sr, snr_rd):
    """Bit errors of every design on one block of ``n`` trials."""
    rng = _rng(cfg.seed, point, block)
    m = cfg.qam_order
    k = cfg.k
    bps = bits_per_symbol(m)
    rho = cfg.rho
    bits = rng.integers(0, 2, size=(n, k * bps), dtype=np.uint8)
    s = qam_mod(bits, m)
    errors = {}

    if cfg.scenario == "multirelay":
        q_max = max(cfg.relay_counts)
        h_sr = rayleigh_channel(cfg.n_r, cfg.n_s, rng, size=(n, q_max))
        h_rd = rayleigh_channel(cfg.dest_antennas, cfg.n_r, rng, size=(n, q_max))
        n1 = np.sqrt(rho) * _cn(rng, (n, q_max * cfg.n_r))
        n2 = np.sqrt(rho) * _cn(rng, (n, cfg.dest_antennas))
        p_s, p_r = _budgets(cfg, snr_sr, snr_rd)
        for q in cfg.relay_counts:
            out = multirelay_matrices(h_sr[:, :q], h_rd[:, :q], rho, rho, k, p_s, p_r, check=False)
            y = _transmit([out["h_sr"], out["h_rd"]], [out["u"], out["f"]], s, [n1[:, : q * cfg.n_r], n2])
            errors[f"Q={q}"] = _count(bits, y, out["g"], None, m)
        return errors

    dims = _hop_dims(cfg)
    hops = [rayleigh_channel(dims[i + 1], dims[i], rng, size=(n,)) for i in range(len(dims) - 1)]
    noises = [np.sqrt(rho) * _cn(rng, (n, dims[i + 1])) for i in range(len(dims) - 1)]
    rhos = [rho] * len(hops)
    budgets = _budgets(cfg, snr_sr, snr_rd, len(hops))

    if cfg.scenario == "robust":
        eps = cfg.error_variance
        err_sr = KroneckerErrorModel.scaled_identity(dims[1], dims[0], eps)
        err_rd = KroneckerErrorModel.scaled_identity(dims[2], dims[1], eps)
        true_hops = [hops[0] + np.sqrt(eps) * _cn(rng, hops[0].shape), hops[1] + np.sqrt(eps) * _cn(rng, hops[1].shape)]
        for name in designs:
            for label, robust in ((f"{name}-robust", True), (f"{name}-naive", False)):
                def build(t, robust=robust, name=name):
                    state = RobustChannelState(hops[0][t], hops[1][t], err_sr, err_rd, rho, rho, k)
                    if robust:
                        d = robust_design_p1(state, name, budgets[0], budgets[1]).design
                    else:
                        d = design_p1(state.estimated(), name, budgets[0], budgets[1]).design
                    return [d.u, d.f], d.g, None

                nodes, g, b = _per_trial(build, n, k, 2)
                y = _transmit(true_hops, nodes, s, noises)
                errors[label] = _count(bits, y, g, b, m)
        return errors

    for name in designs:
        if cfg.scenario == "two_hop_p2" and name in ("RC", "SA", "RC-DFE"):
            nodes, g, b = _qos_builder(name, hops, rhos, k, tuple(cfg.qos_targets))
        else:
            nodes, g, b = _chain_builder(name, hops, rhos, budgets, k)
        y = _transmit(hops, nodes, s, noises)
        errors[name] = _count(bits, y, g, b, m)
    return errors


def _labels(cfg):
    if cfg.scenario == "multirelay":
        return [f"Q={q}" for q in cfg.relay_counts]
    if cfg.scenario == "robust":
        return [f"{n}-{kind}" for n in cfg.designs() for kind in ("robust", "naive")]
    return cfg.designs()


def simulate_ber(cfg: SimConfig) -> list:
    """Run the BER sweep; returns one :class:`BerCurve` per design in config order.

    Raises
    ------
    RelayDesignError
        A design failed; the message names the SNR point and trial block.
    """
    designs = cfg.designs()
    if cfg.scenario == "two_hop_p2" and cfg.qos_targets is None:
        raise InvalidInputError("a BER run of two_hop_p2 needs qos_targets")
    labels = _labels(cfg)
    bps = bits_per_symbol(cfg.qam_order)
    bits_per_trial = cfg.k * bps
    tasks = []
    for p, (snr_sr, snr_rd) in enumerate(cfg.snr_pairs()):
        for blk, start in enumerate(range(0, cfg.trials, BLOCK_SIZE)):
            tasks.append((p, blk, min(BLOCK_SIZE, cfg.trials - start), snr_sr, snr_rd))

    def run(task):
        p, blk, n, snr_sr, snr_rd = task
        try:
            return p, _run_block(cfg, designs, p, blk, n, snr_sr, snr_rd)
        except RelayDesignError as exc:
            raise type(exc)(f"{exc} (scenario {cfg.scenario}, snr_sr_db={snr_sr}, trial block {blk})") from exc

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    totals = [{name: 0 for name in labels} for _ in cfg.snr_pairs()]
    for p, errs in results:
        for name, e in errs.items():
            totals[p][name] += e
    curves = []
    h = cfg.config_hash()
    n_bits = cfg.trials * bits_per_trial
    for name in labels:
        pts = []
        for p, (snr_sr, _) in enumerate(cfg.snr_pairs()):
            e = totals[p][name]
            pts.append(BerPoint(snr_sr, e / n_bits, ci95(e, n_bits), cfg.trials, e, n_bits))
        curves.append(BerCurve(name, pts, h, cfg.seed))
    return curves


# ---------------------------------------------------------------------------
# QoS power sweep


@dataclass(frozen=True)
class PowerRow:
    eta: float
    design: str
    avg_power_db: float
    draws: int
    infeasible: int


def power_experiment(cfg: SimConfig, eta=None) -> list:
    """Average minimum total power of RC, SA and RC-DFE versus an equal MSE ceiling.

    Channels are drawn per (eta point, draw) substream.  Draws where a target
    cannot be met are excluded and counted.  Asserts RC <= SA and
    RC-DFE <= RC on every feasible draw.
    """
    etas = [float(x) for x in (eta if eta is not None else (cfg.eta or []))]
    if not etas:
        raise InvalidInputError("the power sweep needs eta values")
    rho = cfg.rho
    rows = []
    for p, e in enumerate(etas):
        targets = (e,) * cfg.k
        sums = {"RC": 0.0, "SA": 0.0, "RC-DFE": 0.0}
        infeasible = 0
        for t in range(cfg.trials):
            rng = _rng(cfg.seed, p, t)
            ch = TwoHopChannel.random(cfg.n_s, cfg.n_r, cfg.k, rng, rho, rho, cfg.n_d)
            try:
                rc = solve_p2(ch, targets).total_power
                sa = solve_sa_p2(ch, targets).total_power
                dfe = solve_dfe_p2(ch, targets).total_power
            except InfeasibleTargetError:
                infeasible += 1
                continue
            assert rc <= sa * (1 + 1e-9), f"RC power {rc} exceeds SA power {sa} (eta={e}, draw {t})"
            assert dfe <= rc * (1 + 1e-9), f"DFE power {dfe} exceeds RC power {rc} (eta={e}, draw {t})"
            sums["RC"] += rc
            sums["SA"] += sa
            sums["RC-DFE"] += dfe
        feasible = cfg.trials - infeasible
        for name, total in sums.items():
            avg = 10.0 * np.log10(total / feasible) if feasible else float("nan")
            rows.append(PowerRow(e, name, float(avg), feasible, infeasible))
    return rows


# ---------------------------------------------------------------------------
# empirical MSE


def empirical_mse(design: TransceiverDesign, channel: TwoHopChannel, trials, rng, chunk=20000):
    """Per-stream mean of ``|y_k - s_k|^2`` over random symbols and noise.

    Symbols are unit-variance circular Gaussian.  Returns ``(mean, se)``.
    """
    if trials < 1000:
        raise InvalidInputError("empirical_mse needs at least 1000 trials")
    k = design.u.shape[1]
    total = np.zeros(k)
    total_sq = np.zeros(k)
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        s = _cn(rng, (n, k))
        n1 = np.sqrt(channel.rho_1) * _cn(rng, (n, channel.n_r))
        n2 = np.sqrt(channel.rho_2) * _cn(rng, (n, channel.n_d))
        r = _transmit([channel.h_sr, channel.h_rd], [design.u, design.f], s, [n1, n2])
        err = np.abs(np.einsum("ij,nj->ni", design.g, r) - s) ** 2
        total += err.sum(axis=0)
        total_sq += (err ** 2).sum(axis=0)
        done += n
    mean = total / trials
    var = total_sq / trials - mean ** 2
    return mean, np.sqrt(np.maximum(var, 0.0) / trials)
