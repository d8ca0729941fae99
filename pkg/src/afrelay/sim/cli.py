"""Command line: ``afrelay {design,ber,power,oracle,validate}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from ..allocation import alternating_power_allocation, grid_oracle_p1, p1_value
from ..channel import TwoHopChannel
from ..errors import RelayDesignError
from ..linear import design_p1, p2_grid_oracle, solve_p2, solve_sa_p2
from ..mse import stream_mse
from ..nonlinear import design_dfe_p1, solve_dfe_p2
from ..objectives import OBJECTIVE_NAMES, get_objective
from .experiments import SimConfig, power_experiment, simulate_ber

BER_HEADER = ["snr_db", "design", "ber", "ci95", "trials", "bit_errors"]
POWER_HEADER = ["eta", "design", "avg_power_db", "draws", "infeasible"]


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _fmt(x):
    return repr(float(x))


def ber_csv(curves):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BER_HEADER)
    n_points = len(curves[0].points) if curves else 0
    for p in range(n_points):
        for c in curves:
            pt = c.points[p]
            w.writerow([_fmt(pt.snr_db), c.design, _fmt(pt.ber), _fmt(pt.ci95), pt.trials, pt.bit_errors])
    return buf.getvalue()


def power_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POWER_HEADER)
    for r in rows:
        w.writerow([_fmt(r.eta), r.design, _fmt(r.avg_power_db), r.draws, r.infeasible])
    return buf.getvalue()


def _emit(text, cfg, output):
    path = output or cfg.output
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    meta = {"config": cfg.to_dict(), "seed": cfg.seed, "git_describe": git_describe()}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}", file=sys.stderr)


def _load(args):
    cfg = SimConfig.from_json(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _powers(snr_sr, snr_rd):
    return 10.0 ** (snr_sr / 10.0), 10.0 ** (snr_rd / 10.0)


def cmd_design(args):
    rng = np.random.default_rng(args.seed)
    ch = TwoHopChannel.random(args.n_s, args.n_r, args.k, rng)
    p_s, p_r = _powers(args.snr_sr, args.snr_rd)
    if args.dfe:
        d = design_dfe_p1(ch, args.objective, p_s, p_r)
        out = {"design": d.base.to_json(), "stream_mse": d.mse.tolist(), "objective_value": d.objective_value,
               "allocation": d.allocation.to_json()}
    else:
        sol = design_p1(ch, args.objective, p_s, p_r)
        out = sol.to_json()
    print(json.dumps(out, indent=2))
    return 0


def cmd_ber(args):
    cfg = _load(args)
    _emit(ber_csv(simulate_ber(cfg)), cfg, args.output)
    return 0


def cmd_power(args):
    cfg = _load(args)
    _emit(power_csv(power_experiment(cfg)), cfg, args.output)
    return 0


def cmd_oracle(args):
    rng = np.random.default_rng(args.seed)
    ch = TwoHopChannel.random(args.n_s, args.n_r, args.k, rng)
    lam_sr = ch.svd_sr.eigenvalues[: args.k]
    lam_rd = ch.svd_rd.eigenvalues[: args.k]
    if args.qos:
        targets = tuple(args.qos)
        res = {"rc": solve_p2(ch, targets).total_power, "sa": solve_sa_p2(ch, targets).total_power,
               "rc_dfe": solve_dfe_p2(ch, targets).total_power}
        if args.k == 2:
            res["grid"] = p2_grid_oracle(ch, targets, resolution=args.resolution)
    else:
        p_s, p_r = _powers(args.snr_sr, args.snr_rd)
        spec = get_objective(args.objective)
        alloc = alternating_power_allocation(lam_sr, lam_rd, 1.0, p_s, p_r, spec, restarts=5, rng=rng)
        value = p1_value(spec, stream_mse(alloc.a, alloc.b, lam_sr, lam_rd, 1.0))
        grid = grid_oracle_p1(lam_sr, lam_rd, 1.0, p_s, p_r, spec, resolution=args.resolution)
        grid_value = p1_value(spec, stream_mse(grid.a, grid.b, lam_sr, lam_rd, 1.0))
        res = {"alternating": float(value), "grid": float(grid_value)}
    print(json.dumps(res, indent=2))
    return 0


def run_validation(instances, seed):
    """Invariant suite on random instances; returns ``[(name, passed, detail)]``."""
    from ..multihop import MultiHopChannel, multihop_design
    from ..multirelay import MultiRelayChannel, multirelay_design
    from ..unitary import gmd, mean_equalizing_rotation

    rng = np.random.default_rng(seed)
    worst = {"concave_offdiag": 0.0, "convex_spread": 0.0, "multihop_l2": 0.0, "multirelay_q1": 0.0,
             "mean_equalizing": 0.0, "gmd": 0.0}
    for _ in range(instances):
        ch = TwoHopChannel.random(3, 3, 2, rng)
        sol = design_p1(ch, "MutualInfo", 10.0, 10.0)
        gh = sol.design.g @ ch.h_rd @ sol.design.f @ ch.h_sr @ sol.design.u
        worst["concave_offdiag"] = max(worst["concave_offdiag"], float(np.max(np.abs(gh - np.diag(np.diag(gh))))))
        sol = design_p1(ch, "MaxMSE", 10.0, 10.0)
        d = np.real(np.diag(sol.mse))
        worst["convex_spread"] = max(worst["convex_spread"], float(np.ptp(d)))
        mh = multihop_design(MultiHopChannel.from_two_hop(ch, 10.0, 10.0), "MaxMSE")
        worst["multihop_l2"] = max(worst["multihop_l2"], float(np.max(np.abs(mh.nodes[1] - sol.design.f))))
        ref = design_p1(ch, "SumMSE", 10.0, 10.0)
        mr = multirelay_design(MultiRelayChannel((ch.h_sr,), (ch.h_rd,), 1.0, 1.0, 2), 10.0, 10.0)
        worst["multirelay_q1"] = max(worst["multirelay_q1"], float(np.max(np.abs(mr.design.f - ref.design.f))))
        lam = rng.uniform(0.01, 1.0, 4)
        worst["mean_equalizing"] = max(worst["mean_equalizing"], mean_equalizing_rotation(lam).residual)
        sig = rng.uniform(0.1, 5.0, 4)
        _, r, _ = gmd(sig)
        worst["gmd"] = max(worst["gmd"], float(np.max(np.abs(np.diag(r) - np.exp(np.mean(np.log(sig)))))))
    limits = {"concave_offdiag": 1e-9, "convex_spread": 1e-10, "multihop_l2": 0.0, "multirelay_q1": 1e-9,
              "mean_equalizing": 1e-12, "gmd": 1e-10}
    return [(name, worst[name] <= limits[name], f"worst {worst[name]:.3e} (limit {limits[name]:.0e})")
            for name in worst]


def cmd_validate(args):
    results = run_validation(args.instances, args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="afrelay", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def instance_args(sp):
        sp.add_argument("--n-s", type=int, default=3)
        sp.add_argument("--n-r", type=int, default=3)
        sp.add_argument("--k", type=int, default=2)
        sp.add_argument("--snr-sr", type=float, default=10.0, help="source-relay SNR in dB")
        sp.add_argument("--snr-rd", type=float, default=20.0, help="relay-destination SNR in dB")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("design", help="design one random instance and print it as JSON")
    instance_args(sp)
    sp.add_argument("--objective", choices=OBJECTIVE_NAMES, default="MaxMSE")
    sp.add_argument("--dfe", action="store_true", help="use the decision-feedback receiver")
    sp.set_defaults(func=cmd_design)

    for name, func, helptext in (("ber", cmd_ber, "run a BER sweep from a JSON config"),
                                 ("power", cmd_power, "run a QoS power sweep from a JSON config")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--output", default=None, help="CSV path (default: config output, else stdout)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("oracle", help="compare a design with its grid-search reference")
    instance_args(sp)
    sp.add_argument("--objective", choices=OBJECTIVE_NAMES, default="SumMSE")
    sp.add_argument("--resolution", type=int, default=200)
    sp.add_argument("--qos", type=float, nargs="+", help="per-stream MSE ceilings (power minimization)")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("validate", help="run the invariant suite")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RelayDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
