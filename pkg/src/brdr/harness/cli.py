"""Command line entry point (``brdr`` or ``python -m brdr``)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import diagnostics as diag
from .. import nets
from ..errors import BRDRError
from ..problems import NetContext, residuals
from ..problems import oracles
from .config import parse_config
from .runner import Experiment, run_experiment


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    res = run_experiment(cfg, out_dir=args.out, seed=args.seed)
    final = res.final
    summary = {"out": str(res.out_dir), "status": res.status,
               "iter": final.iter if final else 0,
               "rel_l2": final.rel_l2 if final else None}
    print(json.dumps(summary))
    return 0


def _cmd_check_grad(args) -> int:
    arch = nets.ArchDescriptor.parse(args.arch)
    rng = np.random.default_rng(args.seed)
    params = nets.init_params(arch, rng)
    dim = arch.coord_dim
    x = rng.uniform(-1.0, 1.0, (args.points, dim))
    branch = rng.standard_normal((args.points, arch.branch_input_dim)) if arch.kind == "mdeeponet" else None
    layout = ad.JetLayout.for_order(dim, 2, "full")

    def loss(p):
        # touches value, gradient and Hessian channels of the network jet
        j = nets.jet_forward(p, arch, x, layout, branch=branch)
        r = j[0, :, 0] * j[layout.channels - 1, :, 0] + j[1, :, 0] * j[1, :, 0]
        return ad.vsum(r * r)

    rep = ad.finite_difference_check(params, arch, loss, h=args.h)
    ok = rep.max_rel_err_params < args.tol and rep.max_rel_err_inputs < args.tol
    print(json.dumps({"param_max_rel_err": rep.max_rel_err_params,
                      "input_max_rel_err": rep.max_rel_err_inputs, "ok": ok}))
    return 0 if ok else 1


def _cmd_oracle(args) -> int:
    out = Path(args.out)
    oracles.generate_reference(args.name, out, args.nx, args.nt)
    print(json.dumps({"oracle": args.name, "out": str(out)}))
    return 0


def _cmd_irdr_sim(args) -> int:
    lam = np.array(args.lam, dtype=float)
    rows = []
    for b in args.beta_c:
        if args.law == "exponential":
            c = diag.irdr_exponential(lam, b, args.steps, r0=args.r0)
            rows += [(b, lv, cv) for lv, cv in zip(lam, c)]
        else:
            t = np.arange(1, args.steps + 1)
            r = diag.two_phase_residual(t, lam=lam[0], switch=args.switch, r0=args.r0)
            c = diag.irdr_stream(r, b)
            rows += [(b, int(ti), cv) for ti, cv in zip(t[::args.every], c[::args.every])]
    head = "beta_c,lambda,irdr" if args.law == "exponential" else "beta_c,t,irdr"
    lines = [head] + [f"{b:.17g},{x:.17g},{c:.17g}" for b, x, c in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_ntk(args) -> int:
    cfg = parse_config(args.config)
    exp = Experiment(cfg, seed=args.seed)
    names = exp.names
    total = sum(exp.counts.values())
    cap = args.cap
    take = {}
    for k in names:
        n = exp.counts[k]
        m = n if total <= cap else max(1, (n * cap) // total)
        take[k] = np.unique(np.linspace(0, n - 1, m).round().astype(np.int64))
    blocks, start = {}, 0
    for k in names:
        blocks[k] = (start, start + take[k].size)
        start += take[k].size

    def residual_fn():
        ctx = NetContext(exp.params, exp.arch, exp.inputs)
        res = residuals(exp.problem, ctx, exp.points, idx=take)
        return ad.concat([res[k] for k in names])

    ntk = diag.ntk_matrix(residual_fn, exp.params.size, cap=cap, blocks=blocks)
    out = Path(args.out)
    diag.write_eigenvalues(out, ntk.evals)
    print(json.dumps({"points": int(ntk.k.shape[0]), "min_eigenvalue": float(ntk.evals.min()),
                      "max_eigenvalue": float(ntk.evals.max()),
                      "reconstruction_error": ntk.reconstruction_error(), "out": str(out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brdr", description="Adaptive-weight PINN / DeepONet workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check-grad", help="finite-difference check of an architecture")
    p.add_argument("--arch", required=True, help="e.g. mfcn,in=2,width=32,layers=3")
    p.add_argument("--points", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=_cmd_check_grad)

    p = sub.add_parser("oracle", help="write a reference field CSV (x, t, u)")
    p.add_argument("name", choices=["burgers", "allencahn"])
    p.add_argument("--out", required=True)
    p.add_argument("--nx", type=int, default=101)
    p.add_argument("--nt", type=int, default=101)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("irdr-sim", help="irdr of synthetic residual decay laws")
    p.add_argument("--beta-c", type=float, nargs="+", default=[0.99, 0.999])
    p.add_argument("--lambda", dest="lam", type=float, nargs="+",
                   default=list(np.logspace(-5, -2, 31)))
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--law", choices=["exponential", "two-phase"], default="exponential")
    p.add_argument("--switch", type=int, default=100000, help="two-phase switch iteration")
    p.add_argument("--every", type=int, default=100, help="two-phase output stride")
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_irdr_sim)

    p = sub.add_parser("ntk", help="NTK eigenvalues of the initial network on a point subset")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cap", type=int, default=diag.NTK_CAP)
    p.add_argument("--out", default="ntk_eigenvalues.csv")
    p.set_defaults(func=_cmd_ntk)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BRDRError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
