"""Command-line entry point ``blochfem``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..coupled import SchurSolveError, solve_standard, total_trace
from ..geometry import DomainSpec, TransformCoefficients, make_profile
from ..highorder import KINDS, solve_high_order
from ..mesh import mesh_for_width
from ..quasiperiodic import (CellAssembler, DtnOperator, IncidentField, WoodAnomalyError,
                             default_truncation, energy_balance, reflection_coefficients,
                             solve_cell)
from .config import EXAMPLES, load_config, parse_number, preset
from .export import write_csv, write_json
from .oracles import MUTATIONS, ORACLES, oracle_suite
from .study import StudyError, run_study


def _common(p: argparse.ArgumentParser, perturbation: bool) -> None:
    p.add_argument("--surface", default="f1", help="base surface: f1 or f2")
    if perturbation:
        p.add_argument("--perturbation", default="p1", help="perturbation: p1 or p2")
    p.add_argument("--k", type=parse_number, default=1.0, help="wavenumber, e.g. 1 or sqrt(10)")
    p.add_argument("--alpha", type=parse_number, default=0.3, help="incident quasi-momentum")
    p.add_argument("--h", type=float, default=0.08, help="mesh width")
    p.add_argument("--J", type=int, default=None, help="DtN truncation order")
    p.add_argument("--H", type=float, default=4.0)
    p.add_argument("--H0", type=float, default=3.9)


def cmd_periodic(args) -> int:
    prof = make_profile(args.surface)
    spec = DomainSpec(args.H, args.H0)
    spec.check(prof)
    mesh = mesh_for_width(prof, spec, args.h)
    inc = IncidentField(args.k, args.alpha)
    u = solve_cell(mesh, inc, J=args.J)
    J = args.J or default_truncation(args.k, mesh.period)
    dtn = DtnOperator(args.k, args.alpha, mesh.period, J)
    R = reflection_coefficients(u, dtn, inc)
    print(f"mesh n1={mesh.n1} n2={mesh.n2} M={mesh.M} h={mesh.h:.4f}")
    print("order  beta_j              R_j")
    for j, b, p in zip(dtn.orders, dtn.betas, dtn.propagating()):
        if p:
            r = R[int(j)]
            print(f"{int(j):5d}  {b.real:.6f}  {r.real:+.6e}{r.imag:+.6e}i")
    print(f"energy defect {energy_balance(R, dtn):.3e}")
    return 0


def cmd_perturbed(args) -> int:
    prof = make_profile(args.surface, args.perturbation)
    spec = DomainSpec(args.H, args.H0)
    spec.check(prof)
    mesh = mesh_for_width(prof, spec, args.h)
    inc = IncidentField(args.k, args.alpha)
    asm = CellAssembler(mesh, args.k, None, args.J)
    u_h = solve_cell(mesh, inc, assembler=asm)
    coeffs = TransformCoefficients(prof, spec)
    if args.method == "standard":
        sol, _ = solve_standard(mesh, args.k, coeffs, u_h, args.N, assembler=asm,
                                memory_mb=args.memory_mb)
    else:
        sol, _ = solve_high_order(mesh, args.k, coeffs, u_h, args.N, kind=args.reparam,
                                  assembler=asm, memory_mb=args.memory_mb)
    tr = total_trace(u_h, sol.field, mesh)
    info = sol.info
    print(f"mesh M={mesh.M} |D|={info['D']} N={args.N} method={info['method']} "
          f"residual={sol.residual:.2e} time={info.get('time', 0.0):.1f}s")
    if args.output:
        rows = np.column_stack([tr.x, np.full_like(tr.x, mesh.H), tr.values.real,
                                tr.values.imag, np.abs(tr.values)])
        np.savetxt(args.output, rows, delimiter=",", header="x1,x2,re,im,abs", comments="")
        print(f"trace written to {args.output}")
    return 0


def cmd_study(args) -> int:
    if args.config:
        config = load_config(args.config)
    else:
        config = preset(args.example, args.method, args.reparam)
    table = run_study(config, progress=lambda s: print(s, file=sys.stderr))
    print(table.format())
    orders = table.orders()
    print("orders in h (per row):", _fmt(orders["h"]))
    print("orders in N (per column):", _fmt(orders["N"]))
    csv_path = args.csv or config.csv
    json_path = args.json or config.json
    if csv_path:
        write_csv(table, csv_path)
    if json_path:
        write_json(table, json_path, config)
    return 0


def _fmt(values) -> str:
    return " ".join("-" if v is None else f"{v:.2f}" for v in values)


def cmd_oracles(args) -> int:
    results = oracle_suite(args.mutation, args.only)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blochfem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("periodic", help="quasi-periodic cell solve with reflection report")
    _common(p, perturbation=False)
    p.set_defaults(func=cmd_periodic)

    p = sub.add_parser("perturbed", help="coupled solve for a locally perturbed surface")
    _common(p, perturbation=True)
    p.add_argument("--method", choices=["standard", "high-order"], default="standard")
    p.add_argument("--reparam", choices=KINDS, default="g1")
    p.add_argument("--N", type=int, default=20, help="Brillouin-zone nodes")
    p.add_argument("--memory-mb", type=float, default=2700.0, help="factor cache budget")
    p.add_argument("--output", help="CSV file for the total-field trace on x2 = H")
    p.set_defaults(func=cmd_perturbed)

    p = sub.add_parser("study", help="convergence study from a config file or preset")
    p.add_argument("--config", help="YAML or JSON study config")
    p.add_argument("--example", type=int, choices=sorted(EXAMPLES), default=1)
    p.add_argument("--method", choices=["standard", "high-order"], default="standard")
    p.add_argument("--reparam", choices=KINDS, default="g1")
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("oracles", help="run the analytic oracle suite")
    p.add_argument("--mutation", choices=MUTATIONS, default=None)
    p.add_argument("--only", nargs="+", choices=list(ORACLES), default=None)
    p.set_defaults(func=cmd_oracles)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (StudyError, SchurSolveError, WoodAnomalyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
