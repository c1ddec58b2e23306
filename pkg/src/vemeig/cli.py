"""vemeig command line: mesh, solve, study, sweep, source."""

import argparse
import csv
import json
import sys
from pathlib import Path


from .assembly import OperatorCache, assemble, cell_dofs, local_mass, local_stiffness, problem_from_dict
from .eigsolve import solve_gevp
from .harness import (format_value, source_convergence, source_rows_to_csv,
                      study_config_from_dict, run_study, sweep_stabilization)
from .mesh import DOMAINS, FAMILIES, MeshFamilySpec, generate_mesh, read_mesh, validate_mesh, write_mesh


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SystemExit(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_mesh(args):
    mesh = generate_mesh(MeshFamilySpec(args.family, args.n, args.domain, args.seed))
    q = validate_mesh(mesh)
    write_mesh(mesh, args.out)
    print(f"{args.family} n={args.n}: {mesh.n_vertices} vertices, {mesh.n_cells} cells, "
          f"gamma={q.gamma:.3g}, non-star cells={q.n_non_star}")
    return 0


def cmd_solve(args):
    mesh = read_mesh(args.mesh)
    problem = problem_from_dict(_load_json(args.config) if args.config else {})
    cache = OperatorCache()
    system = assemble(mesh, problem, cache)
    if args.dump_element is not None:
        c = args.dump_element
        if not 0 <= c < mesh.n_cells:
            raise SystemExit(f"element {c} out of range (mesh has {mesh.n_cells} cells)")
        ops = cache.get(mesh.cell_vertices(c), problem.k, mesh.cell_edge_orientation[c])
        K = problem.tensor(mesh.regions[c])
        dump = {name: getattr(ops, name).tolist() for name in
                ("G", "B", "D", "H", "pi_nabla_star", "pi0_star")}
        dump["dofs"] = cell_dofs(mesh, problem.k, c).tolist()
        dump["K_local"] = local_stiffness(ops, K, problem.stabilization).tolist()
        dump["M_local"] = local_mass(ops, problem.mass_mode, problem.stabilization).tolist()
        print(json.dumps(dump))
    spec = solve_gevp(system.A_free, system.M_free, min(args.nev, system.n_free),
                      spd_mass=problem.mass_mode == "stabilized")
    lines = ["index,lambda_h,zero_mode"]
    lines += [f"{i + 1},{format_value(lam)},{int(z)}" for i, (lam, z) in
              enumerate(zip(spec.eigenvalues, spec.zero_modes))]
    _emit("\n".join(lines) + "\n", args.out)
    if args.out:
        print(f"{len(spec.eigenvalues)} eigenpairs ({spec.meta['mode']}, filtered {spec.n_filtered})"
              f" -> {args.out}")
    return 0


def cmd_study(args):
    config = study_config_from_dict(_load_json(args.config))
    report = run_study(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "study.csv")
    with open(out / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "eig_index", "slope"])
        for (k, i), s in sorted(report.slopes().items()):
            w.writerow([k, i, format_value(s)])
    print(f"{len(report.rows)} rows, {report.failures} failed solves, reference: "
          f"{report.reference.provenance} -> {out}")
    return 0 if report.failures == 0 else 1


def cmd_sweep(args):
    config = study_config_from_dict(_load_json(args.config))
    mults = [float(m) for m in args.multipliers.split(",")]
    report = sweep_stabilization(config, mults, n=args.n, nev=args.nev)
    _emit(report.to_csv(), args.out)
    return 0 if not any(report.failed) else 1


def cmd_source(args):
    config = study_config_from_dict(_load_json(args.config))
    try:
        rows = source_convergence(config)
    except Exception as exc:  # report and fail
        print(f"source solve failed: {exc}", file=sys.stderr)
        return 1
    _emit(source_rows_to_csv(rows), args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="vemeig", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="generate a mesh and write it as JSON")
    m.add_argument("--family", choices=FAMILIES, default="square")
    m.add_argument("--n", type=int, default=8, help="resolution, nominal h = 1/n")
    m.add_argument("--domain", choices=DOMAINS, default="unit-square")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)

    s = sub.add_parser("solve", help="smallest eigenpairs on a mesh file")
    s.add_argument("--mesh", required=True)
    s.add_argument("--config", help="JSON problem config (k, bc, mass_mode, stab, ...)")
    s.add_argument("--nev", type=int, default=6)
    s.add_argument("--out")
    s.add_argument("--dump-element", type=int, metavar="I",
                   help="print G, B, D, H, projectors and local matrices of cell I as JSON")
    s.set_defaults(func=cmd_solve)

    st = sub.add_parser("study", help="convergence study, writes study.csv and slopes.csv")
    st.add_argument("--config", required=True)
    st.add_argument("--out", required=True, help="output directory")
    st.set_defaults(func=cmd_study)

    sw = sub.add_parser("sweep", help="mass-stabilization multiplier sweep")
    sw.add_argument("--config", required=True)
    sw.add_argument("--multipliers", required=True, help="comma separated, e.g. 1e-2,1,1e2")
    sw.add_argument("--n", type=int, help="resolution (default: finest in config)")
    sw.add_argument("--nev", type=int, default=4)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    so = sub.add_parser("source", help="source-problem H1-surrogate convergence")
    so.add_argument("--config", required=True)
    so.add_argument("--out")
    so.set_defaults(func=cmd_source)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"vemeig: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
