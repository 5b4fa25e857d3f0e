"""Command-line front end: ``abreu <command> --config <path> --out <dir>``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from abreu.config import ConfigError, RunConfig, bundled_config
from abreu.errors import AbreuError, Status
from abreu.grid import dump_field, load_field
from abreu.models import verify_assumptions
from abreu.oracle import minimize_constrained, refined_convexity_failures
from abreu.system import HomotopyConfig, boundary_diagnostics, epsilon_continuation, solve_abreu

log = logging.getLogger("abreu")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_SELFTEST = 0, 2, 3, 4

CONTINUATION_COLUMNS = ("eps", "status", "gap_oracle", "gap_prev", "eps_unu2", "rho_omega0", "pen_outer", "min_det", "max_det")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_summary(path: Path, items: dict) -> None:
    write_table(path, ("key", "value"), sorted(items.items()))


def _resolve_config(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    return bundled_config(arg)


# -- commands -----------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    d = cfg.domain()
    prob = cfg.problem(d)
    rep = solve_abreu(prob, cfg.homotopy(), check_assumptions=True)
    rep.write_csv(out / "report.csv")
    summary = {"status": rep.status.value, "defect": rep.defect, **rep.diagnostics}
    if rep.hint:
        summary["hint"] = rep.hint
    if cfg["homotopy.multistart"] and rep.status is Status.CONVERGED:
        summary.update(_multistart(cfg, prob, rep))
    write_summary(out / "summary.csv", summary)
    if cfg["output.fields"] and rep.u is not None:
        dump_field(out / "u.csv", rep.u, d)
        dump_field(out / "w.csv", rep.w, d)
    return EXIT_OK if rep.status is Status.CONVERGED else EXIT_NOT_CONVERGED


def _multistart(cfg: RunConfig, prob, ref) -> dict:
    """Re-solve at ``t = 1`` from a perturbed ``w`` and from the constant-weight solution."""
    d = prob.domain
    at_one = HomotopyConfig(**{**cfg.homotopy().__dict__, "t_schedule": (1.0,)})
    rng = np.random.default_rng(cfg["run.seed"])
    x1, x2 = d.grid.coords
    a, b, c = rng.uniform(1.0, 4.0, 3)
    pert = ref.w * (1 + 0.05 * np.sin(a * x1 + c) * np.cos(b * x2))
    pert[d.boundary] = ref.w[d.boundary]
    other = cfg.override(**{"model.gamma": "1.0"}).problem(d)
    alt = solve_abreu(other, cfg.homotopy())
    out = {}
    for name, kw in (("perturbed", {"w0": pert}), ("warm", {"w0": alt.w, "u0": alt.u})):
        r = solve_abreu(prob, at_one, **kw)
        ins = d.inside
        out[f"multistart_{name}_status"] = r.status.value
        out[f"multistart_{name}_gap_u"] = float(np.max(np.abs(r.u[ins] - ref.u[ins])))
        out[f"multistart_{name}_gap_w"] = float(np.max(np.abs(r.w[ins] - ref.w[ins])))
    return out


def _continuation(cfg: RunConfig, out: Path, u_star=None) -> int:
    d = cfg.domain()
    prob = cfg.problem(d)
    if not prob.continuation:
        raise ConfigError("problem.mode must be 'continuation' for this command")
    reps = epsilon_continuation(
        prob, cfg["problem.eps_list"], cfg.homotopy(),
        halt_on_failure=cfg["homotopy.halt_on_failure"], cold_start=cfg["homotopy.cold_start"],
    )
    m = d.in_omega0
    rows = []
    for k, rep in enumerate(reps):
        rep.write_csv(out / f"report_eps{k}.csv")
        dg = rep.diagnostics
        gap = float(np.max(np.abs(rep.u[m] - u_star[m]))) if u_star is not None and rep.u is not None else math.nan
        rows.append((dg.get("eps", math.nan), rep.status.value, gap, dg.get("gap_prev", math.nan),
                     dg.get("eps_unu2", math.nan), dg.get("rho_omega0", math.nan), dg.get("pen_outer", math.nan),
                     dg.get("min_det", math.nan), dg.get("max_det", math.nan)))
        if cfg["output.fields"] and rep.u is not None:
            dump_field(out / f"u_eps{k}.csv", rep.u, d)
    write_table(out / "continuation.csv", CONTINUATION_COLUMNS, rows)
    ok = len(reps) == len(cfg["problem.eps_list"]) and all(r.status is Status.CONVERGED for r in reps)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_continue(cfg: RunConfig, out: Path) -> int:
    return _continuation(cfg, out)


def _oracle(cfg: RunConfig, out: Path):
    d = cfg.domain()
    res = minimize_constrained(cfg.model(d), cfg.phi(d), d, cfg.oracle())
    res.write_csv(out / "oracle.csv")
    write_summary(out / "oracle_summary.csv", {
        "status": res.status.value, "objective": res.objective, "violation": res.violation, "pg_norm": res.pg_norm,
        "iterations": len(res.history), "refined_failure_fraction": refined_convexity_failures(res.u, d),
    })
    if cfg["output.fields"]:
        dump_field(out / "u_star.csv", res.u, d)
    return res


def cmd_oracle(cfg: RunConfig, out: Path) -> int:
    res = _oracle(cfg, out)
    return EXIT_OK if res.status is Status.CONVERGED else EXIT_NOT_CONVERGED


def cmd_compare(cfg: RunConfig, out: Path) -> int:
    res = _oracle(cfg, out)
    code = _continuation(cfg, out, u_star=res.u)
    if res.status is not Status.CONVERGED:
        code = EXIT_NOT_CONVERGED
    return code


def cmd_diagnose(cfg: RunConfig, out: Path, field: str | None) -> int:
    d = cfg.domain()
    prob = cfg.problem(d)
    items = {}
    rep = verify_assumptions(prob.model, d.omega0)
    for name, c in rep.checks.items():
        items[f"{name}_passed"] = c.passed
        items[f"{name}_worst"] = c.worst
    if field is not None:
        u, _, axes = load_field(field)
        if u.shape != d.grid.shape or not np.allclose(axes[0], d.grid.axes[0]) or not np.allclose(axes[1], d.grid.axes[1]):
            raise ConfigError(f"field {field} does not match the configured grid")
    else:
        u = prob.phi
    items.update(boundary_diagnostics(u, prob))
    write_summary(out / "diagnose.csv", items)
    return EXIT_OK


def cmd_selftest(out: Path) -> int:
    from abreu import selftest

    results = selftest.run(out / "selftest.csv")
    failed = [n for n, ok, _ in results if not ok]
    for n, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {n}{(' ' + detail) if detail else ''}")
    return EXIT_SELFTEST if failed else EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abreu", description="Second boundary value problems of Abreu type on 2D grids.")
    p.add_argument("command", choices=["solve", "continue", "oracle", "compare", "diagnose", "selftest"])
    p.add_argument("--config", help="config file or name of a bundled config")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--grid", type=int, help="override grid.n")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--field", help="field dump to diagnose")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "selftest":
        return cmd_selftest(out)
    try:
        if not args.config:
            raise ConfigError("--config is required")
        cfg = RunConfig.load(_resolve_config(args.config)).override(**{"grid.n": args.grid, "run.seed": args.seed})
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out, args.field)
        return {"solve": cmd_solve, "continue": cmd_continue, "oracle": cmd_oracle, "compare": cmd_compare}[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AbreuError as exc:
        # problem hypotheses and mask rules are configuration-level failures
        if isinstance(exc, ValueError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
