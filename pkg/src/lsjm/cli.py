"""Command-line interface: ``lsjm fit-lsm | fit-lsjm | cross-validate``.

Exit codes: 0 success, 1 input error (nothing written), 2 a fit hit
``--max-iters`` before converging (outputs are still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import LsjmError
from .io import (
    ModelArtifact,
    _rows_to_csv,
    arrow_rows,
    dumps_artifact,
    ellipse_params,
    ellipse_rows,
    fingerprint,
    position_rows,
    read_multiplex,
)
from .joint import FusedPosterior, LsjmFit, align, fit_lsjm, rotate_state
from .lsm import FitConfig, PriorConfig, fit_lsm
from .network import density_report
from .parallel import worker_count
from .prediction import Estimator, Mode, Source, in_sample_roc, make_plan, run_cv
from .svg import scatter_svg

log = logging.getLogger("lsjm")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


@dataclass
class RunConfig:
    subcommand: str
    paths: list[str]
    prior: PriorConfig
    fit: FitConfig
    out: str
    baseline: bool = False
    mode: str = "dyads"
    estimator: str = "lsjm"
    folds: int = 10
    notes: list[str] = field(default_factory=list)


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--prior-xi", type=float, default=0.0, help="prior mean of alpha (default 0)")
    common.add_argument("--prior-psi2", type=float, default=2.0, help="prior variance of alpha (default 2)")
    common.add_argument("--sigma2", type=float, default=1.0, help="prior variance of latent positions (default 1)")
    common.add_argument("--dim", type=int, default=2, help="latent dimension (default 2)")
    common.add_argument("--tol", type=float, default=1e-2, help="stopping tolerance on the objective (default 1e-2)")
    common.add_argument("--min-iters", type=int, default=10)
    common.add_argument("--max-iters", type=int, default=500)
    common.add_argument("--restarts", type=int, default=10)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lsjm", description="Variational latent space models for multiplex networks.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("fit-lsm", parents=[common], help="fit a single-view latent space model")
    p.add_argument("paths", nargs=1, metavar="EDGES")
    p = sub.add_parser("fit-lsjm", parents=[common], help="fit the joint model to one file per view")
    p.add_argument("paths", nargs="+", metavar="EDGES")
    p.add_argument("--baseline", action="store_true", help="also fit and align single-view models")
    p = sub.add_parser("cross-validate", parents=[common], help="k-fold link prediction")
    p.add_argument("paths", nargs="+", metavar="EDGES")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="dyads")
    p.add_argument("--estimator", choices=[e.value for e in Estimator], default="lsjm")
    p.add_argument("--folds", type=int, default=10)
    return parser


def run_config(args) -> RunConfig:
    notes = []
    min_iters = args.min_iters
    if min_iters > args.max_iters:
        notes.append(f"min-iters {min_iters} lowered to max-iters {args.max_iters}")
        min_iters = max(args.max_iters, 0)
    prior = PriorConfig(xi=args.prior_xi, psi2=args.prior_psi2, sigma2=args.sigma2, dim=args.dim)
    fit = FitConfig(tol=args.tol, min_iters=min_iters, max_iters=args.max_iters,
                    restarts=args.restarts, seed=args.seed)
    return RunConfig(
        subcommand=args.subcommand, paths=list(args.paths), prior=prior, fit=fit, out=args.out,
        baseline=getattr(args, "baseline", False), mode=getattr(args, "mode", "dyads"),
        estimator=getattr(args, "estimator", "lsjm"), folds=getattr(args, "folds", 10), notes=notes,
    )


def _labels(paths) -> list[str]:
    stems = [Path(p).stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    return [f"{i + 1}_{s}" for i, s in enumerate(stems)]


def manifest(cfg: RunConfig, hashes: dict) -> dict:
    return {
        "tool": "lsjm",
        "version": tool_version(),
        "subcommand": cfg.subcommand,
        "inputs": [{"path": p, "sha256": hashes[Path(p).name]} for p in cfg.paths],
        "prior": asdict(cfg.prior),
        "fit": asdict(cfg.fit),
        "baseline": cfg.baseline,
        "mode": cfg.mode if cfg.subcommand == "cross-validate" else None,
        "estimator": cfg.estimator if cfg.subcommand == "cross-validate" else None,
        "folds": cfg.folds if cfg.subcommand == "cross-validate" else None,
        "notes": cfg.notes,
    }


def _json(obj) -> str:
    import json

    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _fit_summary(fit: LsjmFit, labels, views) -> dict:
    rocs = in_sample_roc(fit, views, Source.PER_VIEW)
    return {
        "views": [
            {
                "label": lab,
                "alpha_mean": s.xi_tilde,
                "alpha_var": s.psi2_tilde,
                "cov": np.asarray(s.cov).tolist(),
                "in_sample_auc": r.auc,
                **{k: v for k, v in density_report(v).items() if k != "n"},
            }
            for lab, s, r, v in zip(labels, fit.view_states, rocs, views)
        ],
        "fused_cov": fit.fused.cov_bar.tolist(),
        "converged": fit.report.converged,
        "iterations": fit.report.iterations,
        "best_restart": fit.report.best_restart,
        "restarts": fit.report.restarts,
        "warnings": fit.report.warnings,
    }, rocs


def _plot_outputs(files: dict, fit: LsjmFit, nodes, labels) -> None:
    files["positions.csv"] = _rows_to_csv(["node", "view", "x", "y", "source"], position_rows(fit, nodes, labels))
    rows = ellipse_rows(fit, nodes, labels)
    if rows is None:
        log.warning("latent dimension is not 2: writing positions only, no ellipses or plots")
        return
    files["ellipses.csv"] = _rows_to_csv(["node", "view", "x", "y", "semi_major", "semi_minor", "angle"], rows)
    for lab, s in zip(labels, fit.view_states):
        ell = [ellipse_params(s.cov)] * len(nodes)
        files[f"positions_{lab}.svg"] = scatter_svg(s.positions, nodes, ell, title=lab)
    if len(fit.view_states) > 1:
        ell = [ellipse_params(fit.fused.cov_bar)] * len(nodes)
        files["positions_fused.svg"] = scatter_svg(fit.fused.positions_bar, nodes, ell, title="fused")
        arrows = [[float(v) for v in r[1:]] for r in arrow_rows(fit, nodes)]
        files["arrows.csv"] = _rows_to_csv(["node", "x0", "y0", "x1", "y1"], arrow_rows(fit, nodes))
        files["arrows.svg"] = scatter_svg(fit.fused.positions_bar, nodes, arrows=arrows, title="first to last view")


def _trace_csv(report) -> str:
    rows = [(0, repr(float(report.initial_objective)))]
    rows += [(t + 1, repr(float(v))) for t, v in enumerate(report.objective_trace)]
    return _rows_to_csv(["iteration", "objective"], rows)


def _roc_csv(points) -> str:
    return _rows_to_csv(["fpr", "tpr"], [(repr(a), repr(b)) for a, b in points])


def do_fit(cfg: RunConfig, multiplex, hashes, workers) -> tuple[dict, int]:
    labels = [v.view_label for v in multiplex.views]
    nodes = list(multiplex.nodes.labels)
    files: dict[str, str] = {}
    if cfg.subcommand == "fit-lsm":
        state, report = fit_lsm(multiplex.views[0], cfg.prior, cfg.fit, workers=workers)
        fit = LsjmFit(FusedPosterior(state.positions.copy(), state.cov.copy()), [state], [cfg.prior], report)
        kind = "lsm"
    else:
        fit = fit_lsjm(multiplex, [cfg.prior], cfg.fit, workers=workers)
        kind = "lsjm"
    converged = fit.report.converged
    summary, rocs = _fit_summary(fit, labels, multiplex.views)
    art = ModelArtifact.from_fit(kind, multiplex.nodes, labels, fit, hashes)
    files["model.json"] = dumps_artifact(art)
    files["trace.csv"] = _trace_csv(fit.report)
    for lab, r in zip(labels, rocs):
        files[f"roc_{lab}.csv"] = _roc_csv(r.points)
    _plot_outputs(files, fit, nodes, labels)

    if cfg.baseline:
        summary["baseline"] = []
        rows = []
        for k, v in enumerate(multiplex.views):
            state, report = fit_lsm(v, cfg.prior, cfg.fit, workers=workers)
            r = align(fit.fused.positions_bar, state.positions)
            state = rotate_state(state, r)
            converged = converged and report.converged
            summary["baseline"].append({
                "label": labels[k], "alpha_mean": state.xi_tilde, "alpha_var": state.psi2_tilde,
                "converged": report.converged, "iterations": report.iterations,
            })
            rows += [(n_, labels[k], repr(float(z[0])), repr(float(z[1]) if z.size > 1 else 0.0), "baseline")
                     for n_, z in zip(nodes, state.positions)]
        files["baseline_positions.csv"] = _rows_to_csv(["node", "view", "x", "y", "source"], rows)
    files["report.json"] = _json(summary)
    return files, EXIT_OK if converged else EXIT_NOT_CONVERGED


def do_cv(cfg: RunConfig, multiplex, workers) -> dict:
    plan = make_plan(multiplex, cfg.mode, cfg.folds, cfg.fit.seed)
    res = run_cv(multiplex, [cfg.prior], cfg.fit, plan, cfg.estimator, workers=workers)
    labels = [v.view_label for v in multiplex.views]
    files = {}
    report = {
        "mode": plan.mode.value,
        "estimator": res.estimator.value,
        "folds": plan.folds,
        "failed_folds": [{"fold": f.fold, "error": f.error} for f in res.folds if not f.ok],
        "views": [],
    }
    for k, lab in enumerate(labels):
        c = res.pooled_confusion[k]
        roc = res.pooled_roc[k]
        report["views"].append({
            "label": lab,
            "pooled_auc": roc.auc if roc else None,
            "misclassification": c.misclassification if c.total else None,
            "confusion": asdict(c),
            "fold_auc": res.fold_auc[k],
            "fold_tau": [next((r.tau for r in f.views if r.view == k), None) for f in res.folds],
        })
        if roc is not None:
            files[f"roc_cv_{lab}.csv"] = _roc_csv(roc.points)
    files["cv_report.json"] = _json(report)
    return files


def write_outputs(out: Path, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(files[name])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = run_config(args)
        if cfg.subcommand == "cross-validate" and Mode(cfg.mode) is Mode.NODES and cfg.estimator != "lsjm":
            raise LsjmError("node-mode cross-validation requires --estimator lsjm")
        multiplex = read_multiplex(cfg.paths, _labels(cfg.paths))
        hashes = fingerprint(cfg.paths)
        workers = worker_count()
        if cfg.subcommand == "cross-validate":
            files, code = do_cv(cfg, multiplex, workers), EXIT_OK
        else:
            files, code = do_fit(cfg, multiplex, hashes, workers)
    except (LsjmError, ValueError) as exc:
        print(f"lsjm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for note in cfg.notes:
        log.warning(note)
    files["manifest.json"] = _json(manifest(cfg, hashes))
    try:
        write_outputs(Path(cfg.out), files)
    except OSError as exc:
        print(f"lsjm: error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if code == EXIT_NOT_CONVERGED:
        print("lsjm: warning: best restart did not converge within --max-iters", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
