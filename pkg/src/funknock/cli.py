"""Experiment orchestration and the command-line entry point.

Composes the pipeline (generate or load curves, optional pre-smoothing,
functional PCA, knockoff construction, penalized regression, knockoff
filtering) over replicate loops, aggregates FDR/power metrics, and emits
plot-ready CSV reports.
"""

import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._streams import derive_seed
from .basis import CurvePanel, evaluate, make_basis, project_panel, \
    read_curves_csv, write_curves_csv
from .filter import evaluate_metrics, fggm_edges, fggm_global_thresholds, \
    knockoff_threshold, select, stats_from_fit
from .fpca import fit_fpca
from .grouplasso import GroupDesign, tune_lambda
from .knockoff import NumericalError, estimate_theta_c, sample_knockoffs, \
    solve_R, write_theta_csv
from .simgen import SimConfig, corrupt_partial, default_grid, gen_fflr, \
    gen_fggm, gen_sflr, write_truth_csv
from .smoothing import smooth_curves

logger = logging.getLogger(__name__)

VARIANT_BY_METHOD = {"KF1": "E1", "KF2": "E2", "KF3": "E3"}

MODELS = ("sflr", "fflr", "fggm")
METHODS = ("KF1", "KF2", "KF3", "GL")

# information-criterion scale when --hbar is not given; the scalar response
# tolerates a stiffer penalty than the multi-response regressions
HBAR_BY_MODEL = {"sflr": 1.0, "fflr": 0.3, "fggm": 0.1}

SUMMARY_COLUMNS = ("model", "method", "p", "n", "q", "delta", "rule",
                   "fdr", "power", "n_replicates", "seconds")
DETAIL_COLUMNS = ("model", "method", "replicate", "fdp", "power",
                  "n_selected", "threshold", "error")


class PipelineError(RuntimeError):
    """No replicate of a run produced a usable result."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: a data scenario plus a selection method.

    method KF1/KF2/KF3 maps to the equicorrelated, per-variable and
    per-component knockoff constructions; GL is the plain group-lasso
    baseline without knockoffs.
    """

    model: str
    method: str = "KF1"
    p: int = 50
    n: int = 100
    q: float = 0.2
    delta: int = 0
    rule: str = "or"
    replicates: int = 1
    seed: int = 0
    threads: int = 1
    gamma: float = None
    hbar: float = None
    fraction: float = 0.9
    partial: bool = False
    L: int = 51
    noise_sd: float = 0.5
    rho: float = 0.5
    support_size: int = 10
    grid_size: int = 101

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.hbar is None:
            # regression-scale constant; each model needs its own level
            # for the information criterion to keep comparable power
            object.__setattr__(self, "hbar", HBAR_BY_MODEL[self.model])
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        if self.rule not in ("and", "or"):
            raise ValueError("rule must be 'and' or 'or'")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


def _sim_config(spec, rep_seed):
    return SimConfig(model=spec.model, n=spec.n, p=spec.p, rho=spec.rho,
                     support_size=spec.support_size,
                     grid_size=spec.grid_size, noise_sd=spec.noise_sd,
                     seed=rep_seed)


def _generate(spec, rep_seed):
    config = _sim_config(spec, rep_seed)
    if spec.model == "sflr":
        return gen_sflr(config)
    if spec.model == "fflr":
        return gen_fflr(config)
    return gen_fggm(config)


def estimation_basis():
    """Cubic splines with 3 interior knots: the 7-function fitting system."""
    return make_basis("bspline", k_interior=3, degree=3)


def _estimation_panel(spec, data, basis):
    """Project the (possibly corrupted and re-smoothed) curves onto basis."""
    if spec.partial:
        t_pts, noisy = corrupt_partial(data.panel, spec.L, spec.noise_sd,
                                       seed=data.config.seed)
        grid = default_grid(spec.grid_size)
        values = smooth_curves(t_pts, noisy, eval_grid=grid)
    else:
        grid, values = data.t_grid, data.values
    coords = project_panel(grid, values, basis)
    return CurvePanel.from_coords(coords, basis)


def _response_matrix(spec, data, basis):
    """Regression target: the scalar response, or response-curve scores."""
    if spec.model == "sflr":
        return data.response[:, None]
    coords = project_panel(data.t_grid, data.response_values[:, None, :], basis)
    resp_fpca = fit_fpca(CurvePanel.from_coords(coords, basis), spec.fraction)
    d_resp = int(resp_fpca.truncation[0])
    return resp_fpca.scores[:, 0, :d_resp]


def _score_blocks(fpca, knock, nodes):
    """Stacked per-variable score blocks, originals then knockoffs.

    nodes selects which variables enter (in order); knock may be None for
    a knockoff-free design. Returns (design matrix, group ranges).
    """
    panels = [fpca.scores] if knock is None else [fpca.scores, knock.scores]
    cols, groups, start = [], [], 0
    for scores in panels:
        for j in nodes:
            d = int(fpca.truncation[j])
            cols.append(scores[:, j, :d])
            groups.append((start, start + d))
            start += d
    return np.hstack(cols), groups


def _knockoffs(spec, fpca, rep_seed):
    theta = estimate_theta_c(fpca, gamma=spec.gamma)
    theta = solve_R(theta, VARIANT_BY_METHOD[spec.method])
    return sample_knockoffs(fpca, theta, seed=derive_seed(rep_seed, 3))


def _regression_replicate(spec, data, fpca, rep_seed):
    basis = fpca.basis
    y = _response_matrix(spec, data, basis)
    nodes = range(spec.p)
    if spec.method == "GL":
        design, groups = _score_blocks(fpca, None, nodes)
        _, fit = tune_lambda(GroupDesign.build(design, groups, y),
                             hbar=spec.hbar)
        selected = frozenset(np.flatnonzero(fit.group_norms() > 0.0).tolist())
        threshold = None
    else:
        knock = _knockoffs(spec, fpca, rep_seed)
        design, groups = _score_blocks(fpca, knock, nodes)
        _, fit = tune_lambda(GroupDesign.build(design, groups, y),
                             hbar=spec.hbar)
        w = stats_from_fit(fit, spec.p)
        threshold = knockoff_threshold(w, spec.q, spec.delta)
        selected = frozenset(select(w, threshold).tolist())
    return selected, threshold


def _fggm_replicate(spec, data, fpca, rep_seed):
    p = spec.p
    knock = None if spec.method == "GL" else _knockoffs(spec, fpca, rep_seed)
    w = np.zeros((p, p))
    nodewise = []
    for j in range(p):
        others = [k for k in range(p) if k != j]
        d_j = int(fpca.truncation[j])
        y = fpca.scores[:, j, :d_j]
        design, groups = _score_blocks(fpca, knock, others)
        _, fit = tune_lambda(GroupDesign.build(design, groups, y),
                             hbar=spec.hbar)
        if spec.method == "GL":
            active = fit.group_norms() > 0.0
            nodewise.append({k for k, flag in zip(others, active) if flag})
        else:
            w[j, others] = stats_from_fit(fit, p - 1)
    if spec.method == "GL":
        edges = set()
        for j in range(p):
            for k in range(j + 1, p):
                hit_j, hit_k = k in nodewise[j], j in nodewise[k]
                keep = (hit_j and hit_k) if spec.rule == "and" \
                    else (hit_j or hit_k)
                if keep:
                    edges.add((j, k))
        return frozenset(edges), None
    thresholds = fggm_global_thresholds(w, spec.q, spec.rule, spec.delta)
    return frozenset(fggm_edges(thresholds, w, spec.rule)), thresholds


def run_replicate(spec, rep):
    """Run one replicate end to end; errors become a recorded reason."""
    row = {"model": spec.model, "method": spec.method, "replicate": rep,
           "fdp": float("nan"), "power": float("nan"), "n_selected": 0,
           "threshold": None, "error": ""}
    try:
        rep_seed = derive_seed(spec.seed, rep)
        data = _generate(spec, rep_seed)
        basis = estimation_basis()
        panel = _estimation_panel(spec, data, basis)
        fpca = fit_fpca(panel, spec.fraction)
        if spec.model == "fggm":
            selected, thresholds = _fggm_replicate(spec, data, fpca, rep_seed)
            threshold = None
        else:
            selected, threshold = _regression_replicate(spec, data, fpca,
                                                        rep_seed)
        fdp, power = evaluate_metrics(selected, data.truth)
        row.update(fdp=fdp, power=power, n_selected=len(selected),
                   threshold=None if threshold is None else float(threshold))
    except Exception as exc:  # noqa: BLE001 - recorded, run continues
        logger.warning("replicate %d failed: %s", rep, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_pipeline(spec):
    """All replicates of one experiment.

    Returns
    -------
    (rows, seconds) : per-replicate result dicts in replicate order and
    the wall-clock duration of the loop.
    """
    start = time.perf_counter()
    if spec.threads == 1:
        rows = [run_replicate(spec, rep) for rep in range(spec.replicates)]
    else:
        rows = Parallel(n_jobs=spec.threads)(
            delayed(run_replicate)(spec, rep)
            for rep in range(spec.replicates))
    return rows, time.perf_counter() - start


def aggregate(rows, spec, seconds):
    """Mean FDP (empirical FDR) and mean power over successful replicates."""
    good = [r for r in rows if not r["error"]]
    if not good:
        first = rows[0]["error"] if rows else "no replicates"
        raise PipelineError(
            f"all {len(rows)} replicates failed; first failure: {first}")
    return {"model": spec.model, "method": spec.method, "p": spec.p,
            "n": spec.n, "q": spec.q, "delta": spec.delta,
            "rule": spec.rule if spec.model == "fggm" else "-",
            "fdr": float(np.mean([r["fdp"] for r in good])),
            "power": float(np.mean([r["power"] for r in good])),
            "n_replicates": len(good), "seconds": float(seconds)}


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if np.isnan(value) else f"{value:.12g}"
    return str(value)


def _write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def emit_report(summaries, details, out_dir):
    """Write summary.csv and per-replicate details.csv under out_dir.

    details.csv depends only on the spec and seed, never on timing, so
    repeated runs are byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, summaries)
    _write_csv(out_dir / "details.csv", DETAIL_COLUMNS, details)
    return out_dir / "summary.csv", out_dir / "details.csv"


def run_experiment(spec):
    """run_pipeline + aggregate in one call."""
    rows, seconds = run_pipeline(spec)
    return aggregate(rows, spec, seconds), rows


# ---------------------------------------------------------------------------
# command line


_INT_KEYS = {"p", "n", "delta", "replicates", "seed", "threads", "L",
             "support_size", "grid_size"}
_FLOAT_KEYS = {"q", "gamma", "hbar", "fraction", "noise_sd", "rho"}
_BOOL_KEYS = {"partial"}


def _coerce(key, raw):
    raw = raw.strip()
    if key == "gamma" and raw.lower() in ("", "none", "auto"):
        return None
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise click.UsageError(f"config value {key}={raw!r} is invalid") from exc
    return raw


def _read_config(path):
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.UsageError(
                f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = raw.strip()
    return values


def _merged_params(ctx, params, config_path):
    """File values fill in wherever the flag was not given on the line."""
    merged = dict(params)
    if not config_path:
        return merged
    valid = set(merged) | set(ExperimentSpec.__dataclass_fields__)
    source = click.core.ParameterSource.COMMANDLINE
    for key, raw in _read_config(config_path).items():
        if key not in valid:
            raise click.UsageError(f"unknown config key {key!r}")
        if ctx.get_parameter_source(key) != source:
            merged[key] = _coerce(key, raw)
    return merged


def _build_spec(ctx, params, config_path, **overrides):
    merged = _merged_params(ctx, params, config_path)
    merged.update(overrides)
    merged = {k: v for k, v in merged.items()
              if k in ExperimentSpec.__dataclass_fields__}
    try:
        return ExperimentSpec(**merged)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _experiment_options(fn):
    opts = [
        click.option("--method", type=click.Choice(METHODS), default="KF1",
                     show_default=True, help="Selection method."),
        click.option("--p", type=int, default=50, show_default=True),
        click.option("--n", type=int, default=100, show_default=True),
        click.option("--q", type=float, default=0.2, show_default=True,
                     help="Target false discovery rate."),
        click.option("--delta", type=click.IntRange(0, 1), default=0,
                     show_default=True,
                     help="0: modified FDR filter; 1: the plus variant."),
        click.option("--replicates", type=int, default=1, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--threads", type=int, default=1, show_default=True,
                     help="Worker processes; -1 uses every core."),
        click.option("--gamma", type=float, default=None,
                     help="Correlation shrinkage weight; default automatic."),
        click.option("--hbar", type=float, default=None,
                     help="HBIC severity constant; default depends on the "
                          "model (sflr 1.0, fflr 0.3, fggm 0.1)."),
        click.option("--fraction", type=float, default=0.9, show_default=True,
                     help="Variance fraction kept by the score truncation."),
        click.option("--partial", is_flag=True, default=False,
                     help="Observe curves at random noisy time points."),
        click.option("--L", "L", type=int, default=51, show_default=True,
                     help="Observations per curve in partial mode."),
        click.option("--noise-sd", type=float, default=0.5, show_default=True,
                     help="Measurement noise in partial mode."),
        click.option("--rho", type=float, default=0.5, show_default=True),
        click.option("--support-size", type=int, default=10,
                     show_default=True),
        click.option("--grid-size", type=int, default=101, show_default=True),
        click.option("--out", type=click.Path(file_okay=False), default=".",
                     show_default=True, help="Output directory."),
        click.option("--config", "config_path",
                     type=click.Path(exists=False, dir_okay=False),
                     default=None, help="key=value defaults file."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _echo_summary(summary):
    click.echo(
        f"{summary['model']} {summary['method']}: "
        f"FDR {summary['fdr']:.3f}, power {summary['power']:.3f} "
        f"({summary['n_replicates']} replicates, {summary['seconds']:.1f}s)")


def _run_and_report(spec, out):
    summary, rows = run_experiment(spec)
    emit_report([summary], rows, out)
    failed = [r for r in rows if r["error"]]
    if failed:
        click.echo(f"{len(failed)} replicate(s) failed; see details.csv",
                   err=True)
    _echo_summary(summary)


@click.group()
@click.option("--verbose", is_flag=True, default=False,
              help="Log pipeline internals.")
def main(verbose):
    """Functional knockoff filters: simulation and selection pipelines."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--model", type=click.Choice(MODELS), required=True)
@_experiment_options
@click.pass_context
def simulate(ctx, model, config_path, out, **params):
    """Generate one dataset and write curves, truth and response CSVs."""
    spec = _build_spec(ctx, dict(params, model=model), config_path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _generate(spec, derive_seed(spec.seed, 0))
    write_curves_csv(out_dir / "curves.csv", data.t_grid, data.values)
    write_truth_csv(out_dir / "truth.csv", data.truth)
    if spec.model == "sflr":
        pd.DataFrame({"sample_id": np.arange(spec.n),
                      "y": data.response}).to_csv(
            out_dir / "response.csv", index=False)
    elif spec.model == "fflr":
        write_curves_csv(out_dir / "response_curves.csv", data.t_grid,
                         data.response_values[:, None, :])
    if spec.partial:
        t_pts, noisy = corrupt_partial(data.panel, spec.L, spec.noise_sd,
                                       seed=data.config.seed)
        n, p, L = t_pts.shape
        frame = pd.DataFrame({
            "sample_id": np.repeat(np.arange(n), p * L),
            "variable_id": np.tile(np.repeat(np.arange(p), L), n),
            "t": t_pts.reshape(-1),
            "value": noisy.reshape(-1),
        })
        frame.to_csv(out_dir / "raw_curves.csv", index=False)
    click.echo(f"wrote {out_dir / 'curves.csv'}")


@main.command()
@click.option("--curves", "curves_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Long-format curve CSV on a shared grid.")
@click.option("--method", type=click.Choice(("KF1", "KF2", "KF3")),
              default="KF1", show_default=True)
@click.option("--gamma", type=float, default=None)
@click.option("--fraction", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def knockoffs(curves_path, method, gamma, fraction, seed, out):
    """Build knockoff curves for an observed panel."""
    grid, values = _load_curve_panel(curves_path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    basis = estimation_basis()
    coords = project_panel(grid, values, basis)
    fpca = fit_fpca(CurvePanel.from_coords(coords, basis), fraction)
    theta = estimate_theta_c(fpca, gamma=gamma)
    theta = solve_R(theta, VARIANT_BY_METHOD[method])
    panel = sample_knockoffs(fpca, theta, seed=seed)
    knock_values = evaluate(panel.curves.coords, basis, grid)
    write_curves_csv(out_dir / "knockoff_curves.csv", grid, knock_values)
    write_theta_csv(theta, out_dir / "theta.csv",
                    meta_path=out_dir / "theta_meta.json")
    click.echo(f"wrote {out_dir / 'knockoff_curves.csv'}")


def _load_curve_panel(path):
    curves = read_curves_csv(path)
    samples = sorted({sid for sid, _ in curves})
    variables = sorted({vid for _, vid in curves})
    grid = None
    values = np.empty((len(samples), len(variables), 0))
    for i, sid in enumerate(samples):
        for j, vid in enumerate(variables):
            if (sid, vid) not in curves:
                raise click.UsageError(
                    f"curve ({sid}, {vid}) missing from {path}")
            t, v = curves[(sid, vid)]
            if grid is None:
                grid = t
                values = np.empty((len(samples), len(variables), t.size))
            elif t.shape != grid.shape or not np.allclose(t, grid):
                raise click.UsageError(
                    f"curves in {path} do not share one grid")
            values[i, j] = v
    if grid is None:
        raise click.UsageError(f"{path} holds no curves")
    return grid, values


@main.command(name="select")
@click.option("--model", type=click.Choice(("sflr", "fflr")), required=True)
@_experiment_options
@click.pass_context
def select_cmd(ctx, model, config_path, out, **params):
    """Run the regression selection pipeline over replicates."""
    spec = _build_spec(ctx, dict(params, model=model), config_path)
    _run_and_report(spec, out)


@main.command(name="fggm")
@click.option("--rule", type=click.Choice(("and", "or")), default="or",
              show_default=True, help="Edge combination rule.")
@_experiment_options
@click.pass_context
def fggm_cmd(ctx, rule, config_path, out, **params):
    """Run the graphical-model selection pipeline over replicates."""
    spec = _build_spec(ctx, dict(params, rule=rule), config_path,
                       model="fggm")
    _run_and_report(spec, out)


@main.command()
@click.option("--models", type=click.Choice(MODELS), multiple=True,
              default=MODELS, show_default=True)
@click.option("--replicates", type=int, default=50, show_default=True,
              help="Replicates for the regression models.")
@click.option("--fggm-replicates", type=int, default=25, show_default=True)
@click.option("--q", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=-1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def bench(models, replicates, fggm_replicates, q, seed, threads, out):
    """Desk-scale benchmark grid at p=50, n=100."""
    runs = []
    if "sflr" in models:
        runs += [("sflr", "KF1", replicates), ("sflr", "GL", replicates)]
    if "fflr" in models:
        runs += [("fflr", "KF1", replicates)]
    if "fggm" in models:
        runs += [("fggm", "KF1", fggm_replicates)]
    summaries, details = [], []
    for model, method, reps in runs:
        spec = ExperimentSpec(model=model, method=method, q=q,
                              replicates=reps, seed=seed, threads=threads)
        summary, rows = run_experiment(spec)
        summaries.append(summary)
        details.extend(rows)
        _echo_summary(summary)
    emit_report(summaries, details, out)


def cli_main():
    """Console entry point with the documented exit codes.

    0 on success, 2 on configuration errors, 3 on numerical failures.
    """
    try:
        main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (NumericalError, PipelineError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    cli_main()
