"""Command-line front end.

Exit codes: 0 success, 1 unexpected error, 2 usage error, 3 input file
unreadable, 4 malformed data, 5 every candidate model failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baseline import FcmddConfig, fcmdd_select
from .core import Family
from .evaluation import adjusted_rand_index, crosstab, rand_index
from .initialization import InitConfig
from .panel import PanelData, PanelFormatError, read_panel_csv, write_panel_csv
from .selection import ModelGrid, SearchFailedError, diagnose, model_search
from .simstudy import ScenarioSpec, builtin_scenarios, get_scenario, render_reports, run_scenario, simulate_panel

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_UNREADABLE, EXIT_BAD_DATA, EXIT_ALL_FAILED = 0, 1, 2, 3, 4, 5
SEED_ENV = "INARMIX_SEED"
SCHEMA = {
    "simulate": "inarmix.simulate/1",
    "diagnose": "inarmix.diagnose/1",
    "fit": "inarmix.fit/1",
    "eval": "inarmix.eval/1",
    "baseline": "inarmix.baseline/1",
}

DEFAULTS = {
    "max_lag": 12,
    "threshold": 1.2,
    "g_range": "2,3",
    "h_rule": "01",
    "family": "auto",
    "epsilon": 0.1,
    "max_iters": 500,
    "starts": 5,
    "fuzziness": 2.0,
    "tol": 1e-2,
    "fcmdd_max_iters": 100,
    "reps": None,
    "workers": 1,
}

log = logging.getLogger("inarmix")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- helpers


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer", EXIT_USAGE) from None


def _resolve(args, config: dict, key: str):
    """flag > config file > built-in default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_UNREADABLE) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_BAD_DATA) from None
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must hold a JSON object", EXIT_BAD_DATA)
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _int_pair(value, what: str) -> tuple[int, int]:
    if isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [p for p in str(value).replace(":", ",").split(",") if p.strip()]
    try:
        nums = [int(p) for p in parts]
    except (TypeError, ValueError):
        raise CliError(f"{what} must be two integers like '2,3', got {value!r}", EXIT_USAGE) from None
    if len(nums) == 1:
        nums = nums * 2
    if len(nums) != 2:
        raise CliError(f"{what} must be two integers like '2,3', got {value!r}", EXIT_USAGE)
    return nums[0], nums[1]


def _read_panel(path, complete_only: bool) -> PanelData:
    try:
        panel = read_panel_csv(path, complete_only=False)
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read panel {path}: {exc}", EXIT_UNREADABLE) from None
    except (PanelFormatError, ValueError) as exc:
        raise CliError(f"bad panel {path}: {exc}", EXIT_BAD_DATA) from None
    if complete_only:
        try:
            panel = panel.complete_only()
        except ValueError as exc:
            raise CliError(f"--complete-only: {exc}", EXIT_BAD_DATA) from None
        log.info("kept %d complete series", panel.n)
    return panel


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_plain(obj), indent=2) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _write_csv(path: Path, header: list, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
    path.write_text(buf.getvalue())


def _write_labels(path: Path, ids, labels) -> None:
    _write_csv(path, ["id", "label"], zip(ids, (int(v) for v in labels)))


def _read_labels(path) -> dict[str, str]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read labels {path}: {exc}", EXIT_UNREADABLE) from None
    if not rows:
        raise CliError(f"labels file {path} is empty", EXIT_BAD_DATA)
    col = 1
    head = [c.strip().lower() for c in rows[0]]
    if "label" in head:
        col = head.index("label")
        rows = rows[1:]
    elif head and head[0] == "id":
        rows = rows[1:]
    out: dict[str, str] = {}
    for k, r in enumerate(rows, start=1):
        if len(r) <= col:
            raise CliError(f"{path}: row {k} has no label column", EXIT_BAD_DATA)
        key = r[0].strip()
        if key in out:
            raise CliError(f"{path}: duplicate id {key!r}", EXIT_BAD_DATA)
        out[key] = r[col].strip()
    return out


def _add_common(p: argparse.ArgumentParser, panel: bool = True) -> None:
    if panel:
        p.add_argument("panel", help="panel CSV: id, then counts at t=1..T (blank trailing cells allowed)")
        p.add_argument("--complete-only", action="store_true", help="drop series shorter than the longest")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--config", default=None, help="JSON file of option defaults (flags take precedence)")
    p.add_argument("--out", required=True, help="output directory")


# --------------------------------------------------------------------------- commands


def cmd_simulate(args, config) -> int:
    try:
        if args.spec:
            spec = ScenarioSpec.from_dict(json.loads(Path(args.spec).read_text()))
        else:
            spec = get_scenario(args.scenario)
    except OSError as exc:
        raise CliError(f"cannot read scenario spec: {exc}", EXIT_UNREADABLE) from None
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_USAGE) from None
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad scenario spec: {exc}", EXIT_BAD_DATA) from None
    reps = _resolve(args, config, "reps")
    reps = spec.replications if reps is None else int(reps)
    seed = args.seed_value
    out = _out_dir(args.out)
    files = []
    for k, seq in enumerate(np.random.SeedSequence(seed).spawn(reps)):
        panel, labels = simulate_panel(spec, np.random.default_rng(seq))
        write_panel_csv(panel, out / f"panel_{k:03d}.csv")
        _write_labels(out / f"labels_{k:03d}.csv", panel.ids, labels + 1)
        files.append({"panel": f"panel_{k:03d}.csv", "labels": f"labels_{k:03d}.csv"})
    _write_json(out / "truth.json", {"schema": SCHEMA["simulate"], "seed": seed, "replications": reps,
                                     "scenario": spec.to_dict(), "files": files})
    print(f"wrote {reps} panel(s) to {out}")
    return EXIT_OK


def cmd_diagnose(args, config) -> int:
    panel = _read_panel(args.panel, args.complete_only)
    max_lag = int(_resolve(args, config, "max_lag"))
    threshold = float(_resolve(args, config, "threshold"))
    if max_lag < 2 or panel.lengths.min() < 3:
        raise CliError("diagnostics need max_lag >= 2 and series of length >= 3", EXIT_BAD_DATA)
    rep = diagnose(panel, max_lag, threshold)
    out = _out_dir(args.out)
    _write_csv(out / "acf.csv", ["id", "lag", "acf", "constant"],
               ((sid, int(l), float(rep.acf.acf[i, k]), int(rep.acf.constant[i]))
                for i, sid in enumerate(panel.ids) for k, l in enumerate(rep.acf.lags)))
    _write_csv(out / "dispersion.csv", ["id", "mean", "variance", "ratio"],
               zip(panel.ids, rep.dispersion.means, rep.dispersion.variances, rep.dispersion.ratios))
    top = float(max(rep.dispersion.means.max(), 1.0))
    _write_csv(out / "poisson_line.csv", ["mean", "variance"], [(0.0, 0.0), (top, top)])
    summary = {"schema": SCHEMA["diagnose"], "n_series": panel.n, "max_lag": rep.acf.lags.size, **rep.summary(),
               "files": ["acf.csv", "dispersion.csv", "poisson_line.csv"]}
    if args.plots:
        from .plotting import plot_acf_boxplot, plot_dispersion
        plot_acf_boxplot(rep, out / "acf_boxplot.png")
        plot_dispersion(rep, out / "dispersion.png")
        summary["files"] += ["acf_boxplot.png", "dispersion.png"]
    _write_json(out / "diagnostics.json", summary)
    i, j = rep.suggested_lags
    print(f"suggested lags: {i},{j}; dispersion: {rep.dispersion_verdict} "
          f"(median variance/mean {rep.dispersion.median_ratio:.3f})")
    return EXIT_OK


def cmd_fit(args, config) -> int:
    panel = _read_panel(args.panel, args.complete_only)
    fam_opt = str(_resolve(args, config, "family")).lower()
    lags_opt = _resolve(args, config, "lags")
    diag = None
    if fam_opt == "auto" or lags_opt is None:
        if panel.lengths.min() < 3:
            raise CliError("series too short for automatic lag/family choice; pass --lags and --family",
                           EXIT_BAD_DATA)
        diag = diagnose(panel, int(_resolve(args, config, "max_lag")), float(_resolve(args, config, "threshold")))
    if fam_opt == "auto":
        family, fam_source = diag.suggested_family, "dispersion diagnostic"
    else:
        try:
            family, fam_source = Family.parse(fam_opt), "user"
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE) from None
    lags = diag.suggested_lags if lags_opt is None else _int_pair(lags_opt, "--lags")
    g_range = _int_pair(_resolve(args, config, "g_range"), "--G-range")
    try:
        grid = ModelGrid(lags, g_range, str(_resolve(args, config, "h_rule")), family)
        init_cfg = InitConfig(seed=args.seed_value)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    epsilon = float(_resolve(args, config, "epsilon"))
    max_iters = int(_resolve(args, config, "max_iters"))
    try:
        res = model_search(panel, grid, init_cfg, np.random.default_rng(args.seed_value),
                           epsilon=epsilon, max_iters=max_iters)
    except SearchFailedError as exc:
        raise CliError(str(exc), EXIT_ALL_FAILED) from None
    best = res.best.sorted_by_lambda()
    G = best.model.G
    out = _out_dir(args.out)
    cols = ["G", "H", "structure", "start", "loglik", "n_params", "bic", "neg2ll_bic",
            "converged", "iterations", "selected", "error"]
    _write_csv(out / "bic_table.csv", cols, ([r.get(c) for c in cols] for r in res.table))
    _write_csv(out / "responsibilities.csv", ["id"] + [f"cluster_{g + 1}" for g in range(G)],
               ([sid] + [float(v) for v in row] for sid, row in zip(panel.ids, best.responsibilities)))
    _write_labels(out / "labels.csv", panel.ids, best.map_labels + 1)
    from .plotting import cluster_profiles
    prof = cluster_profiles(panel, best.map_labels, G)
    _write_csv(out / "profiles.csv", ["cluster", "t", "mean", "n_series"],
               ((g + 1, t + 1, None if np.isnan(m[t]) else float(m[t]), int(c[t]))
                for g, (m, c) in prof.items() for t in range(m.size)))
    files = ["bic_table.csv", "responsibilities.csv", "labels.csv", "profiles.csv"]
    if args.plots:
        from .plotting import plot_cluster_profiles, plot_series_by_cluster
        plot_cluster_profiles(panel, best.map_labels, out / "profiles.png")
        plot_series_by_cluster(panel, best.map_labels, out / "series.png")
        files += ["profiles.png", "series.png"]
    summary = {
        "schema": SCHEMA["fit"],
        "seed": args.seed_value,
        "lags": list(lags),
        "family": family.value,
        "family_source": fam_source,
        "g_range": list(g_range),
        "h_rule": grid.h_rule,
        "epsilon": epsilon,
        "structure": res.best_candidate.label,
        "n_series": panel.n,
        "n_obs": best.n_obs,
        "fit": best.to_dict(),
        "cluster_sizes": np.bincount(best.map_labels, minlength=G).tolist(),
        "diagnostics": diag.summary() if diag is not None else None,
        "files": files,
    }
    _write_json(out / "model.json", summary)
    print(f"selected {res.best_candidate.label} (BIC {best.bic:.2f}, loglik {best.final_loglik:.2f})")
    return EXIT_OK


def cmd_eval(args, config) -> int:
    truth = _read_labels(args.true_labels)
    pred = _read_labels(args.pred_labels)
    if set(truth) != set(pred):
        missing = sorted(set(truth) ^ set(pred))[:5]
        raise CliError(f"label files cover different ids (e.g. {missing})", EXIT_BAD_DATA)
    ids = list(truth)
    if len(ids) < 2:
        raise CliError("need at least two labelled series", EXIT_BAD_DATA)
    a = [truth[k] for k in ids]
    b = [pred[k] for k in ids]
    tab = crosstab(a, b)
    result = {"schema": SCHEMA["eval"], "n": len(ids), "ari": adjusted_rand_index(a, b),
              "rand": rand_index(a, b), "crosstab": tab.to_dict()}
    text = json.dumps(_plain(result), indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_baseline(args, config) -> int:
    panel = _read_panel(args.panel, args.complete_only)
    try:
        cfg = FcmddConfig(m=float(_resolve(args, config, "fuzziness")),
                          random_starts=int(_resolve(args, config, "starts")),
                          tolerance=float(_resolve(args, config, "tol")),
                          max_iters=int(_resolve(args, config, "fcmdd_max_iters")),
                          seed=args.seed_value,
                          g_range=_int_pair(_resolve(args, config, "g_range"), "--G-range"))
        res = fcmdd_select(panel, cfg)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_BAD_DATA) from None
    out = _out_dir(args.out)
    cols = ["G", "objective", "xie_beni", "iterations", "selected"]
    _write_csv(out / "baseline_table.csv", cols, ([r[c] for c in cols] for r in res.table))
    _write_csv(out / "membership.csv", ["id"] + [f"cluster_{g + 1}" for g in range(res.G)],
               ([sid] + [float(v) for v in row] for sid, row in zip(panel.ids, res.fit.membership)))
    _write_labels(out / "labels.csv", panel.ids, res.labels + 1)
    _write_json(out / "baseline.json", {
        "schema": SCHEMA["baseline"], "seed": args.seed_value, "G": res.G,
        "fuzziness": cfg.m, "random_starts": cfg.random_starts, "tolerance": cfg.tolerance,
        "medoids": [panel.ids[i] for i in res.fit.medoids], "objective": res.fit.objective,
        "table": res.table, "files": ["baseline_table.csv", "membership.csv", "labels.csv"]})
    print(f"FCMdd selected G={res.G}")
    return EXIT_OK


def _study_specs(names: list[str]) -> list[ScenarioSpec]:
    all_specs = builtin_scenarios()
    out = []
    for name in names or ["all"]:
        if name == "all":
            out += all_specs
        elif name in ("poisson", "nb"):
            out += [s for s in all_specs if s.family.value == name]
        elif name.endswith(".json"):
            try:
                out.append(ScenarioSpec.from_dict(json.loads(Path(name).read_text())))
            except OSError as exc:
                raise CliError(f"cannot read scenario spec: {exc}", EXIT_UNREADABLE) from None
            except (ValueError, TypeError, KeyError) as exc:
                raise CliError(f"bad scenario spec {name}: {exc}", EXIT_BAD_DATA) from None
        else:
            try:
                out.append(get_scenario(name))
            except KeyError as exc:
                raise CliError(str(exc.args[0]), EXIT_USAGE) from None
    return out


def cmd_study(args, config) -> int:
    specs = _study_specs(args.scenarios)
    reps = _resolve(args, config, "reps")
    workers = int(_resolve(args, config, "workers"))
    out = _out_dir(args.out)
    reports = []
    for k, spec in enumerate(specs):
        seed = np.random.SeedSequence([args.seed_value, k])
        log.info("running %s", spec.name)
        rep = run_scenario(spec, include_baseline=args.baseline, rng=seed,
                           replications=None if reps is None else int(reps), workers=workers)
        (out / f"{spec.name}.json").write_text(rep.to_json())
        reports.append(rep)
    (out / "report.txt").write_text(render_reports(reports))
    sys.stdout.write(render_reports(reports))
    return EXIT_OK


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inarmix", description="Mixtures of INAR(s*) processes for count panels.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate labelled panels from a scenario")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="builtin scenario name, e.g. poisson-very-easy")
    g.add_argument("--spec", help="scenario spec JSON file")
    s.add_argument("--reps", type=int, default=None)
    _add_common(s, panel=False)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("diagnose", help="ACF and dispersion diagnostics")
    _add_common(s)
    s.add_argument("--max-lag", type=int, default=None)
    s.add_argument("--threshold", type=float, default=None, help="variance/mean threshold for overdispersion")
    s.add_argument("--plots", action="store_true", help="also render PNG figures")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("fit", help="fit INAR mixtures and select by BIC")
    _add_common(s)
    s.add_argument("--lags", default=None, help="lag pair i,j (default: suggested by diagnostics)")
    s.add_argument("--G-range", dest="g_range", default=None, help="component range lo,hi (default 2,3)")
    s.add_argument("--H-rule", dest="h_rule", choices=["0", "01", "full"], default=None)
    s.add_argument("--family", choices=["auto", "poisson", "nb"], default=None)
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--max-iters", type=int, default=None)
    s.add_argument("--max-lag", type=int, default=None, help="for automatic lag choice")
    s.add_argument("--threshold", type=float, default=None, help="for automatic family choice")
    s.add_argument("--plots", action="store_true")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eval", help="ARI, Rand index and cross-tab of two label files")
    s.add_argument("true_labels")
    s.add_argument("pred_labels")
    s.add_argument("--out", default=None, help="JSON output file (also printed)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="DTW + fuzzy C-medoids comparison clustering")
    _add_common(s)
    s.add_argument("--G-range", dest="g_range", default=None)
    s.add_argument("--starts", type=int, default=None)
    s.add_argument("--fuzziness", type=float, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("study", help="run simulation scenarios and write reports")
    s.add_argument("scenarios", nargs="*", help="scenario names, 'all', 'poisson', 'nb' or spec JSON files")
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--baseline", action="store_true", help="also run the FCMdd comparison")
    s.add_argument("--workers", type=int, default=None)
    _add_common(s, panel=False)
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(getattr(args, "config", None))
        seed = args.seed if args.seed is not None else config.get("seed")
        args.seed_value = int(seed) if seed is not None else _default_seed()
        return args.func(args, config)
    except CliError as exc:
        print(f"inarmix: error: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
