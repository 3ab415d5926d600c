"""Command-line surface: run experiments from a config file, emit CSV/JSON
results and an SVG log-log plot, and expose each estimator as a subcommand.

Determinism contract: every byte this module writes (CSV, JSON, SVG, config
echo) is a pure function of the run configuration — floats are rendered with
repr, JSON keys are sorted, SVG coordinates use a fixed format — so reruns
and different worker counts produce identical files.

Exit codes: 0 success, 2 user/validation error, 3 I/O error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from dataclasses import dataclass

from . import bounds, experiments, statistics
from .bounds import BoundConfig
from .errors import ConfigError, ContractError, NumericalError
from .experiments import CellResult, ExperimentGrid, ScalingFit
from .linalg import DeviationReport, operator_deviation
from .sampler import EnsembleSpec, load_matrix, parse_family_token, sample_ensemble, save_matrix

__all__ = [
    "RunConfig",
    "ResultBundle",
    "parse_config",
    "run_bundle",
    "write_bundle",
    "results_csv_text",
    "read_results_csv",
    "render_plot_svg",
    "main",
    "entry",
]

CSV_HEADER = "family,n,N,trial,seed,lambda_min,lambda_max,deviation,max_col_norm,boundedness_ratio"

_GRID_KEYS = ("cells", "trials_per_cell", "master_seed")
_BOUND_KEYS = ("psi", "K", "C_main", "c_prob", "C1", "C2", "C3", "C_old", "t")
_OUTPUT_KEYS = ("output_dir", "emit", "parallelism")
_EMIT_CHOICES = frozenset({"csv", "json", "svg"})


# --- run configuration -------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated run configuration; to_text/parse round-trips."""

    grid: ExperimentGrid
    output_dir: str
    emit: frozenset
    parallelism: int | str

    def to_text(self) -> str:
        g = self.grid
        cells = ", ".join(f"{fam}:{n}:{N}" for fam, n, N in g.cells)
        lines = [
            "[grid]",
            f"cells = {cells}",
            f"trials_per_cell = {g.trials_per_cell}",
            f"master_seed = {g.master_seed}",
            "",
            "[bounds]",
        ]
        cfg = g.bound_config.to_json_dict()
        lines += [f"{key} = {cfg[key]!r}" for key in _BOUND_KEYS]
        lines += [
            "",
            "[output]",
            f"output_dir = {self.output_dir}",
            f"emit = {', '.join(sorted(self.emit))}",
            f"parallelism = {self.parallelism}",
            "",
        ]
        return "\n".join(lines)


def _parse_cell(token: str) -> tuple[str, int, int]:
    parts = token.rsplit(":", 2)
    if len(parts) != 3:
        raise ConfigError(f"cell {token!r} must have the form family:n:N")
    family, n_s, N_s = (p.strip() for p in parts)
    parse_family_token(family)
    try:
        n, N = int(n_s), int(N_s)
    except ValueError as exc:
        raise ConfigError(f"cell {token!r}: dimensions must be integers") from exc
    return family, n, N


def parse_config(text: str) -> RunConfig:
    """Strict INI parse: unknown sections or keys are rejected, every listed
    key is required, and malformed syntax reports its line number."""
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    expected = {"grid": _GRID_KEYS, "bounds": _BOUND_KEYS, "output": _OUTPUT_KEYS}
    unknown_sections = set(parser.sections()) - set(expected)
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
    for section, keys in expected.items():
        if not parser.has_section(section):
            raise ConfigError(f"missing config section [{section}]")
        unknown = set(parser[section]) - set(keys)
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        missing = set(keys) - set(parser[section])
        if missing:
            raise ConfigError(f"missing keys in [{section}]: {sorted(missing)}")

    grid_sec, bounds_sec, out_sec = parser["grid"], parser["bounds"], parser["output"]
    try:
        cells = tuple(_parse_cell(tok) for tok in grid_sec["cells"].split(",") if tok.strip())
        trials = int(grid_sec["trials_per_cell"])
        master = int(grid_sec["master_seed"], 0)
        constants = {key: float(bounds_sec[key]) for key in _BOUND_KEYS}
    except ValueError as exc:
        raise ConfigError(f"config value error: {exc}") from exc
    bound_config = BoundConfig(**constants)
    grid = ExperimentGrid(cells, trials, master, bound_config)

    emit = frozenset(tok.strip() for tok in out_sec["emit"].split(",") if tok.strip())
    if not emit or not emit <= _EMIT_CHOICES:
        raise ConfigError(f"emit must be a nonempty subset of {sorted(_EMIT_CHOICES)}, got {sorted(emit)}")
    par_raw = out_sec["parallelism"].strip()
    parallelism: int | str
    if par_raw == "auto":
        parallelism = "auto"
    else:
        try:
            parallelism = int(par_raw)
        except ValueError as exc:
            raise ConfigError(f"parallelism must be 'auto' or an integer, got {par_raw!r}") from exc
        if parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {parallelism}")
    return RunConfig(grid=grid, output_dir=out_sec["output_dir"].strip(), emit=emit, parallelism=parallelism)


def resolve_workers(parallelism: int | str) -> int:
    """COVCON_THREADS overrides the configured parallelism when set."""
    env = os.environ.get("COVCON_THREADS")
    if env is not None:
        try:
            workers = int(env)
        except ValueError as exc:
            raise ConfigError(f"COVCON_THREADS must be an integer, got {env!r}") from exc
        if workers < 1:
            raise ConfigError(f"COVCON_THREADS must be >= 1, got {workers}")
        return workers
    if parallelism == "auto":
        return os.cpu_count() or 1
    return int(parallelism)


# --- serialization -----------------------------------------------------------


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def results_csv_text(results: list[CellResult]) -> str:
    """One row per trial in canonical (cell, trial) order; floats via repr."""
    lines = [CSV_HEADER]
    for res in results:
        family, n, N = res.cell
        for trial, r in enumerate(res.reports):
            lines.append(
                ",".join(
                    [
                        family,
                        str(n),
                        str(N),
                        str(trial),
                        str(r.seed),
                        repr(float(r.lambda_min)),
                        repr(float(r.lambda_max)),
                        repr(float(r.deviation)),
                        repr(float(r.max_col_norm)),
                        repr(float(r.boundedness_ratio)),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def read_results_csv(path) -> list[CellResult]:
    """Rebuild per-cell results from a results CSV (repr round-trips floats
    exactly).  psi_hat is not recoverable from rows and is recorded as 0."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER.split(","):
            raise ContractError(f"unexpected results CSV header: {header!r}")
        grouped: dict[tuple[str, int, int], list[DeviationReport]] = {}
        for row in reader:
            if len(row) != 10:
                raise ContractError(f"results CSV row has {len(row)} fields, expected 10")
            family, n, N = row[0], int(row[1]), int(row[2])
            report = DeviationReport(
                n=n,
                N=N,
                lambda_min=float(row[5]),
                lambda_max=float(row[6]),
                deviation=float(row[7]),
                max_col_norm=float(row[8]),
                boundedness_ratio=float(row[9]),
                seed=int(row[4]),
            )
            grouped.setdefault((family, n, N), []).append(report)
    results = []
    for cell, reports in grouped.items():
        summary = experiments.summarize_reports(cell, tuple(reports), 0.0, bounds.DEFAULT_CONFIG)
        results.append(CellResult(cell=cell, reports=tuple(reports), summary=summary))
    return results


def bounds_check_json(results: list[CellResult], cfg: BoundConfig) -> str:
    """Exceedance and sandwich checks; the sandwich covers tall cells only."""
    tall = [res for res in results if res.cell[1] <= res.cell[2]]
    doc = {
        "config": cfg.to_json_dict(),
        "exceedance": [c.to_json_dict() for c in experiments.failure_rate(results, cfg)],
        "sandwich": [c.to_json_dict() for c in experiments.bai_yin_sandwich(tall, cfg)],
    }
    return _dump_json(doc)


# --- SVG plot ----------------------------------------------------------------

_SVG_W, _SVG_H = 800, 600
_ML, _MR, _MT, _MB = 80.0, 30.0, 40.0, 60.0


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_plot_svg(results: list[CellResult], fit: ScalingFit, cfg: BoundConfig) -> str:
    """Log-log scatter of per-cell mean deviation against beta = n/N, with
    the fitted power law, the deviation envelope for cfg's constants, and a
    slope-1/2 reference drawn as the single polyline element.  Axis ticks
    annotate the beta values entering the fit."""
    xs = [math.log10(b) for b in fit.beta_values]
    ys = [math.log10(res.summary.mean_deviation) for res in results]
    env = [math.log10(bounds.theorem1_rhs(cfg, 1, 1) * math.sqrt(b)) for b in fit.beta_values]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys + env), max(ys + env)
    x_pad = 0.05 * (x_hi - x_lo) or 0.5
    y_pad = 0.05 * (y_hi - y_lo) or 0.5
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def px(x: float) -> float:
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_SVG_W - _ML - _MR)

    def py(y: float) -> float:
        return _SVG_H - _MB - (y - y_lo) / (y_hi - y_lo) * (_SVG_H - _MT - _MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect x="0" y="0" width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<line x1="{_fmt(_ML)}" y1="{_fmt(_SVG_H - _MB)}" x2="{_fmt(_SVG_W - _MR)}" '
        f'y2="{_fmt(_SVG_H - _MB)}" stroke="black"/>',
        f'<line x1="{_fmt(_ML)}" y1="{_fmt(_MT)}" x2="{_fmt(_ML)}" y2="{_fmt(_SVG_H - _MB)}" '
        f'stroke="black"/>',
        f'<text x="{_fmt(_SVG_W / 2)}" y="{_fmt(_SVG_H - 15.0)}" text-anchor="middle" '
        f'font-size="14">beta = n/N (log10)</text>',
        f'<text x="18" y="{_fmt(_SVG_H / 2)}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {_fmt(_SVG_H / 2)})">mean deviation (log10)</text>',
        f'<text x="{_fmt(_SVG_W / 2)}" y="24" text-anchor="middle" font-size="15">'
        f"operator deviation vs sample shape</text>",
    ]
    for beta in sorted(set(fit.beta_values)):
        x = px(math.log10(beta))
        out.append(
            f'<line x1="{_fmt(x)}" y1="{_fmt(_SVG_H - _MB)}" x2="{_fmt(x)}" '
            f'y2="{_fmt(_SVG_H - _MB + 6.0)}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_fmt(x)}" y="{_fmt(_SVG_H - _MB + 22.0)}" text-anchor="middle" '
            f'font-size="11">beta={beta:.6g}</text>'
        )
    x_mid = 0.5 * (min(xs) + max(xs))
    y_mid = sum(ys) / len(ys)
    ref = [(x_lo + x_pad, y_mid + 0.5 * (x_lo + x_pad - x_mid)), (x_hi - x_pad, y_mid + 0.5 * (x_hi - x_pad - x_mid))]
    out.append(
        '<polyline fill="none" stroke="#888888" stroke-dasharray="6,4" points="'
        + " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in ref)
        + '"/>'
    )
    fit_pts = [(x, (fit.log_constant + fit.exponent * (x * math.log(10.0))) / math.log(10.0)) for x in (x_lo + x_pad, x_hi - x_pad)]
    out.append(
        '<path fill="none" stroke="#1f5fbf" stroke-width="1.5" d="'
        + "M "
        + " L ".join(f"{_fmt(px(x))} {_fmt(py(y))}" for x, y in fit_pts)
        + '"/>'
    )
    env_pts = sorted(zip(xs, env))
    out.append(
        '<path fill="none" stroke="#2c8a2c" stroke-dasharray="2,3" d="'
        + "M "
        + " L ".join(f"{_fmt(px(x))} {_fmt(py(y))}" for x, y in env_pts)
        + '"/>'
    )
    for x, y in zip(xs, ys):
        out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3.5" fill="#b03030"/>')
    out.append(
        f'<text x="{_fmt(_SVG_W - _MR)}" y="{_fmt(_MT + 14.0)}" text-anchor="end" font-size="12">'
        f"fit slope {fit.exponent:.3f}, reference slope 0.500</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- experiment bundle -------------------------------------------------------


@dataclass(frozen=True)
class ResultBundle:
    """Everything one experiment run emits, as ready-to-write text."""

    config_text: str
    csv_text: str
    scaling_text: str
    bounds_check_text: str
    svg_text: str | None


def run_bundle(config: RunConfig, workers: int | None = None) -> ResultBundle:
    if workers is None:
        workers = resolve_workers(config.parallelism)
    results = experiments.run_grid(config.grid, workers=workers)
    fit = experiments.scaling_fit(results)
    cfg = config.grid.bound_config
    svg = render_plot_svg(results, fit, cfg) if "svg" in config.emit else None
    return ResultBundle(
        config_text=config.to_text(),
        csv_text=results_csv_text(results),
        scaling_text=_dump_json(fit.to_json_dict()),
        bounds_check_text=bounds_check_json(results, cfg),
        svg_text=svg,
    )


def write_bundle(bundle: ResultBundle, config: RunConfig) -> list[str]:
    """Write the bundle into output_dir; returns the paths written."""
    os.makedirs(config.output_dir, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        path = os.path.join(config.output_dir, name)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        written.append(path)

    put("config.ini", bundle.config_text)
    if "csv" in config.emit:
        put("results.csv", bundle.csv_text)
    if "json" in config.emit:
        put("scaling.json", bundle.scaling_text)
        put("bounds_check.json", bundle.bounds_check_text)
    if bundle.svg_text is not None:
        put("plot.svg", bundle.svg_text)
    return written


# --- subcommands -------------------------------------------------------------


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text!r} is not an unsigned 64-bit integer")
    return value


def _load_bound_config(args) -> BoundConfig:
    cfg = bounds.DEFAULT_CONFIG
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = parse_config(fh.read()).grid.bound_config
    psi = args.psi if args.psi is not None else cfg.psi
    K = args.K if args.K is not None else cfg.K
    return cfg.with_hypothesis(psi, K)


def cmd_sample(args) -> int:
    family, p = parse_family_token(args.family)
    if args.p is not None:
        if p is not None:
            raise ContractError("give the ball exponent either in the family token or via --p, not both")
        p = args.p
    spec = EnsembleSpec(family=family, n=args.n, N=args.N, seed=args.seed, p=p)
    save_matrix(sample_ensemble(spec), args.out)
    return 0


def cmd_deviation(args) -> int:
    report = operator_deviation(load_matrix(args.matrix))
    sys.stdout.write(_dump_json(report.to_json_dict()))
    return 0


def cmd_psi1(args) -> int:
    A = load_matrix(args.matrix)
    value = statistics.psi1_ensemble(A, args.directions)
    sys.stdout.write(
        _dump_json(
            {"psi1": value, "directions": args.directions, "n": A.n, "N": A.N, "seed": A.seed}
        )
    )
    return 0


def cmd_amnorm(args) -> int:
    A = load_matrix(args.matrix)
    profile = statistics.sparse_norm_profile(A, mode=args.mode)
    sys.stdout.write(_dump_json(profile.to_json_dict()))
    return 0


def cmd_net(args) -> int:
    net = statistics.build_net(args.n, args.epsilon)
    sys.stdout.write(_dump_json(net.to_json_dict()))
    return 0


def cmd_bounds(args) -> int:
    cfg = _load_bound_config(args)
    reports = bounds.evaluate_all(
        cfg, args.n, args.N, m=args.m, B=args.B, theta=args.theta, max_col_norm=args.max_col_norm
    )
    doc = {"config": cfg.to_json_dict(), "reports": [r.to_json_dict() for r in reports]}
    sys.stdout.write(_dump_json(doc))
    return 0


def cmd_experiment(args) -> int:
    with open(args.config) as fh:
        config = parse_config(fh.read())
    bundle = run_bundle(config)
    written = write_bundle(bundle, config)
    for path in written:
        sys.stderr.write(f"wrote {path}\n")
    return 0


def cmd_fit(args) -> int:
    fit = experiments.scaling_fit(read_results_csv(args.results))
    sys.stdout.write(_dump_json(fit.to_json_dict()))
    return 0


def cmd_plot(args) -> int:
    results = read_results_csv(args.results)
    fit = experiments.scaling_fit(results)
    cfg = _load_bound_config(args)
    svg = render_plot_svg(results, fit, cfg)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(svg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covcon",
        description="Empirical covariance concentration: sampling, spectra, envelopes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw an ensemble and write the binary matrix file")
    p.add_argument("--family", required=True)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--N", required=True, type=int)
    p.add_argument("--seed", required=True, type=_u64)
    p.add_argument("--p", type=float, default=None, help="lp ball exponent")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("deviation", help="spectral deviation report of a matrix file")
    p.add_argument("--matrix", required=True)
    p.set_defaults(handler=cmd_deviation)

    p = sub.add_parser("psi1", help="empirical psi_1 constant over basis plus probe directions")
    p.add_argument("--matrix", required=True)
    p.add_argument("--directions", type=int, default=experiments.PSI_PROBE_DIRECTIONS)
    p.set_defaults(handler=cmd_psi1)

    p = sub.add_parser("amnorm", help="sparse operator norm profile A_m")
    p.add_argument("--matrix", required=True)
    p.add_argument("--mode", choices=("exact", "greedy"), default="greedy")
    p.set_defaults(handler=cmd_amnorm)

    p = sub.add_parser("net", help="construct a sphere net and report it as JSON")
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--epsilon", required=True, type=float)
    p.set_defaults(handler=cmd_net)

    p = sub.add_parser("bounds", help="evaluate every applicable envelope formula")
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--N", required=True, type=int)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--max-col-norm", dest="max_col_norm", type=float, default=0.0)
    p.add_argument("--config", default=None, help="read constants from a run config file")
    p.add_argument("--psi", type=float, default=None)
    p.add_argument("--K", type=float, default=None)
    p.set_defaults(handler=cmd_bounds)

    p = sub.add_parser("experiment", help="run the configured grid and write the result bundle")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("fit", help="scaling-law fit from a results CSV")
    p.add_argument("--results", required=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("plot", help="render the log-log deviation plot from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="read constants from a run config file")
    p.add_argument("--psi", type=float, default=None)
    p.add_argument("--K", type=float, default=None)
    p.set_defaults(handler=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
