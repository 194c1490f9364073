"""Command-line entry point: list schemes, check tableaux, run experiments.

Exit codes: 0 success / target met, 1 target unmet, 2 usage or parse error,
3 runtime failure.  Experiment outputs are CSV (RFC 4180, header row, one
row per (scheme, h) or (scheme, t)) or JSON; both embed the effective
config and the library version for provenance.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field

from . import __version__
from .analysis import (
    DRIFT_CONSTANT_KINDS,
    drift_constant,
    energy_growth,
    moment_slope_oracle,
    ms_convergence,
)
from .errors import DomainError, SsrkError, StructureError
from .sde import double_well, harmonic_oscillator
from .tableau import (
    BUILTIN_SCHEMES,
    ORDER_TARGETS,
    Tableau,
    check_order_conditions,
    check_symplectic,
    make_builtin,
    tableau_from_json,
)

__all__ = ["main", "cmd_list_schemes", "cmd_check", "cmd_run", "ExperimentConfig", "parse_scheme_spec"]

EXIT_OK = 0
EXIT_TARGET_UNMET = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

EXPERIMENTS = ("convergence", "growth", "tableau_check", "drift_constants")

_EXACT_B1 = (-2.0 + math.sqrt(6.0)) / 6.0

_DEFAULT_PARAMS = {
    "srk_alpha1": [0.5],
    "ssrk_alpha1": [0.5],
    "ssrk_alpha1_b1": [0.5, _EXACT_B1],
}

_TARGET_VERDICT = {
    "ms_1_0": "order_1_0",
    "ms_1_5": "order_1_5",
    "ms_2_0_second_order": "order_2_0_second_order_systems",
    "symplectic": "symplectic",
}


def parse_scheme_spec(spec: str) -> Tableau:
    """Resolve a scheme specifier: builtin ``name`` / ``name:p1,p2`` or a
    path to a tableau JSON file."""
    if spec.endswith(".json") or os.path.sep in spec or os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fp:
            return tableau_from_json(fp.read())
    name, _, params_part = spec.partition(":")
    if name not in BUILTIN_SCHEMES:
        raise DomainError(
            f"unknown scheme specifier {spec!r}: not a builtin name and not a tableau JSON path"
        )
    if params_part:
        try:
            params = [float(x) for x in params_part.split(",")]
        except ValueError as exc:
            raise DomainError(f"bad parameters in scheme specifier {spec!r}: {exc}") from exc
    else:
        params = _DEFAULT_PARAMS.get(name, [])
    return make_builtin(name, params)


def _order_label(tab: Tableau) -> str:
    rep = check_order_conditions(tab, "ms_1_5")
    if rep.verdict == "order_1_5":
        rep2 = check_order_conditions(tab, "ms_2_0_second_order")
        if rep2.verdict == "order_2_0_second_order_systems":
            return "1.5 (2.0 second-order)"
        return "1.5"
    if rep.verdict == "order_1_0":
        return "1.0"
    return "below 1.0"


def cmd_list_schemes(stream=None) -> int:
    """Print the builtin schemes with verified order and symplecticity."""
    stream = stream or sys.stdout
    domains = {
        "euler_maruyama": "-",
        "midpoint": "-",
        "srk_alpha1": "alpha1 in (0,1)",
        "ssrk_alpha1": "alpha1 in (0,1)",
        "ssrk_alpha1_b1": "alpha1 in (0,1), |b1| < (2/3)sqrt((1-alpha1)/alpha1)",
    }
    for name in sorted(BUILTIN_SCHEMES):
        tab = make_builtin(name, _DEFAULT_PARAMS.get(name, []))
        sym = "yes" if check_symplectic(tab).verdict == "symplectic" else "no"
        params = _DEFAULT_PARAMS.get(name)
        sampled = f" [verified at {','.join(repr(p) for p in params)}]" if params else ""
        stream.write(
            f"{name}: params: {domains[name]}{sampled}; "
            f"ms order {_order_label(tab)}; symplectic: {sym}\n"
        )
    return EXIT_OK


def _print_report(report, header: str, stream) -> None:
    stream.write(f"{header}\n")
    for e in report.entries:
        status = "ok" if e.satisfied else "FAIL"
        stream.write(f"  {e.condition_id}: residual={e.residual:.3e} [{status}]\n")
    stream.write(f"  max |residual| = {report.max_abs_residual:.3e} (tol {report.tolerance:g})\n")
    stream.write(f"  verdict: {report.verdict}\n")


def cmd_check(source: str, target: str = "ms_1_5", tol: float = 1e-12, stream=None) -> int:
    """Check a tableau against an order target or symplecticity."""
    stream = stream or sys.stdout
    if target not in _TARGET_VERDICT:
        raise DomainError(f"unknown target {target!r}; expected one of {sorted(_TARGET_VERDICT)}")
    tab = parse_scheme_spec(source)
    if target == "symplectic":
        report = check_symplectic(tab, tol=tol)
    else:
        report = check_order_conditions(tab, target, tol=tol)
    _print_report(report, f"{tab.name or source}: target {target}", stream)
    return EXIT_OK if report.verdict == _TARGET_VERDICT[target] else EXIT_TARGET_UNMET


@dataclass
class ExperimentConfig:
    """Run configuration; a JSON object plus command-line overrides."""

    experiment: str
    system: dict = field(default_factory=dict)
    schemes: list = field(default_factory=list)
    h_list: list | None = None
    h: float | None = None
    T: float | None = None
    n_paths: int = 1000
    seed: int = 0
    reference_h: float | None = None
    record_stride: int | None = None
    target: str = "ms_1_5"
    drift: dict = field(default_factory=dict)
    output_path: str | None = None
    output_format: str = "csv"
    threads: int | None = None
    block_size: int = 512

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise StructureError("config must be a JSON object")
        known = {
            "experiment", "system", "schemes", "h_list", "h", "T", "n_paths", "seed",
            "reference_h", "record_stride", "target", "drift", "output", "threads", "block_size",
        }
        unknown = doc.keys() - known
        if unknown:
            raise StructureError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in doc:
            raise StructureError("config is missing 'experiment'")
        output = doc.get("output", {}) or {}
        cfg = cls(
            experiment=doc["experiment"],
            system=doc.get("system", {}) or {},
            schemes=list(doc.get("schemes", [])),
            h_list=doc.get("h_list"),
            h=doc.get("h"),
            T=doc.get("T"),
            n_paths=int(doc.get("n_paths", 1000)),
            seed=int(doc.get("seed", 0)),
            reference_h=doc.get("reference_h"),
            record_stride=doc.get("record_stride"),
            target=doc.get("target", "ms_1_5"),
            drift=doc.get("drift", {}) or {},
            output_path=output.get("path"),
            output_format=output.get("format", "csv"),
            threads=int(doc["threads"]) if "threads" in doc else None,
            block_size=int(doc.get("block_size", 512)),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise StructureError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.output_format not in ("csv", "json"):
            raise StructureError(f"output format must be 'csv' or 'json', got {self.output_format!r}")
        if self.experiment in ("convergence", "growth", "tableau_check") and not self.schemes:
            raise StructureError(f"experiment {self.experiment!r} needs a non-empty 'schemes' list")
        if self.experiment == "convergence" and not self.h_list:
            raise StructureError("convergence experiment needs 'h_list'")
        if self.experiment == "growth" and not self.h:
            raise StructureError("growth experiment needs 'h'")
        if self.experiment in ("convergence", "growth") and not self.T:
            raise StructureError(f"experiment {self.experiment!r} needs 'T'")
        if self.threads < 1:
            raise StructureError(f"threads must be >= 1, got {self.threads}")

    def as_dict(self) -> dict:
        doc = {
            "experiment": self.experiment,
            "system": self.system,
            "schemes": list(self.schemes),
            "n_paths": self.n_paths,
            "seed": self.seed,
            "target": self.target,
            "threads": self.threads,
            "block_size": self.block_size,
            "output": {"path": self.output_path, "format": self.output_format},
        }
        for key in ("h_list", "h", "T", "reference_h", "record_stride"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        if self.drift:
            doc["drift"] = self.drift
        return doc


def _build_system(system: dict):
    name = system.get("name")
    if name == "harmonic_oscillator":
        return harmonic_oscillator(
            sigma=float(system.get("sigma", 1.0)),
            p0=float(system.get("p0", 1.0)),
            q0=float(system.get("q0", 0.0)),
        )
    if name == "double_well":
        return double_well(
            sigma1=float(system.get("sigma1", 1.0)),
            sigma2=float(system.get("sigma2", 1.0)),
            p0=float(system.get("p0", 1.0)),
            q0=float(system.get("q0", 0.0)),
        )
    raise StructureError(f"unknown system {name!r}; expected harmonic_oscillator or double_well")


def _provenance(config: ExperimentConfig) -> str:
    return json.dumps(
        {"library_version": __version__, "config": config.as_dict()},
        sort_keys=True,
        separators=(",", ":"),
    )


def _write_csv(path: str, fieldnames: list[str], rows: list[dict], provenance: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=fieldnames + ["provenance"], lineterminator="\r\n")
        writer.writeheader()
        for i, row in enumerate(rows):
            row = dict(row)
            row["provenance"] = provenance if i == 0 else ""
            writer.writerow(row)


def _write_json(path: str, config: ExperimentConfig, results) -> None:
    payload = {
        "library_version": __version__,
        "config": config.as_dict(),
        "results": results,
    }
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")


def _emit(config: ExperimentConfig, fieldnames: list[str], rows: list[dict], results, stream) -> None:
    if not config.output_path:
        return
    if config.output_format == "csv":
        _write_csv(config.output_path, fieldnames, rows, _provenance(config))
    else:
        _write_json(config.output_path, config, results)
    stream.write(f"wrote {config.output_path}\n")


def _run_convergence(config: ExperimentConfig, schemes: list[Tableau], stream) -> int:
    sde, _ = _build_system(config.system)
    results = ms_convergence(
        sde,
        schemes,
        config.h_list,
        T=float(config.T),
        n_paths=config.n_paths,
        seed=config.seed,
        reference_h=config.reference_h,
        block_size=config.block_size,
        threads=config.threads,
    )
    rows = []
    for res in results:
        for h, rms, se in zip(res.step_sizes, res.rms_errors, res.rms_standard_errors):
            rows.append(
                {
                    "scheme": res.scheme,
                    "h": repr(h),
                    "rms_error": repr(rms),
                    "rms_se": repr(se),
                    "fitted_order": repr(res.fitted_order),
                    "order_se": repr(res.order_se),
                    "n_paths": res.n_paths,
                    "n_failed": res.n_failed,
                }
            )
    fieldnames = ["scheme", "h", "rms_error", "rms_se", "fitted_order", "order_se", "n_paths", "n_failed"]
    _emit(config, fieldnames, rows, [r.as_dict() for r in results], stream)
    for res in results:
        stream.write(
            f"{res.scheme}: fitted order {res.fitted_order:.3f} +/- {res.order_se:.3f} "
            f"(rms at h={res.step_sizes[-1]!r}: {res.rms_errors[-1]:.3e})\n"
        )
    return EXIT_OK


def _run_growth(config: ExperimentConfig, schemes: list[Tableau], stream) -> int:
    sde, law = _build_system(config.system)
    rows = []
    results = []
    for tab in schemes:
        res = energy_growth(
            sde,
            law,
            tab,
            h=float(config.h),
            T=float(config.T),
            n_paths=config.n_paths,
            seed=config.seed,
            record_stride=config.record_stride,
            block_size=config.block_size,
            threads=config.threads,
        )
        results.append(res)
        for t, v in zip(res.times, res.mean_h0):
            rows.append(
                {
                    "scheme": res.scheme,
                    "t": repr(t),
                    "mean_h0": repr(v),
                    "expected_mean": repr(law.expected_mean(t).item()),
                }
            )
        stream.write(
            f"{res.scheme}: fitted slope {res.fitted_slope:.6f} +/- {res.slope_se:.6f} "
            f"(exact-law slope {res.expected_slope:.6f})\n"
        )
    fieldnames = ["scheme", "t", "mean_h0", "expected_mean"]
    _emit(config, fieldnames, rows, [r.as_dict() for r in results], stream)
    return EXIT_OK


def _run_tableau_check(config: ExperimentConfig, schemes: list[Tableau], stream) -> int:
    rows = []
    results = []
    all_met = True
    for tab in schemes:
        order_rep = check_order_conditions(tab, config.target)
        sym_rep = check_symplectic(tab)
        met = order_rep.verdict == _TARGET_VERDICT[config.target]
        all_met = all_met and met
        results.append(
            {
                "scheme": tab.name,
                "target": config.target,
                "order_verdict": order_rep.verdict,
                "symplectic_verdict": sym_rep.verdict,
                "max_abs_residual": order_rep.max_abs_residual,
            }
        )
        for rep, kind in ((order_rep, "order"), (sym_rep, "symplectic")):
            for e in rep.entries:
                rows.append(
                    {
                        "scheme": tab.name,
                        "check": kind,
                        "condition": e.condition_id,
                        "residual": repr(e.residual),
                        "satisfied": e.satisfied,
                    }
                )
        _print_report(order_rep, f"{tab.name}: target {config.target}", stream)
        _print_report(sym_rep, f"{tab.name}: symplecticity", stream)
    fieldnames = ["scheme", "check", "condition", "residual", "satisfied"]
    _emit(config, fieldnames, rows, results, stream)
    return EXIT_OK if all_met else EXIT_TARGET_UNMET


def _drift_h_values(drift: dict) -> list[float]:
    if "h_values" in drift:
        return [float(h) for h in drift["h_values"]]
    grid = drift.get("h_grid", {"start": 0.05, "stop": 0.95, "count": 19})
    start, stop, count = float(grid["start"]), float(grid["stop"]), int(grid["count"])
    if count < 2 or not 0.0 < start < stop:
        raise StructureError("drift h_grid needs 0 < start < stop and count >= 2")
    return [start + i * (stop - start) / (count - 1) for i in range(count)]


def _run_drift_constants(config: ExperimentConfig, stream) -> int:
    drift = config.drift
    alphas = [float(a) for a in drift.get("alpha1_values", [0.3, 0.5, 0.7])]
    include_midpoint = bool(drift.get("include_midpoint", True))
    h_values = _drift_h_values(drift)
    curves: list[tuple[str, dict[float, float]]] = []
    for a1 in alphas:
        curves.append((f"ssrk_alpha1({a1!r})", {h: drift_constant("c_alpha1", h, [a1]) for h in h_values}))
    if include_midpoint:
        mid = make_builtin("midpoint")
        curves.append(("midpoint", {h: moment_slope_oracle(mid, 1.0, h) - 0.5 for h in h_values}))
    rows = []
    for label, values in curves:
        for h in h_values:
            c = values[h]
            rows.append({"scheme": label, "h": repr(h), "c": repr(c), "abs_c": repr(abs(c))})
    fieldnames = ["scheme", "h", "c", "abs_c"]
    results = [
        {"scheme": label, "h_values": h_values, "c_values": [values[h] for h in h_values]}
        for label, values in curves
    ]
    _emit(config, fieldnames, rows, results, stream)
    for label, values in curves:
        worst = max(abs(v) for v in values.values())
        stream.write(f"{label}: max |C(h)| over grid = {worst:.3e}\n")
    return EXIT_OK


def cmd_run(config: ExperimentConfig, stream=None) -> int:
    """Run the configured experiment; writes outputs and prints a summary."""
    stream = stream or sys.stdout
    # Resolve every scheme up front so bad references fail before simulation.
    schemes = [parse_scheme_spec(s) for s in config.schemes]
    if config.experiment == "convergence":
        return _run_convergence(config, schemes, stream)
    if config.experiment == "growth":
        return _run_growth(config, schemes, stream)
    if config.experiment == "tableau_check":
        return _run_tableau_check(config, schemes, stream)
    return _run_drift_constants(config, stream)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssrk",
        description="Stochastic symplectic Runge-Kutta schemes for additive-noise Hamiltonian systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list-schemes", help="print builtin schemes with verified order/symplecticity")
    p_check = sub.add_parser("check", help="check a tableau against an order or symplecticity target")
    p_check.add_argument("source", help="builtin specifier (name[:p1,p2]) or tableau JSON path")
    p_check.add_argument(
        "--target",
        default="ms_1_5",
        choices=list(ORDER_TARGETS) + ["symplectic"],
        help="verdict the tableau must reach (default ms_1_5)",
    )
    p_check.add_argument("--tol", type=float, default=1e-12, help="residual tolerance (default 1e-12)")
    p_run = sub.add_parser("run", help="run an experiment described by a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment config JSON")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--paths", type=int, help="override the config n_paths")
    p_run.add_argument("--out", help="override the output path")
    p_run.add_argument("--format", choices=["csv", "json"], help="override the output format")
    p_run.add_argument("--threads", type=int, help="worker threads (default: config, then all cores)")
    return parser


def _load_config(args) -> ExperimentConfig:
    with open(args.config, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise StructureError(f"invalid config JSON: {exc}") from exc
    config = ExperimentConfig.from_dict(doc)
    if args.seed is not None:
        config.seed = args.seed
    if args.paths is not None:
        config.n_paths = args.paths
    if args.out is not None:
        config.output_path = args.out
    if args.format is not None:
        config.output_format = args.format
    if args.threads is not None:
        config.threads = args.threads
    elif "threads" not in vars(args) or config.threads < 1:
        config.threads = os.cpu_count() or 1
    config.validate()
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list-schemes":
            return cmd_list_schemes()
        if args.command == "check":
            return cmd_check(args.source, target=args.target, tol=args.tol)
        config = _load_config(args)
    except (StructureError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return cmd_run(config)
    except SsrkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
