"""Experiment runner: seeded sweeps, statevector baselines, mapping checks, POVM benchmarks.

Every command writes plot-ready CSV (schema version in a leading ``#`` line)
plus a ``manifest.json`` with the resolved configuration and input hashes.
Outputs contain no timestamps, so reruns with the same seeds are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import (AdaptConfig, AnsatzState, CnotCosts, StopMode, iteration_csv, run_adapt,
                    setup_problem)
from .fermion import FCIDumpError, MappingScheme, build_hamiltonian, fixture_path, ladder, parse_fcidump
from .pauli import PauliSum, anticommutator
from .povm import (MeasurementSchedule, POVMOptimiserSettings, ProductPOVM, exact_moments,
                   optimise_povm, trace_csv)
from .simulator import sample_povm

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_BUDGET = 0, 1, 2, 3
BUNDLED = {"h2", "h4"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    fcidump: str = "h4"
    mapping: str = "JW"
    pool: str = "QEB"
    energy_thresholds: list[float] = field(default_factory=lambda: [1.6e-3, 5e-3, 8e-3, 10e-3])
    gradient_thresholds: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3])
    realisations: int = 10
    seed: int = 0
    max_iterations: int = 50
    target_error: float = 1e-3
    gradient_floor: float = 1e-3
    optimise_every: int = 1
    schedule: MeasurementSchedule = field(default_factory=lambda: MeasurementSchedule(max_shots=20_000_000))
    povm: POVMOptimiserSettings = field(default_factory=POVMOptimiserSettings)
    costs: CnotCosts = field(default_factory=CnotCosts)
    schemes: list[str] = field(default_factory=lambda: ["JW", "BK", "JKMN"])
    bench_snapshots: list[int] = field(default_factory=lambda: [0, 4, 8])
    bench_shots: int = 200_000

    def __post_init__(self):
        if self.realisations < 1:
            raise ConfigError("realisations must be at least 1")
        if any(not t > 0 for t in self.energy_thresholds):
            raise ConfigError("energy thresholds must be positive")
        if any(not 0 < t < 1 for t in self.gradient_thresholds):
            raise ConfigError("gradient thresholds must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        try:
            MappingScheme.parse(self.mapping)
            for s in self.schemes:
                MappingScheme.parse(s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def stop_modes(self) -> list[StopMode]:
        return ([StopMode.energy(t) for t in self.energy_thresholds]
                + [StopMode.gradient(t) for t in self.gradient_thresholds])

    def adapt_config(self, mode: StopMode, seed: int) -> AdaptConfig:
        return AdaptConfig(stop_mode=mode, max_iterations=self.max_iterations,
                           gradient_floor=self.gradient_floor, target_error=self.target_error,
                           schedule=self.schedule, povm_settings=self.povm,
                           optimise_every=self.optimise_every, seed=seed, cnot_costs=self.costs)

    def to_dict(self) -> dict:
        return asdict(self)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def load_spec(path: str | Path | None, overrides: dict | None = None) -> ExperimentSpec:
    """Read an INI file; unknown keys are rejected so typos surface early."""
    cp = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    kw: dict = {}
    try:
        if cp.has_section("experiment"):
            sec = cp["experiment"]
            for key, value in sec.items():
                if key in ("fcidump", "mapping", "pool"):
                    kw[key] = value.strip()
                elif key in ("energy_thresholds", "gradient_thresholds"):
                    kw[key] = _floats(value)
                elif key in ("realisations", "seed", "max_iterations", "optimise_every", "bench_shots"):
                    kw[key] = int(value)
                elif key in ("target_error", "gradient_floor"):
                    kw[key] = float(value)
                elif key == "schemes":
                    kw[key] = [s.strip() for s in value.split(",") if s.strip()]
                elif key == "bench_snapshots":
                    kw[key] = [int(v) for v in value.split(",") if v.strip()]
                else:
                    raise ConfigError(f"unknown key [experiment] {key}")
        if cp.has_section("schedule"):
            s = cp["schedule"]
            kw["schedule"] = MeasurementSchedule(s.getint("initial_batch", 512),
                                                 s.getfloat("growth_factor", 1.5),
                                                 s.getint("max_shots", 20_000_000))
        if cp.has_section("povm"):
            s = cp["povm"]
            kw["povm"] = POVMOptimiserSettings(s.getfloat("fd_step", 1e-3), s.getfloat("step0", 1.0),
                                               s.getint("halvings", 12), s.getint("max_increases", 10),
                                               s.getboolean("optimise", True))
        if cp.has_section("costs"):
            s = cp["costs"]
            kw["costs"] = CnotCosts(s.getint("qeb_single", 2), s.getint("qeb_double", 13))
        extra = set(cp.sections()) - {"experiment", "schedule", "povm", "costs"}
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        kw.update(overrides or {})
        return ExperimentSpec(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _read_input(name: str) -> tuple[str, bytes]:
    """FCIDUMP text plus its identity; bundled names resolve to package data."""
    if name.lower() in BUNDLED:
        p = fixture_path(name.lower())
    else:
        p = Path(name)
    return str(p), p.read_bytes()


def _load_integrals(spec: ExperimentSpec):
    _, raw = _read_input(spec.fcidump)
    return parse_fcidump(raw)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def write_manifest(out: Path, command: str, spec: ExperimentSpec, extra: dict | None = None):
    path, raw = _read_input(spec.fcidump)
    manifest = {
        "command": command,
        "version": __version__,
        "config": spec.to_dict(),
        "inputs": {Path(path).name: hashlib.sha256(raw).hexdigest()},
    }
    manifest.update(extra or {})
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def realisation_seed(base: int, label: str, r: int) -> int:
    """Independent per-(threshold, realisation) seed, stable across thread counts."""
    digest = hashlib.sha256(f"{base}:{label}:{r}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# run ------------------------------------------------------------------------------

def _one_realisation(args):
    spec, mode, seed = args
    problem = setup_problem(_load_integrals(spec), spec.mapping, spec.pool)
    result = run_adapt(problem.hamiltonian, problem.pool, spec.adapt_config(mode, seed),
                       problem.reference, problem.exact_energy)
    trace_rows = []
    for it, trace in enumerate(result.povm_traces, start=1):
        body = trace_csv(trace).splitlines()[2:]
        trace_rows += [f"{it},{row}" for row in body]
    return (iteration_csv(result), result.ansatz.manifest(problem.pool, spec.costs),
            "\n".join(trace_rows), result.reason)


def _map(fn, jobs, threads: int):
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs))


def cmd_run(spec: ExperimentSpec, out: Path, threads: int = 1) -> int:
    jobs, names = [], []
    for mode in spec.stop_modes():
        for r in range(spec.realisations):
            jobs.append((spec, mode, realisation_seed(spec.seed, mode.label, r)))
            names.append((mode.label, r))
    results = _map(_one_realisation, jobs, threads)
    incomplete = False
    for (label, r), (log_csv, ansatz, traces, reason) in zip(names, results):
        base = out / "runs" / label
        _write(base / f"seed_{r:02d}.csv", log_csv)
        _write(base / f"seed_{r:02d}_ansatz.txt", ansatz)
        _write(base / f"seed_{r:02d}_povm_trace.csv",
               "# schema: aimadapt-povm-trace v1\niteration,batch,shots,energy,std_error,eps_E,step,events\n"
               + traces + ("\n" if traces else ""))
        incomplete |= reason == "budget_exhausted"
    aggregate_directory(out)
    write_manifest(out, "run", spec, {"seeds": {f"{l}/{r}": j[2] for (l, r), j in zip(names, jobs)}})
    return EXIT_BUDGET if incomplete else EXIT_OK


def _read_logs(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8")
    return list(csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#")))


def _read_footer(path: Path) -> dict:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# ") and not line.startswith("# schema"):
            key, _, value = line[2:].partition(" ")
            out[key] = value
    return out


def aggregate_directory(out: Path):
    """Recompute all aggregate CSVs from the per-realisation logs under ``out/runs``."""
    runs = sorted(p for p in (out / "runs").iterdir() if p.is_dir()) if (out / "runs").exists() else []
    by_iter = ["# schema: aimadapt-error-vs-iteration v1 (finished runs carry their final error forward)",
               "threshold,iteration,n_runs,mean_error,std_error"]
    by_shots = ["# schema: aimadapt-error-vs-shots v1", "threshold,seed,iteration,cumulative_shots,error"]
    cnots = ["# schema: aimadapt-cnot-distribution v1",
             "threshold,seed,iterations,cnot_count,final_error,cumulative_shots,converged"]
    for run in runs:
        curves = []
        for logf in sorted(run.glob("seed_??.csv")):
            seed = logf.stem.split("_")[1]
            rows = _read_logs(logf)
            errors = [float(r["error"]) for r in rows if r["error"] and r["chosen_id"] != "-1"]
            for r in rows:
                if r["error"]:
                    by_shots.append(f"{run.name},{seed},{r['iteration']},{r['cumulative_shots']},{r['error']}")
            curves.append(errors)
            ansatz = run / f"seed_{seed}_ansatz.txt"
            footer = _read_footer(ansatz)
            n_gates = sum(1 for line in ansatz.read_text().splitlines()
                          if line and line[0].isdigit())
            final = errors[-1] if errors else math.nan
            shots = rows[-1]["cumulative_shots"] if rows else 0
            converged = bool(errors) and final < 1.6e-3
            cnots.append(f"{run.name},{seed},{n_gates},{footer.get('cnot_count', '')},"
                         f"{final:.6e},{shots},{int(converged)}")
        longest = max((len(c) for c in curves), default=0)
        for it in range(longest):
            vals = np.array([c[min(it, len(c) - 1)] for c in curves if c])
            se = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            by_iter.append(f"{run.name},{it + 1},{len(vals)},{vals.mean():.6e},{se:.6e}")
    _write(out / "error_vs_iteration.csv", "\n".join(by_iter) + "\n")
    _write(out / "error_vs_shots.csv", "\n".join(by_shots) + "\n")
    _write(out / "cnot_distribution.csv", "\n".join(cnots) + "\n")


# exact-baseline -----------------------------------------------------------------

def cmd_exact_baseline(spec: ExperimentSpec, out: Path) -> int:
    problem = setup_problem(_load_integrals(spec), spec.mapping, spec.pool)
    cfg = spec.adapt_config(StopMode.statevector(), spec.seed)
    result = run_adapt(problem.hamiltonian, problem.pool, cfg, problem.reference, problem.exact_energy)
    _write(out / "baseline.csv", iteration_csv(result, include_gradients=False))
    _write(out / "baseline_ansatz.txt", result.ansatz.manifest(problem.pool, spec.costs))
    summary = {"iterations": result.iterations, "cnot_count": result.cnot_count,
               "final_energy": result.final_energy, "exact_energy": problem.exact_energy,
               "final_error": result.error, "reason": result.reason}
    _write(out / "baseline.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "exact-baseline", spec)
    print(f"baseline: {result.iterations} iterations, error {result.error:.3e} Ha, "
          f"{result.cnot_count} CNOTs ({result.reason})")
    return EXIT_OK


# map-check ------------------------------------------------------------------------

def car_residual(scheme, n: int) -> float:
    """Largest coefficient left in ``{a_p, a_q^dag} - delta_pq`` and ``{a_p, a_q}``."""
    worst = 0.0
    ident = PauliSum.identity(n)
    for p in range(n):
        for q in range(n):
            r1 = anticommutator(ladder(p, False, scheme, n), ladder(q, True, scheme, n))
            if p == q:
                r1 = r1 - ident
            r2 = anticommutator(ladder(p, False, scheme, n), ladder(q, False, scheme, n))
            for r in (r1, r2):
                worst = max(worst, max((abs(c) for _, c in r.items()), default=0.0))
    return worst


def cmd_map_check(spec: ExperimentSpec, out: Path) -> int:
    ints = _load_integrals(spec)
    n = ints.n_spin_orbitals
    rows = ["# schema: aimadapt-map-check v1", "scheme,car_residual,spectrum_max_dev,n_terms,max_weight,car_ok,spectrum_ok"]
    hist = ["# schema: aimadapt-weight-histogram v1", "scheme,weight,count"]
    reference = None
    ok = True
    for name in spec.schemes:
        scheme = MappingScheme.parse(name)
        h = build_hamiltonian(ints, scheme)
        evals = np.linalg.eigvalsh(h.to_matrix())
        if reference is None:
            reference = evals
        dev = float(np.max(np.abs(evals - reference)))
        car = car_residual(scheme, n)
        weights = [st.weight for st in h.strings()]
        counts = np.bincount(weights, minlength=n + 1)
        for w, c in enumerate(counts):
            hist.append(f"{scheme.value},{w},{c}")
        car_ok, spec_ok = car < 1e-10, dev < 1e-9
        ok &= car_ok and spec_ok
        rows.append(f"{scheme.value},{car:.3e},{dev:.3e},{len(h)},{max(weights)},{int(car_ok)},{int(spec_ok)}")
        print(f"{scheme.value:5s} CAR residual {car:.1e}  spectrum dev {dev:.1e}  "
              f"max weight {max(weights)}  {'ok' if car_ok and spec_ok else 'FAIL'}")
    _write(out / "map_check.csv", "\n".join(rows) + "\n")
    _write(out / "weight_histogram.csv", "\n".join(hist) + "\n")
    write_manifest(out, "map-check", spec)
    return EXIT_OK if ok else EXIT_RUNTIME


# povm-bench -----------------------------------------------------------------------

class _Never:
    needs_observables = False

    def __call__(self, energy, observables):
        return False


def bench_trace(h, state, settings, schedule, seed, prior=None):
    def sampler(povm, n, rng):
        return sample_povm(state, povm, n, rng)

    return optimise_povm(h, sampler, schedule, _Never(), prior=prior, rng=np.random.default_rng(seed),
                         settings=settings)


def cmd_povm_bench(spec: ExperimentSpec, out: Path) -> int:
    problem = setup_problem(_load_integrals(spec), spec.mapping, spec.pool)
    h = problem.hamiltonian
    base = run_adapt(h, problem.pool, spec.adapt_config(StopMode.statevector(), spec.seed),
                     problem.reference, problem.exact_energy)
    schedule = MeasurementSchedule(spec.schedule.initial_batch, spec.schedule.growth_factor, spec.bench_shots)
    lines = ["# schema: aimadapt-povm-bench v1 (shot_noise_ref = first-batch std_error * sqrt(S0/S))",
             "state,variant,batch,shots,energy,std_error,eps_E,shot_noise_ref,exact_eps_E_final,events"]
    prior = None
    for k in spec.bench_snapshots:
        k = min(k, base.iterations)
        state = AnsatzState(problem.reference, base.ansatz.gates[:k]).state(problem.pool)
        label = "hf" if k == 0 else f"iter{k}"
        variants = [("sic", POVMOptimiserSettings(optimise=False), None),
                    ("optimised", spec.povm, None)]
        if prior is not None:
            variants.append(("recycled", spec.povm, prior))
        for name, settings, start in variants:
            seed = realisation_seed(spec.seed, f"bench:{label}:{name}", 0)
            res = bench_trace(h, state, settings, schedule, seed, start)
            _, exact_eps = exact_moments(h, res.best_povm, state)
            s0, e0 = res.trace[0].shots, res.trace[0].std_error
            for row in res.trace:
                ref = e0 * math.sqrt(s0 / row.shots)
                lines.append(f"{label},{name},{row.batch},{row.shots},{row.energy:.10g},{row.std_error:.6e},"
                             f"{row.eps_E:.6e},{ref:.6e},{exact_eps:.6e},{row.events}")
            if name == "optimised":
                prior = res.best_povm
        sic_exact = exact_moments(h, ProductPOVM.sic(h.n_qubits), state)[1]
        print(f"{label}: exact eps_E with SIC {sic_exact:.4f}")
    _write(out / "povm_bench.csv", "\n".join(lines) + "\n")
    write_manifest(out, "povm-bench", spec)
    return EXIT_OK


# entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aimadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "exact-baseline", "map-check", "povm-bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI file with [experiment], [schedule], [povm], [costs]")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--realisations", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in (("seed", args.seed), ("realisations", args.realisations)) if v is not None}
    try:
        spec = load_spec(args.config, overrides)
        _read_input(spec.fcidump)
    except (ConfigError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("invalid config: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return cmd_run(spec, args.out, args.threads)
        if args.command == "exact-baseline":
            return cmd_exact_baseline(spec, args.out)
        if args.command == "map-check":
            return cmd_map_check(spec, args.out)
        return cmd_povm_bench(spec, args.out)
    except FCIDumpError as exc:
        print(f"FCIDUMP error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure exit code
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
