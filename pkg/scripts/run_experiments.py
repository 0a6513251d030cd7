"""Run every CLI campaign for one config into a single output tree.

    python scripts/run_experiments.py --config scripts/default.ini --out results/h4

Subdirectories: map_check/, baseline/, povm_bench/ and run/. Mapping baselines for
BK and JKMN (fermionic pool) are written under baseline_<scheme>/.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from aimadapt.cli import (EXIT_BUDGET, EXIT_OK, cmd_exact_baseline, cmd_map_check, cmd_povm_bench, cmd_run,
                          load_spec)

HERE = Path(__file__).resolve().parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=HERE / "default.ini")
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--skip", nargs="*", default=[], choices=["map-check", "baseline", "bench", "run"])
    args = ap.parse_args(argv)

    spec = load_spec(args.config)
    steps = [
        ("map-check", lambda: cmd_map_check(spec, args.out / "map_check")),
        ("baseline", lambda: cmd_exact_baseline(spec, args.out / "baseline")),
    ]
    for scheme in spec.schemes:
        if scheme.upper() != spec.mapping.upper():
            other = replace(spec, mapping=scheme, pool="FERMIONIC")
            steps.append(("baseline", lambda s=other: cmd_exact_baseline(s, args.out / f"baseline_{s.mapping}")))
    steps += [
        ("bench", lambda: cmd_povm_bench(spec, args.out / "povm_bench")),
        ("run", lambda: cmd_run(spec, args.out / "run", args.threads)),
    ]
    worst = EXIT_OK
    for name, step in steps:
        if name in args.skip:
            continue
        t0 = time.perf_counter()
        code = step()
        print(f"[{name}] exit {code} in {time.perf_counter() - t0:.1f} s", flush=True)
        if code not in (EXIT_OK, EXIT_BUDGET):
            return code
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
