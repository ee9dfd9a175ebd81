"""Run the full-week scenario and sweep the control parameter.

Produces the standard artifact set under the output directory: per-slot
records and a summary for the week run, plus a sweep CSV showing how total
cost and outage ratio move as the control parameter shrinks. Intended as a
one-command reproduction of the headline simulation results.

Usage: python3 scripts/week_experiment.py [--config CONFIG] [--out-dir DIR]
"""

import argparse
import os
from dataclasses import replace

from mgsched import (
    generate_traces,
    load_config,
    run,
    write_slot_records,
    write_summary,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/seven_day.yaml")
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--fractions", default="1.0,0.5,0.25",
                        help="comma-separated v fractions for the sweep")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    args = parser.parse_args()

    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    tag = os.path.splitext(os.path.basename(args.config))[0]

    traces = generate_traces(config)
    records, summary = run(config, traces)
    write_slot_records(records, os.path.join(args.out_dir, f"{tag}.slots.csv"),
                       len(config.batteries), len(config.residents))
    write_summary(summary, os.path.join(args.out_dir, f"{tag}.summary.txt"))
    print(f"{tag}: {summary.slots} slots at v={summary.v:g}")
    print(f"  total cost        {summary.total_cost:.2f}")
    print(f"  mean outage ratio "
          f"{sum(summary.outage_ratio) / len(summary.outage_ratio):.4f}")
    print(f"  violations        {sum(summary.violations.values())}")

    fractions = [float(tok) for tok in args.fractions.split(",") if tok.strip()]
    sweep_path = os.path.join(args.out_dir, f"{tag}.sweep.csv")
    print(f"\nsweep over v fractions {fractions}")
    print(f"{'fraction':>9} {'total_cost':>12} {'outage':>8}")
    with open(sweep_path, "w") as fh:
        fh.write("fraction,total_cost,mean_outage_ratio\n")
        for fraction in fractions:
            cfg = replace(config, v_fraction=fraction)
            _, s = run(cfg, traces, keep_records=False)
            outage = sum(s.outage_ratio) / len(s.outage_ratio)
            fh.write(f"{fraction!r},{s.total_cost!r},{outage!r}\n")
            print(f"{fraction:>9g} {s.total_cost:>12.2f} {outage:>8.4f}")
    print(f"\nwrote {sweep_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
