#!/usr/bin/env python3
"""Replay the built-in scenarios and print the cost analysis: actual charges,
3-year-reserved counterfactuals, and the service-category breakdown."""

import argparse

from batchsim.billing import counterfactual, render_report, report, usd_str
from batchsim.catalog import PricingPlan
from batchsim.scenarios import builtin_scenarios, run_scenario


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print("scenario\tnodes\thours\tvm_usd\ttotal_usd\treserved_3yr_usd")
    runs = {}
    for scenario in builtin_scenarios():
        run = run_scenario(scenario, args.seed)
        runs[scenario.name] = run
        reserved = counterfactual(run.service.ledger, PricingPlan.RESERVED_3YR)
        print(f"{scenario.name}\t{scenario.pool.dedicated_count}\t"
              f"{scenario.expected_wall_hours}\t{usd_str(run.vm_cost, 4)}\t"
              f"{usd_str(run.total_cost, 4)}\t{usd_str(reserved, 4)}")

    fine = runs["snake3d_fine"].vm_cost
    coarse = runs["snake3d"].vm_cost
    print(f"\nfine-grid / coarse-grid cost ratio: {float(fine / coarse):.2f}")

    print("\n# service-category breakdown of the snake3d run")
    print(render_report(report(runs["snake3d"].service.ledger)).rstrip())


if __name__ == "__main__":
    main()
