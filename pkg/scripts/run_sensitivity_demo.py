"""Sensitivities of a two-asset market in a drift-and-rate direction.

Prints the weak/strong value surface, both derivative formulas checked
against central differences, and the weak-minus-strong contrast, all on
one path ensemble.  Runs in a few seconds; --paths / --steps rescale it.
"""

import argparse

from portsens import utility as ut
from portsens.market import MarketModel, constant, scalar_constant
from portsens.paths import TimeGrid, simulate
from portsens.sensitivity import gap_report, sensitivity_report
from portsens.valuation import PerturbationSpec, value_surface


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=40_000)
    ap.add_argument("--steps", type=int, default=64)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    model = MarketModel(d=2, n=2,
                        mu=constant([0.08, 0.05]),
                        sigma=constant([[0.2, 0.05], [0.0, 0.15]]),
                        rate=constant([0.01]))
    u = ut.power_utility(3.0)
    pert = PerturbationSpec(dmu=constant([0.04, 0.02]),
                            drate=scalar_constant(0.01))
    ens = simulate(TimeGrid(1.0, args.steps), n=2, M=args.paths,
                   seed=args.seed)

    print(f"two-asset market, power p=3, direction {pert.label}, "
          f"{ens.count} paths, seed {ens.seed}")
    print("\nvalue surface (weak | strong):")
    for row in value_surface(model, u, pert, [0.0, 0.1, 0.2], ens):
        print(f"  tau={row.tau:4.2f}  {row.weak.mean:.6f} "
              f"(se {row.weak.se:.2g})  |  {row.strong.mean:.6f} "
              f"(se {row.strong.se:.2g})")

    print("\nderivative formulas vs central differences:")
    for side in ("weak", "strong"):
        print(" ", sensitivity_report(model, u, pert, ens, side=side).line())

    gap = gap_report(model, u, pert, ens)
    print(f"\nweak minus strong derivative: {gap.gap:+.6f} "
          f"(se {gap.se:.2g}, {gap.sigmas_from_zero:.2f} sigma from zero)")
    print("deterministic coefficients, so the two formulations agree "
          "within Monte Carlo error")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
