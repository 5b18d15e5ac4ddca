"""The two-action bandit where logged data argues for the wrong arm.

A latent binary context z drives both the rewards and the behavior policy's
choices.  Interventionally the second arm dominates for every prior over z,
yet the conditional means in the logged data rank the first arm higher --
and no amount of extra data fixes that.
"""

from fractions import Fraction

import hybench as hb
from hybench import oracle


def fmt(x):
    if isinstance(x, Fraction):
        return f"{x} = {float(x):.4f}"
    return f"{float(x):.4f}"


def main():
    spec = hb.BanditSpec()
    pi_b = oracle.confounding_behavior_policy()

    print("reward table P(r=1 | z, a):")
    for z in (0, 1):
        row = ", ".join(f"a{a}: {spec.reward_table[z][a]}" for a in (0, 1))
        print(f"  z={z}: {row}")
    print(f"P(z=0) = {spec.p_z0}, behavior picks a1 when z=0 and a0 when z=1\n")

    analysis = oracle.analyze_bandit(spec, pi_b)
    for a in (0, 1):
        print(
            f"a{a}: true value {fmt(analysis.true_values[a])}   "
            f"logged-data estimate {fmt(analysis.confounded_estimates[a])}"
        )
    print(f"\ninterventionally best arm: a{analysis.true_argmax}")
    print(f"arm the logged data favors: a{analysis.confounded_argmax}")

    print("\nempirical check (one million logged pulls per seed):")
    for seed in (0, 1, 2):
        emp = oracle.bandit_empirical_check(spec, pi_b, 1_000_000, seed=seed)
        print(
            f"  seed {seed}: mean(a0)={emp.means[0]:.4f} "
            f"mean(a1)={emp.means[1]:.4f} -> picks a{emp.argmax}"
        )


if __name__ == "__main__":
    main()
