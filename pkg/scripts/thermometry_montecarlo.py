"""Monte Carlo of the lock-in thermometry chain on a simulated run-B resonator.

One line per seed: mean-energy and slope temperatures, their uncertainties,
and the Boltzmann band fractions at the measured and at twice the measured
temperature.
"""

import argparse
import math

from mkthermo import lockin, simkit, thermo
from mkthermo import physmodel as pm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--temperature", type=float, default=10.3e-3, help="K")
    ap.add_argument("--duration", type=float, default=7200.0, help="s")
    ap.add_argument("--bins", type=int, default=100, help="histogram bins for the band check")
    args = ap.parse_args()

    res = pm.ResonatorParams(669.7, 15400, m_eff=1.5e-12)
    kappa = 5.26e4
    tau = pm.correlation_time(res)
    bound = 3 * math.sqrt(tau / args.duration) * args.temperature
    print("# seed T_mean_mK dT_mean_mK T_slope_mK dT_slope_mK band band_2x agree")
    ok = 0
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        cfg = simkit.SimConfig(res, args.temperature, kappa, 3e-7, 2800.0, args.duration, seed)
        trace = lockin.energy_trace(simkit.simulate_thermal_trace(cfg),
                                    lockin.LockinConfig(res.f0), res, kappa)
        mean = thermo.temperature_from_mean(trace, tau)
        slope = thermo.temperature_from_slope(thermo.make_histogram(trace, tau))
        hist = thermo.make_histogram(trace, tau, args.bins)
        band = thermo.boltzmann_band_check(hist, mean).fraction
        hot = thermo.boltzmann_band_check(hist, 2 * mean.value).fraction
        agree = thermo.estimates_agree(mean, slope)
        ok += agree and abs(mean.value - args.temperature) <= bound
        print(f"{seed:4d} {mean.value * 1e3:8.4f} {mean.statistical_uncertainty * 1e3:7.4f} "
              f"{slope.value * 1e3:8.4f} {slope.statistical_uncertainty * 1e3:7.4f} "
              f"{band:5.3f} {hot:5.3f} {agree}", flush=True)
    print(f"# recovered within {bound * 1e3:.2f} mK with agreeing methods: {ok}/{args.seeds}")


if __name__ == "__main__":
    main()
