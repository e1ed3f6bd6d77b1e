"""Monte Carlo of the MFFT chain: interference mask, linear calibration, hold-out interval."""

import argparse
import dataclasses

import numpy as np

from mkthermo import mfft, simkit
from mkthermo.simkit import InterferencePeak, MfftSimConfig

PEAK_FREQS = (1000.0, 1732.0, 2500.0, 3999.0, 5210.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--mask-spectra", type=int, default=1000)
    ap.add_argument("--holdout", type=float, default=3.2e-3, help="K")
    args = ap.parse_args()

    base = MfftSimConfig(interference_peaks=tuple(InterferencePeak(f, 0.03, 0.0)
                                                  for f in PEAK_FREQS))
    f = np.linspace(*base.band, 400_001)
    slope_true = np.trapezoid(base.thermal_shape(f), f)
    cal_t = np.geomspace(15e-3, 1.0, 20)
    print("# seed masked_bins peaks_found slope_rel_err T_hold_mK 2sigma_mK")
    for seed in range(args.seeds):
        cfg = dataclasses.replace(base, rng_seed=seed)
        mask = mfft.build_mask(simkit.simulate_mfft_spectra(cfg, np.full(args.mask_spectra, 3e-3)),
                               min_spectra=args.mask_spectra)
        found = sum(np.any(np.abs(mask.masked_frequencies - p) <= base.freq_resolution)
                    for p in PEAK_FREQS)
        ref = simkit.simulate_mfft_spectra(dataclasses.replace(cfg, rng_seed=seed + 1000), cal_t)
        cal = mfft.calibrate(zip(ref, cal_t), mask)
        hold = simkit.simulate_mfft_spectra(dataclasses.replace(cfg, rng_seed=seed + 2000),
                                            np.full(119, args.holdout))
        it = mfft.interval_uncertainty(hold, cal)
        print(f"{seed:4d} {len(mask):4d} {found}/{len(PEAK_FREQS)} "
              f"{cal.slope / slope_true - 1:+.4f} {it.mean * 1e3:.4f} {it.total_two_sigma * 1e3:.4f}",
              flush=True)


if __name__ == "__main__":
    main()
