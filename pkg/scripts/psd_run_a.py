"""Welch PSD of a long simulated run-A record, Lorentzian fit and equipartition check."""

import argparse

import numpy as np

from mkthermo import dsp, simkit
from mkthermo import physmodel as pm
from mkthermo.svg import Figure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=20_300.0, help="s")
    ap.add_argument("--temperature", type=float, default=6.1e-3, help="K")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--svg", default="psd_run_a.svg")
    args = ap.parse_args()

    res = pm.ResonatorParams(746.6, 13200, m_eff=1.5e-12)
    kappa = 1 / 9.6e-6
    cfg = simkit.SimConfig(res, args.temperature, kappa, 3e-7, 3000.0, args.duration, args.seed)
    ts = simkit.simulate_thermal_trace(cfg)
    spec = dsp.welch_psd(ts, 1 << 20)
    lw = res.linewidth_hz
    fit = dsp.fit_lorentzian(spec, (res.f0 - 25 * lw, res.f0 + 25 * lw))
    expected = kappa**2 * pm.K_B * args.temperature / res.stiffness
    print(f"f0     {fit.center:.5f} Hz (true {res.f0})")
    print(f"gamma  {fit.width:.5f} Hz (true {lw:.5f})")
    print(f"area   {fit.area:.5g} V^2 (equipartition {expected:.5g}, ratio {fit.area / expected:.4f})")
    print(f"Parseval: PSD integral / variance = {spec.total_power() / np.var(ts.samples):.5f}")

    sel = (spec.freqs > res.f0 - 25 * lw) & (spec.freqs < res.f0 + 25 * lw)
    fig = Figure("Run-A thermal peak", "frequency - f0 (Hz)", "PSD (V^2/Hz)", ylog=True)
    fig.scatter(spec.freqs[sel] - res.f0, spec.values[sel], radius=1.5, label="Welch")
    fig.line(spec.freqs[sel] - res.f0, fit(spec.freqs[sel]), label="Lorentzian")
    fig.save(args.svg)
    print(f"wrote {args.svg}")


if __name__ == "__main__":
    main()
