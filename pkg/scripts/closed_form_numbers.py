"""Print the closed-form resonator and coupling numbers checked by the acceptance suite."""

from mkthermo import physmodel as pm


def main():
    for f0, q, t in ((700.0, 14000, 6.1e-3), (700.0, 40000, 0.5e-3)):
        res = pm.ResonatorParams(f0, q, m_eff=1.5e-12)
        print(f"force noise  f0={f0:g} Hz Q={q:<6d} T={t * 1e3:.1f} mK : "
              f"{pm.force_noise_asd(res, t):.3e} N/rtHz")
    print(f"tip mass     d=7.3 um rho=7450 kg/m^3      : {pm.tip_mass(7.3e-6, 7450.0) * 1e12:.4f} ng")
    run_b = pm.ResonatorParams(669.7, 15400, m_eff=1.5e-12)
    tau = pm.correlation_time(run_b)
    print(f"tau          f0=669.7 Hz Q=15400           : {tau:.3f} s "
          f"({int(7200 // tau)} independent samples in 2 h)")
    for q, beta in ((13200, 1.8e-3), (15400, 1.0e-3)):
        print(f"Q beta^2     Q={q} beta={beta:g}        : {q * beta**2:.4f}")


if __name__ == "__main__":
    main()
