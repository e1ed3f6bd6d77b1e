"""Thermometry of high-Q mechanical resonators read out by a SQUID.

Modules: ``physmodel`` (parameters and closed-form relations), ``simkit``
(synthetic data), ``dsp``, ``lockin``, ``thermo`` (cantilever
temperature), ``mfft`` (flux-noise thermometer), ``dispcal``
(displacement calibration), ``analysis`` (run fits and reports) and
``cli``.
"""

__version__ = "0.1.0"
