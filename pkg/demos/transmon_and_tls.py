"""From measured qubit frequencies to charge dispersion and TLS parameters.

Each transmon is calibrated from its 0-1 frequency and anharmonicity. The
charge dispersion then converts an RTN amplitude into a charge-offset jump,
and the switching-rate asymmetry fixes the TLS energy through detailed
balance.
"""
from qfluct.physics import (
    TransmonSpec,
    charge_dispersion_analytic,
    charge_dispersion_numerical,
    extract_charge_offset,
    tls_parameter_ranges,
)

GHZ = 1e9
qubits = {0: (5.030 * GHZ, -0.336 * GHZ), 2: (5.247 * GHZ, -0.334 * GHZ), 4: (5.092 * GHZ, -0.334 * GHZ)}

for q, (f0, alpha) in qubits.items():
    t = TransmonSpec.calibrated(f0, alpha)
    print(f"q{q}: E_C={t.E_C / GHZ:.4f} GHz  E_J/E_C={t.xi:.2f}  "
          f"dispersion analytic={charge_dispersion_analytic(t.E_C, t.xi) / 1e3:.1f} kHz  "
          f"numerical={charge_dispersion_numerical(t.E_C, t.E_J) / 1e3:.1f} kHz  "
          f"n01={t.matrix_element():.3f}")

# A slow RTN on qubit 0 with mean splitting 10.7 kHz, above a 50.6 kHz maximum
# dispersion: the splitting maps to an offset charge of about 0.2 e.
n_g, clipped = extract_charge_offset([10.7e3], 50.6e3)
print(f"\ncharge offset for 10.7 kHz splitting: {n_g[0]:.3f} (clipped: {bool(clipped[0])})")

# TLS parameters over dielectric thickness 1-2 nm and temperature 10-100 mK.
q0 = TransmonSpec.calibrated(*qubits[0])
ranges = tls_parameter_ranges(0.0014, 10.7e3, nu_10=0.028, nu_01=0.0044, transmon=q0)
for key, (lo, hi) in ranges.items():
    scale, unit = (1.0, "e*A") if key == "d_parallel" else (GHZ, "GHz")
    print(f"{key:>10}: {lo / scale:.3g} .. {hi / scale:.3g} {unit}")
