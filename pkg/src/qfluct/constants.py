"""Physical constants (CODATA 2018, exact SI definitions) and device defaults."""

import numpy as np

PLANCK_H = 6.62607015e-34  # J s, exact
BOLTZMANN_K = 1.380649e-23  # J / K, exact
ELEMENTARY_CHARGE = 1.602176634e-19  # C, exact
ANGSTROM = 1e-10  # m

# Per-circuit overhead: gates, readout and reset.
T_OTHER_DEFAULT = 12.3e-6

#: Default idle-time grid: 33 uniformly spaced delays up to 68.3 us.
DEFAULT_IDLE_TIMES = np.linspace(0.0, 68.3e-6, 33)
DEFAULT_REPETITIONS_PER_SCRIPT = 20_000
DEFAULT_N_SCRIPTS = 100
