"""Pure numpy fallback for the compiled kernel in ``_ckernels.pyx``."""

import numpy as np


def coupled_generation(cdf_y, cdf_z, u, n_z):
    n_z = max(0, min(int(n_z), len(u)))
    ys = np.searchsorted(cdf_y, u, side="left").sum()
    zs = np.searchsorted(cdf_z, u[:n_z], side="left").sum()
    return int(zs), int(ys)
