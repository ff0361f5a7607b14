import numpy as np
from scipy import stats


def offspring_chi_square(model, x, u, top=12, min_expected=5.0):
    """p-value of quantile-sampled offspring against ``pmf(x, .)``.

    Cells with small expected counts are pooled into one tail cell; a law
    concentrated on one cell returns 1.0 when every draw lands there.
    """
    draws = model.quantile(x, u)
    observed = np.bincount(np.minimum(draws, top), minlength=top + 1)[: top + 1]
    p = np.asarray(model.pmf(x, np.arange(top)), dtype=float)
    expected = np.append(p, max(1.0 - p.sum(), 0.0)) * len(u)
    keep = expected > min_expected
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < min_expected:
        if obs[-1] > 0 and exp[-1] == 0:
            return 0.0
        obs = obs[:-1].astype(float)
        exp = exp[:-1] * obs.sum() / exp[:-1].sum()
    if len(obs) == 1:
        return 1.0 if obs[0] == len(u) else 0.0
    return float(stats.chisquare(obs, exp).pvalue)
