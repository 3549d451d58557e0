"""Monte Carlo check of the diffusion ELBO against a Gaussian log-density.

For a Gaussian data distribution the score is known in closed form, so the
lower bound should match log p(x) up to Monte Carlo error.

    python3 demos/elbo_check.py
"""

import numpy as np

from blindpty.priors import AnalyticGaussianScore, elbo_sde_samples, ve_schedule, vp_schedule

rng = np.random.default_rng(0)
for name, sch in (("VP", vp_schedule()), ("VE", ve_schedule())):
    for d in (2, 16):
        mean = rng.normal(0, 0.5, d)
        score = AnalyticGaussianScore(sch, mean, 0.5)
        x = mean + np.sqrt(0.5) * rng.standard_normal(d)
        s = elbo_sde_samples(score, x, sch, 10_000, rng=d)
        se = s.std(ddof=1) / np.sqrt(s.size)
        print(f"{name} d={d:2d}  ELBO {s.mean():9.3f} +- {se:.3f}   log p(x) {score.log_density(x):9.3f}")
