# %% [markdown]
# # Rerun-budget correction
#
# Labels produced with a short rerun budget call some flaky failures
# persistent. The posterior-soft target replaces each all-fail label with the
# probability that a longer budget would have seen a pass.

# %%
import numpy as np

from scout import CostModel, bayes_threshold, fit_eb_prior, posterior_soft_target
from scout.evaluation import CalibrationSettings, CorrectionSettings, run_protocol
from scout.simulator import SimConfig, benchmark_summary, generate_benchmark

dataset = generate_benchmark(SimConfig(seed=3))
print(benchmark_summary(dataset))

# %% [markdown]
# ## The prior
# Pass counts over the first three reruns of every labeled failure are fitted
# with a beta-binomial by the method of moments.

# %%
traces = [r.rerun_trace for r in dataset if r.failed and r.labeled]
prior = fit_eb_prior(traces, R=3)
print(f"alpha={prior.alpha:.3f} beta={prior.beta:.3f} mean={prior.mean:.4f} fallback={prior.fallback}")

# an all-fail prefix of length 3, projected to a budget of 8
print("soft target:", round(posterior_soft_target([False] * 3, 8, prior), 4))
print("prefix with a pass:", posterior_soft_target([False, True, False], 8, prior))

# %% [markdown]
# ## Effect on the scorer
# Same features, same split; only the training targets differ. ECE is measured
# against the budget-8 label.

# %%
res = run_protocol(
    dataset,
    calibration_cfg=CalibrationSettings(methods=()),
    correction_cfg=CorrectionSettings(R_observed=3, R_oracle=8, modes=("naive", "posterior_soft")),
)
for name, row in res.rows.items():
    print(f"{name:22s} ECE={row.ece10:.3f}  cost@tau={row.cost_at_tau:7.1f}  auto={row.auto_rate:.2f}")

# %% [markdown]
# ## Threshold
# The decision threshold depends only on the cost model.

# %%
for c_fn in (4, 8, 16):
    print(c_fn, round(bayes_threshold(CostModel(c_fn=c_fn)), 3))
print("mean soft target:", np.mean([posterior_soft_target(t.outcomes[:3], 8, prior) for t in traces]))
