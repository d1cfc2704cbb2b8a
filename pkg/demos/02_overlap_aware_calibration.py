# %% [markdown]
# # Overlap-aware calibration
#
# Importance weights help only when the source calibration set covers the
# target. OA-Cal measures overlap with a domain classifier and stops
# weighting when the overlap is poor.

# %%
import numpy as np
from scipy.special import expit

from scout import CostModel, OACalConfig, decision_cost, oa_cal_scores, overlap_diagnostics

rng = np.random.default_rng(0)
cost = CostModel()


def labels(s):
    return (rng.random(s.size) < expit(1.3 * np.log(s / (1 - s)) - 0.8)).astype(float)


# %% [markdown]
# ## Good overlap
# Source and target scores come from the same distribution.

# %%
src = rng.beta(2, 6, 1500)
tgt = rng.beta(2, 6, 1500)
d = overlap_diagnostics(src, tgt)
print(f"domain AUC={d.domain_auc:.3f} ESS ratio={d.ess_ratio:.3f}")
cal, report = oa_cal_scores(src, labels(src), tgt, cost)
print("selected:", report.selected, "weighting:", report.weighting_enabled)
for c in report.candidates:
    print(f"  {c.kind:10s} mean={c.mean:.4f} sd={c.std:.4f} ucb={c.ucb:.4f}")

# %% [markdown]
# ## Poor overlap
# Target scores sit at the other end of the interval. The gate turns
# weighting off and drops the high-variance calibrators.

# %%
src = rng.beta(2, 10, 600)
tgt = rng.beta(10, 2, 600)
t_src, y_tgt = labels(src), labels(tgt)
for name, cfg in (("gated", OACalConfig()), ("forced", OACalConfig(force_weighting=True))):
    cal, report = oa_cal_scores(src, t_src, tgt, cost, cfg)
    c = decision_cost(p=cal.predict(tgt), y=y_tgt, cost=cost)
    print(f"{name:7s} selected={report.selected:8s} weighting={report.weighting_enabled} "
          f"pruned={report.pruned} target cost={c:.1f}")
print(report.gate_reasons)
