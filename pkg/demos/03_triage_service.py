# %% [markdown]
# # From training to triage
#
# Train on simulated history, save a model bundle, then triage new failures
# one at a time with an online history index.

# %%
import tempfile
from pathlib import Path

from scout import TriageModel, load_model, save_model
from scout.evaluation import latency_bench, run_protocol
from scout.features import HistoryIndex
from scout.simulator import SimConfig, generate_benchmark

dataset = generate_benchmark(SimConfig(seed=5))
res = run_protocol(dataset)
fitted = res.models[0]
print(fitted.oa_report.selected, fitted.oa_report.weighting_enabled)

model = TriageModel(fitted.scorer, fitted.calibrators["oa_cal"])
path = save_model(model, Path(tempfile.mkdtemp()) / "model.json")
model = load_model(path)
print("tau:", round(model.tau, 3))

# %% [markdown]
# ## Streaming
# History grows as runs arrive; each failure is scored only from what came
# before it.

# %%
ordered = sorted(dataset, key=lambda r: r.start_time)
history = HistoryIndex.from_runs(ordered[:-400])
shown = 0
for run in ordered[-400:]:
    if run.failed and shown < 8:
        r = model.triage_run(run, history)
        print(f"{r.run_id} p={r.p_calibrated:.3f} {r.decision.value:8s} gate={r.escalation_preferred_override}")
        shown += 1
    history.add(run.test_id, run.start_time, run.duration, run.failed)

# %% [markdown]
# ## Latency

# %%
rep = latency_bench(model, dataset, n_iters=2000)
print(rep.to_dict())
