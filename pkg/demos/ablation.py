"""
Ablation of the two mixers
==========================

Train every variant on the same data and seed. The variants differ only in
which sublayers each layer keeps, so the parameter counts show what is
removed and the test errors show what it was worth on this signal.
"""

from dataclasses import replace

from fmamba.data import Scaler, SeriesTable, SplitSpec, coupled_sinusoids, split
from fmamba.model import VARIANTS, FMambaConfig, build_variant, parameter_report
from fmamba.train import TrainConfig, train

values = coupled_sinusoids(n_vars=6, length=1500, seed=3)
tr, va, te = split(SeriesTable([f"s{i}" for i in range(6)], values), SplitSpec(ratios=(0.7, 0.1, 0.2)), lookback=48)
scaler = Scaler().fit(tr.values)
segments = [scaler.transform(s.values) for s in (tr, va, te)]

base = FMambaConfig(n_vars=6, lookback=48, horizon=12, d_model=32, e_layers=2, k_dim=16)

# %%
print(f"{'variant':<26} {'params':>8} {'test mse':>10} {'test mae':>10}")
for variant in VARIANTS:
    cfg = TrainConfig(replace(base, variant=variant), lr=1e-3, batch_size=32, max_epochs=5, seed=0)
    _, report = train(cfg, *segments)
    count = parameter_report(build_variant(cfg.model))["total"]
    print(f"{variant:<26} {count:>8} {report.test_mse:>10.4f} {report.test_mae:>10.4f}")
