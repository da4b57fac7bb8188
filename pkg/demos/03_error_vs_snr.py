"""Noise robustness of variationally optimized aggregation weights.

Heterogeneous Gaussian toy, T=2000 blocks, SNR swept from 0 to 20 dB.
The closed-form rules degrade as the channel gets noisier, while the
free-energy-optimized weights treat channel noise as part of the sample
generation process: their error stays essentially flat across the sweep.
"""

import numpy as np

from wcmc.harness import config, runner

schemes = {
    "gcmc": {},
    "wgcmc-oma": {},
    "wgcmc-noma": {},
    "wvcmc-oma": {"eta": 5e-3, "t_m": 300},
    "wvcmc-noma": {"eta": 1e-3, "t_m": 30},
}

doc = {
    "scenario": "gaussian-toy",
    "n_workers": 10,
    "t_blocks": 2000,
    "snr_db": 0.0,
    "trials": 10,
    "seed": 21,
    "schemes": schemes,
}

rows = runner.sweep(config.parse_config(doc), "snr", [0.0, 10.0, 20.0])
print(f"{'SNR':>4}  " + "".join(f"{name:>12}" for name in schemes))
for snr in (0.0, 10.0, 20.0):
    means = [
        np.mean([r["err2"] for r in rows if r["scheme"] == s and r["snr_db"] == snr])
        for s in schemes
    ]
    print(f"{snr:4.0f}  " + "".join(f"{m:12.3f}" for m in means))
