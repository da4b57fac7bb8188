"""Second-order test error versus the number of communication blocks.

Gaussian toy workers with Toeplitz covariances transmit over identity
channels at 5 dB.  The plain consensus rule fitted on decoded signals
ignores channel noise and stalls at a bias floor; the channel-aware rule
subtracts the known noise covariance and keeps improving as blocks
accumulate.
"""

import numpy as np

from wcmc.harness import config, runner

for t_blocks in (200, 2000, 20000):
    doc = {
        "scenario": "gaussian-toy",
        "n_workers": 10,
        "t_blocks": t_blocks,
        "snr_db": 5.0,
        "trials": 10,
        "seed": 7,
        "schemes": {"gcmc": {}, "wgcmc-oma": {}, "wgcmc-noma": {}},
    }
    rows = runner.run_experiment(config.parse_config(doc))
    means = {
        s: np.mean([r["err2"] for r in rows if r["scheme"] == s])
        for s in ("gcmc", "wgcmc-oma", "wgcmc-noma")
    }
    print(
        f"T={t_blocks:>6}:  gcmc {means['gcmc']:.3f}   "
        f"wgcmc-oma {means['wgcmc-oma']:.3f}   wgcmc-noma {means['wgcmc-noma']:.3f}"
    )

print("\nwgcmc keeps converging with T; gcmc plateaus at its noise-bias floor")
