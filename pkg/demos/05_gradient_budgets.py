"""Server-side compute: optimized consensus versus a centralized sampler.

Both approaches spend gradients of the same log joint at the server.  The
weight optimizer consumes N_b * S gradients per iteration but leans on the
workers' parallel sampling; the centralized Langevin chain consumes N_b per
iteration and must mix on its own.  At a matched budget the consensus
output is the better posterior approximation.
"""

import numpy as np

from wcmc.harness import config, runner

n, k, s, t_m = 8500, 20, 50, 50
budget = t_m * n * s
sgld_nb = 500

base = {
    "scenario": "probit-synthetic",
    "n_workers": k,
    "snr_db": 15.0,
    "trials": 3,
    "seed": 11,
    "dim": 5,
    "data": {"n": n, "n_test": 0},
    "reference": {"n_samples": 12000, "burn_in": 100},
}

noma = runner.run_experiment(
    config.parse_config(
        dict(base, t_blocks=s, schemes={"wvcmc-noma": {"eta": 1e-6, "t_m": t_m}})
    )
)
oma = runner.run_experiment(
    config.parse_config(
        dict(
            base,
            t_blocks=k * s,
            schemes={
                "sgld": {
                    "alpha": 0.01,
                    "beta": 1.0,
                    "gamma": 0.7,
                    "n_b": sgld_nb,
                    "iterations": budget // sgld_nb,
                    "burn_in": 10_000,
                }
            },
        )
    )
)

print(f"server budget: {budget:,} log-joint gradients\n")
for rows, name in ((noma, "wvcmc-noma"), (oma, "sgld")):
    errs = [r["err2"] for r in rows if r["scheme"] == name]
    grads = next(r["computed_gradients"] for r in rows if r["scheme"] == name)
    print(f"{name:<12} mean err2 {np.mean(errs):.4f}   gradients {grads:,}")
