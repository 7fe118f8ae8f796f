"""Regenerate kernel_vectors.json from the naive oracles (not from the package)."""
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))
import oracles  # noqa: E402


def main():
    rng = np.random.default_rng(20240601)
    cases = []
    for n in (1, 3, 6, 10):
        rewards = rng.normal(size=n).round(6).tolist()
        values = rng.normal(size=n).round(6).tolist()
        dones = (rng.random(n) < 0.25).tolist()
        behavior = np.log(rng.uniform(0.1, 1.0, n)).round(6).tolist()
        target = np.log(rng.uniform(0.1, 1.0, n)).round(6).tolist()
        bootstrap = round(float(rng.normal()), 6)
        gamma, lam = 0.97, 0.9
        vs, pg = oracles.vtrace(behavior, target, rewards, values, bootstrap, dones, gamma,
                                1.0, 0.9)
        cases.append({
            "rewards": rewards, "values": values, "dones": dones, "bootstrap": bootstrap,
            "behavior_logps": behavior, "target_logps": target, "gamma": gamma, "lam": lam,
            "rho_bar": 1.0, "c_bar": 0.9,
            "lambda_return": oracles.lambda_return(rewards, values, bootstrap, dones, gamma,
                                                   lam).tolist(),
            "gae": oracles.gae(rewards, values, bootstrap, dones, gamma, lam).tolist(),
            "vtrace_vs": vs.tolist(), "vtrace_pg": pg.tolist(),
        })
    out = Path(__file__).with_name("kernel_vectors.json")
    out.write_text(json.dumps(cases, indent=1) + "\n")


if __name__ == "__main__":
    main()
