"""Regenerates ks_reference.json from scipy's two-sample KS test.

Run once by hand; the tests read the frozen JSON and never import this.
"""

import json
import os

import numpy as np
from scipy import __version__ as scipy_version
from scipy.stats import ks_2samp

CASES = [(30, 40, 0.0), (30, 40, 0.3), (30, 40, 0.8), (40, 30, 0.5), (7, 9, 0.6),
         (100, 120, 0.2), (300, 300, 0.1), (1022, 1022, 0.0), (1022, 1022, 0.08),
         (500, 800, 0.05)]


def main():
    rng = np.random.default_rng(20240611)
    out = []
    for na, nb, shift in CASES:
        a = rng.normal(0.0, 1.0, na)
        b = rng.normal(shift, 1.0, nb)
        res = ks_2samp(a, b)
        out.append({"a": a.tolist(), "b": b.tolist(), "statistic": float(res.statistic),
                    "pvalue": float(res.pvalue)})
    path = os.path.join(os.path.dirname(__file__), "ks_reference.json")
    with open(path, "w") as f:
        json.dump({"generator": f"scipy {scipy_version} ks_2samp, method auto",
                   "cases": out}, f)


if __name__ == "__main__":
    main()
