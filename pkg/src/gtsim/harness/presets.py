"""Built-in experiments at desk scale.

Step sizes are pinned to the analysed values (``alpha_bar``, the harmonic
``beta``/``gamma`` defaults) rather than tuned per run; ``pl-decay`` keeps the
plain ``(k + 3)^-tau`` schedule, which is reported as outside the analysed
range but still run.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Preset:
    description: str
    settings: dict


PRESETS = {
    "pl-sweep": Preset(
        "Constant-step sweep of GT-DSGD and DSGD on the synthetic PL problem",
        {"topology": {"families": "exponential"},
         "suite": {"problem": "pl", "hetero_scale": "0.1"},
         "oracle": {"oracle": "gaussian", "sigma": "0.5"},
         "method": {"methods": "gt_dsgd,dsgd"},
         "schedule": {"schedule": "constant", "alpha": "alpha_bar,0.5*alpha_bar,0.25*alpha_bar"},
         "run": {"iters": "20000", "trials": "20", "stride": "20"}}),
    "pl-constant": Preset(
        "GT-DSGD inexact linear convergence for several constant steps",
        {"topology": {"families": "exponential"},
         "suite": {"problem": "pl", "hetero_scale": "0.1"},
         "oracle": {"oracle": "gaussian", "sigma": "0.5"},
         "method": {"methods": "gt_dsgd"},
         "schedule": {"schedule": "constant", "alpha": "alpha_bar,0.5*alpha_bar,0.25*alpha_bar"},
         "run": {"iters": "20000", "trials": "20", "stride": "20"}}),
    "pl-decay": Preset(
        "GT-DSGD with alpha_k = (k + 3)^-tau, tau in {0.6, 0.8, 1.0}",
        {"topology": {"families": "exponential"},
         "suite": {"problem": "pl", "hetero_scale": "0.1"},
         "oracle": {"oracle": "gaussian", "sigma": "0.5"},
         "method": {"methods": "gt_dsgd"},
         "schedule": {"schedule": "poly_decay", "delta": "1", "phi": "3", "epsilon": "0.6,0.8,1.0"},
         "run": {"iters": "100000", "trials": "20", "stride": "100"}}),
    "pl-harmonic": Preset(
        "GT-DSGD over three graphs and centralized SGD, harmonic step beta/(k + gamma)",
        {"topology": {"families": "exponential,grid,geometric", "n": "16"},
         "suite": {"problem": "pl", "hetero_scale": "0.1"},
         "oracle": {"oracle": "gaussian", "sigma": "0.5"},
         "method": {"methods": "gt_dsgd,centralized"},
         "schedule": {"schedule": "harmonic"},
         "run": {"iters": "100000", "trials": "20", "stride": "100"}}),
    "ncvx-logistic": Preset(
        "Non-convex logistic regression: GT-DSGD on exponential and grid graphs and centralized SGD",
        {"topology": {"families": "exponential,grid", "n": "16"},
         "suite": {"problem": "logistic", "dim": "10", "samples_per_node": "200", "reg": "1e-4",
                   "separation": "2.0", "feature_scale": "8.366600265340756"},
         "oracle": {"oracle": "sampling", "batch": "1"},
         "method": {"methods": "gt_dsgd,centralized"},
         "schedule": {"schedule": "constant", "alpha": "sqrt_n_over_k"},
         # K above the explicit precondition of the grid (the slower-mixing graph)
         "run": {"iters": "47270", "trials": "10", "stride": "200", "x0": "0"}}),
    "hetero": Preset(
        "GT-DSGD against DSGD under strongly heterogeneous local functions",
        {"topology": {"families": "exponential"},
         "suite": {"problem": "pl", "hetero_scale": "1.0"},
         "oracle": {"oracle": "gaussian", "sigma": "0.1"},
         "method": {"methods": "gt_dsgd,dsgd"},
         "schedule": {"schedule": "constant", "alpha": "0.005"},
         "run": {"iters": "20000", "trials": "20", "stride": "20"}}),
}
