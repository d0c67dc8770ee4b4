"""
Seeded property suites over the shipped instances.

Each suite returns a dict with a boolean "passed" and the worst witness found;
`run_all` collects them into one report.
"""
import logging
from typing import Any, Dict, Optional

import numpy as np

from .bifunctions import (EquilibriumBifunction, OperatorBifunction, ProxBifunction,
                          firm_nonexpansiveness_gap, operator_resolvent, prox_resolvent,
                          resolvent_certificate, zero_bifunction, paired_zero)
from .errors import UsageError
from .geometry import BoxSet, sample_pairs, sampling_region
from .operators import (MonotoneMap, bifunction_monotonicity_gap, lipschitz_witness,
                        lower_bifunction, monotonicity_deficit, quadratic_gradient,
                        zero_map)
from .services_dynamics import SQRT6, lipschitz_h_check
from .services_fbf import SLACK_TOL, BepInstance, Schedule, StoppingRule, run_fbf
from .services_saddle import (build_saddle_bep, example_problem, example_solution, lower_operator,
                              random_saddle_problem)

logger = logging.getLogger(__name__)

FNE_TOL = 1e-10
MONOTONE_TOL = 1e-10
IDENTITY_TOL = 1e-12
AGREEMENT_TOL = 1e-8
CERTIFICATE_TOL = 1e-9
OPERATOR_SAMPLE_CAP = 10_000  # inner solves are iterative; cap the pair count


def _shipped_resolvents(dim: int = 2) -> Dict[str, EquilibriumBifunction]:
    k = BoxSet.unit(dim)
    return {
        "zero": zero_bifunction(k),
        "prox": ProxBifunction(np.full(dim, 0.5), 1.0, k),
        "quadratic_operator": OperatorBifunction(quadratic_gradient(np.full(dim, 0.5), 1.0), k),
        "paired_zero": paired_zero(1, dim - 1, k),
    }


def firm_nonexpansiveness_suite(samples: int, seed: int, lam: float = 0.7) -> Dict[str, Any]:
    worst = {}
    for name, g in _shipped_resolvents().items():
        n = samples if isinstance(g, ProxBifunction) else min(samples, OPERATOR_SAMPLE_CAP)
        worst[name] = firm_nonexpansiveness_gap(g, lam, n, seed)
    top = max(worst.values())
    return {"passed": top <= FNE_TOL, "worst_gap": top, "per_resolvent": worst}


def resolvent_agreement_suite(samples: int, seed: int, lam: float = 0.7) -> Dict[str, Any]:
    """Inner-solve resolvent vs closed form on the quadratic-gradient instance, plus certificates."""
    k = BoxSet.unit(2)
    prox = ProxBifunction(np.array([0.3, 0.7]), 1.0, k)
    op = OperatorBifunction(quadratic_gradient(prox.center, prox.weight), k)
    rng = np.random.default_rng(seed)
    xs = sampling_region(k).sample(rng, min(samples, OPERATOR_SAMPLE_CAP))
    diff = float(np.max(np.abs(operator_resolvent(op, lam, xs, verify=False) - prox_resolvent(prox, lam, xs))))
    certs = {}
    for name, g in _shipped_resolvents().items():
        certs[name] = min(resolvent_certificate(g, lam, x, g.resolvent(lam, x)) for x in xs[:50])
    worst_cert = min(certs.values())
    return {"passed": diff <= AGREEMENT_TOL and worst_cert >= -CERTIFICATE_TOL,
            "max_abs_difference": diff, "worst_certificate": worst_cert, "per_resolvent": certs}


def sqrt6_suite(samples: int, seed: int, inst: Optional[BepInstance] = None) -> Dict[str, Any]:
    """sup ||h(x) - h(x')|| / ||x - x'|| over 10 values of lam*beta in (0, 1/L)."""
    inst = inst or build_saddle_bep(example_problem(), zero_bifunction(BoxSet.unit(2)))
    L = inst.lipschitz or 1.0
    ratios = {}
    for i, s in enumerate(np.linspace(0.05, 0.95, 10) / L):
        ratios[f"{s:.4g}"] = lipschitz_h_check(inst, float(s), 1.0, samples, seed + i)
    top = max(ratios.values())
    return {"passed": top <= SQRT6 + 1e-9, "max_ratio": top, "bound": SQRT6, "per_product": ratios}


def skew_monotonicity_suite(samples: int, seed: int) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    problems = [example_problem()] + [random_saddle_problem(rng, 2, 2) for _ in range(3)]
    deficit = min(monotonicity_deficit(lower_operator(sp), samples, seed) for sp in problems)
    gap = max(bifunction_monotonicity_gap(lower_operator(sp), samples, seed) for sp in problems)
    return {"passed": deficit >= -MONOTONE_TOL and gap <= MONOTONE_TOL,
            "min_monotonicity": deficit, "max_bifunction_gap": gap}


def bifunction_identity_suite(samples: int, seed: int) -> Dict[str, Any]:
    """Gamma(u2, v1) - Gamma(u1, v2) against <B x1, x2 - x1>."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for sp in [example_problem(), random_saddle_problem(rng, 2, 3)]:
        xs, ys = sample_pairs(sp.k, samples, seed)
        diff = np.abs(sp.coupling(xs, ys) - lower_bifunction(lower_operator(sp))(xs, ys))
        worst = max(worst, float(np.max(diff)))
    return {"passed": worst <= IDENTITY_TOL, "max_abs_difference": worst}


def lipschitz_suite(b: MonotoneMap, samples: int, seed: int,
                    region: Optional[BoxSet] = None) -> Dict[str, Any]:
    """Sampled Lipschitz ratio against the certificate, with the worst pair."""
    ratio, x, y = lipschitz_witness(b, samples, seed, region)
    return {"passed": ratio <= b.lipschitz + 1e-9, "max_ratio": ratio,
            "certificate": b.lipschitz, "witness": {"x": x.tolist(), "y": y.tolist()}}


def prop31_suite(max_iter: int = 100_000) -> Dict[str, Any]:
    """Minimum one-step Fejer slack over the two reference runs."""
    k = BoxSet.unit(2)
    saddle = build_saddle_bep(example_problem(), ProxBifunction(np.array([0.5, 0.5]), 1.0, k))
    selection = BepInstance(zero_map(2), ProxBifunction(np.array([0.3, 0.7]), 1.0, k), k,
                            name="selection")
    runs = {
        "saddle_example": run_fbf(saddle, [0.5, 0.5], Schedule("offset_power", beta0=1.0, growth=0.5, rho=0.9),
                                  StoppingRule(max_iter=max_iter), reference=example_solution()),
        "prox_selection": run_fbf(selection, [1.0, 0.0], Schedule("constant", lam0=1.0),
                                  StoppingRule(max_iter=max_iter), reference=[0.3, 0.7]),
    }
    mins = {name: min(r.slack for r in tr.records) for name, tr in runs.items()}
    worst = min(mins.values())
    return {"passed": worst >= -SLACK_TOL and all(tr.converged for tr in runs.values()),
            "min_slack": worst, "per_run": mins,
            "converged": {name: tr.converged for name, tr in runs.items()}}


def run_all(samples: int, seed: int) -> Dict[str, Any]:
    if samples < 1:
        raise UsageError(f"samples must be >= 1, got {samples}")
    saddle_b = lower_operator(example_problem())
    suites = {
        "firm_nonexpansiveness": firm_nonexpansiveness_suite(samples, seed),
        "resolvent_agreement": resolvent_agreement_suite(samples, seed),
        "sqrt6_lipschitz": sqrt6_suite(samples, seed),
        "skew_monotonicity": skew_monotonicity_suite(samples, seed),
        "bifunction_identity": bifunction_identity_suite(samples, seed),
        "lipschitz_certificate": lipschitz_suite(saddle_b, samples, seed),
        "prop31_slack": prop31_suite(),
    }
    for name, res in suites.items():
        logger.info("property suite %s: %s", name, "pass" if res["passed"] else "FAIL")
    return {"seed": seed, "samples": samples, "suites": suites,
            "all_passed": all(r["passed"] for r in suites.values())}
