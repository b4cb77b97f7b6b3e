"""Scenario configuration, built-in example scenarios, command-line drivers
and report/CSV emission.

Scenario files are JSON with a published schema; coefficient entries are
strings in the expression DSL.  Every omitted numeric has a documented
default, reports embed the tool version and the fully resolved configuration,
and all emitted files are byte-deterministic given (scenario, seed).

Exit status: 0 = completed (any verdict), 2 = scenario invalid, 3 = internal
numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from . import __version__
from .coeff import (CoefficientMatrix, ConditionEvidence, SingularSet,
                    check_divergence_free, check_ellipticity_bounds,
                    check_sectoriality, compute_beta)
from .criteria import (CriterionReport, assemble_verdict, check_boundary_S3,
                       check_growth_cons_b, check_S1, check_S2, estimate_poincare)
from .errors import DivformError, ScenarioError
from .expr import ScalarField
from .gauge import (LOG_GAUGE_VARIANTS, estimate_volume, make_custom_gauge,
                    make_log_gauge, make_sum_gauge, martingale_tail_bound)
from .geometry import (build_halfspace_example, build_wedge_example, full_space,
                       make_wedge, upper_half_space)
from .sim import (SimulationConfig, build_drift, em_simulate,
                  explosion_statistics, write_paths)

EXAMPLES = ("fullspace-growth", "rot2d-gamma", "wedge-oblique", "halfspace-s4")

DEFAULTS = {
    "seed": 12345,
    "singular_set": {"kind": "empty"},
    "drift_b": None,  # zeros
    "grids": {
        "R": 1.0,
        "T": 0.1,
        "T_candidates": None,
        "r_grid": [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
        "radial_grid": None,  # geomspace(1, 2000, 25)
    },
    "tolerances": {
        "residual": 1e-6,       # quadrature residuals, delta positivity
        "growth": 0.2,          # projected relative growth for ratio checks
        "final": 1e-3,          # final-value threshold for S1/S3 sequences
        "tail_final": 1e-3,     # final-value threshold for the tail curve
        "poincare_stability": 0.05,
    },
    "samples": {
        "volume": 20000,
        "energy": 4096,
        "ellipticity": 2048,
        "boundary": 10000,
        "s1": 20000,
        "s2": 4096,
        "angular": 64,
        "divergence_tests": 10,
        "quadrature": 64,
        "poincare_resolution": None,  # 64 in 2-D, 20 in 3-D
    },
    "regions": {
        "ladder_halfwidths": [2.0, 4.0, 8.0],
        "poincare_box": None,  # domain default probe box
    },
    "simulation": {
        "horizon": 1.0,
        "dt": 1e-3,
        "paths": 2000,
        "r_max": 10.0,
        "initial": {"kind": "point", "point": None},  # origin-ish default
        "tail_grid": None,  # r_grid clipped to r_max
    },
}

SCHEMA = {
    "type": "object",
    "required": ["dimension", "domain", "coefficients", "gauge"],
    "additionalProperties": False,
    "properties": {
        "dimension": {"type": "integer", "minimum": 2},
        "domain": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["full-space", "half-space-3d", "wedge-2d"]},
                "p1": {"type": "number"},
                "p2": {"type": "number"},
            },
        },
        "coefficients": {
            "type": "object",
            "properties": {
                "a": {"type": "array",
                      "items": {"type": "array", "items": {"type": "string"}}},
                "constructor": {"enum": ["wedge-example", "halfspace-example"]},
                "f": {"type": "string"}, "g": {"type": "string"},
                "k": {"type": "string"}, "j": {"type": "string"},
                "l": {"type": "string"},
            },
        },
        "drift_b": {"type": ["array", "null"], "items": {"type": "string"}},
        "singular_set": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["empty", "ball", "box", "predicate"]},
                "center": {"type": "array", "items": {"type": "number"}},
                "radius": {"type": "number"},
                "lo": {"type": "array", "items": {"type": "number"}},
                "hi": {"type": "array", "items": {"type": "number"}},
                "expression": {"type": "string"},
                "bounded": {"type": "boolean"},
                "bounding_radius": {"type": "number"},
                "case": {"enum": ["boundary-surface", "interior-jump",
                                  "measure-derivative", None]},
            },
        },
        "gauge": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["log", "sum", "custom"]},
                "variant": {"type": "string"},
                "k": {"type": "string"}, "l": {"type": "string"}, "m": {"type": "string"},
                "expression": {"type": "string"},
                "halfwidth": {"type": "string"},
            },
        },
        "grids": {"type": "object"},
        "tolerances": {"type": "object"},
        "samples": {"type": "object"},
        "regions": {"type": "object"},
        "seed": {"type": "integer"},
        "simulation": {"type": "object"},
    },
}


def _merge(defaults, spec):
    if not isinstance(defaults, dict) or not isinstance(spec, dict):
        return copy.deepcopy(spec if spec is not None else defaults)
    out = copy.deepcopy(defaults)
    for key, val in spec.items():
        out[key] = _merge(defaults.get(key), val) if key in defaults else copy.deepcopy(val)
    return out


def load_scenario(data: dict) -> dict:
    """Validate a raw scenario dict and resolve all defaults."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{path}: {exc.message}") from exc
    scenario = _merge(DEFAULTS, data)
    d = scenario["dimension"]

    dom = scenario["domain"]
    if dom["kind"] == "wedge-2d":
        if d != 2:
            raise ScenarioError("dimension: wedge domains require dimension 2")
        for key in ("p1", "p2"):
            val = dom.get(key)
            if val is None or not (0.0 < val < 1.0):
                raise ScenarioError(f"domain.{key} out of (0,1): {val!r}")
    if dom["kind"] == "half-space-3d" and d != 3:
        raise ScenarioError("dimension: the upper half-space requires dimension 3")

    sint = scenario["singular_set"]
    if sint.get("case") in ("interior-jump", "measure-derivative"):
        raise ScenarioError(
            "singular_set.case: only the boundary-surface-measure case is "
            "implemented; interior jump discontinuities and measure-valued "
            "derivatives are out of scope")
    if sint.get("kind") == "predicate" and not sint.get("bounded", False) \
            and "bounding_radius" in sint and sint["bounding_radius"]:
        pass
    coeff = scenario["coefficients"]
    if "constructor" in coeff:
        if coeff["constructor"] == "wedge-example":
            missing = [k for k in ("f", "k", "j", "g") if k not in coeff]
        else:
            missing = [k for k in ("g", "k", "l") if k not in coeff]
        if missing:
            raise ScenarioError(f"coefficients.{missing[0]}: required by the "
                                f"{coeff['constructor']} constructor")
        if scenario.get("drift_b"):
            raise ScenarioError("drift_b: must be omitted when a constructor "
                                "defines the coefficients")
    elif "a" not in coeff:
        raise ScenarioError("coefficients.a: matrix of expressions required "
                            "(or use a constructor)")
    else:
        a = coeff["a"]
        if len(a) != d or any(len(row) != d for row in a):
            raise ScenarioError(f"coefficients.a: must be a {d}x{d} matrix of expressions")
    if scenario["grids"]["radial_grid"] is None:
        scenario["grids"]["radial_grid"] = [float(x) for x in np.geomspace(1.0, 2000.0, 25)]
    if scenario["samples"]["poincare_resolution"] is None:
        scenario["samples"]["poincare_resolution"] = 64 if d <= 2 else 20
    sim = scenario["simulation"]
    if sim["initial"]["kind"] == "point" and sim["initial"].get("point") is None:
        sim["initial"]["point"] = [0.0] * d
    if sim["tail_grid"] is None:
        sim["tail_grid"] = [r for r in scenario["grids"]["r_grid"] if r <= sim["r_max"]]
    return scenario


def load_scenario_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return load_scenario(data)


# ---------------------------------------------------------------------------
# model construction


@dataclass
class BuiltScenario:
    scenario: dict
    domain: object
    A: CoefficientMatrix
    B: list
    beta: object
    gauge: object
    singular_set: SingularSet
    constructor_evidence: Optional[ConditionEvidence] = None


def _build_domain(scenario):
    dom = scenario["domain"]
    if dom["kind"] == "full-space":
        return full_space(scenario["dimension"])
    if dom["kind"] == "half-space-3d":
        return upper_half_space()
    return make_wedge(dom["p1"], dom["p2"])


def _field1(text):
    return ScalarField.from_expression(text, 1)


def _build_coefficients(scenario, domain):
    d = scenario["dimension"]
    coeff = scenario["coefficients"]
    evidence = None
    if coeff.get("constructor") == "wedge-example":
        B, a12, evidence = build_wedge_example(
            _field1(coeff["f"]), _field1(coeff["k"]), _field1(coeff["j"]),
            _field1(coeff["g"]), domain)
        one = ScalarField.constant(1.0, 2)
        zero = ScalarField.constant(0.0, 2)
        A = CoefficientMatrix([[one, a12], [(-1.0) * a12, one]])
        return A, B, evidence
    if coeff.get("constructor") == "halfspace-example":
        a13, a23, evidence = build_halfspace_example(
            _field1(coeff["g"]), _field1(coeff["k"]), _field1(coeff["l"]))
        one = ScalarField.constant(1.0, 3)
        zero = ScalarField.constant(0.0, 3)
        A = CoefficientMatrix([[one, zero, a13],
                               [zero, one, a23],
                               [(-1.0) * a13, (-1.0) * a23, one]])
        B = [ScalarField.constant(0.0, 3)] * 3
        return A, B, evidence
    A = CoefficientMatrix.from_expressions(coeff["a"], d)
    b_spec = scenario.get("drift_b")
    if b_spec:
        if len(b_spec) != d:
            raise ScenarioError(f"drift_b: expected {d} components")
        B = [ScalarField.from_expression(e, d) for e in b_spec]
    else:
        B = [ScalarField.constant(0.0, d)] * d
    return A, B, evidence


def _build_gauge(scenario):
    d = scenario["dimension"]
    g = scenario["gauge"]
    if g["kind"] == "log":
        variant = g.get("variant", "square-plus-1")
        if variant not in LOG_GAUGE_VARIANTS:
            raise ScenarioError(f"gauge.variant: unknown log variant {variant!r}")
        return make_log_gauge(d, variant)
    if g["kind"] == "sum":
        if d != 3:
            raise ScenarioError("gauge.kind: sum gauges require dimension 3")
        for key in ("k", "l", "m"):
            if key not in g:
                raise ScenarioError(f"gauge.{key}: required by the sum gauge")
        return make_sum_gauge(_field1(g["k"]), _field1(g["l"]), _field1(g["m"]))
    for key in ("expression", "halfwidth"):
        if key not in g:
            raise ScenarioError(f"gauge.{key}: required by custom gauges")
    return make_custom_gauge(ScalarField.from_expression(g["expression"], d),
                             _field1(g["halfwidth"]))


def _build_singular(scenario):
    d = scenario["dimension"]
    s = scenario["singular_set"]
    kind = s.get("kind", "empty")
    if kind == "empty":
        return SingularSet.empty()
    if kind == "ball":
        return SingularSet.ball(s.get("center", [0.0] * d), s.get("radius", 1.0))
    if kind == "box":
        return SingularSet(kind="boxes",
                           boxes=[(np.asarray(s["lo"], float), np.asarray(s["hi"], float))],
                           bounded=True,
                           bounding_radius=float(np.max(np.abs(np.concatenate(
                               [s["lo"], s["hi"]])))) * np.sqrt(d))
    pred = ScalarField.from_expression(s["expression"], d)
    return SingularSet.from_predicate(pred, bool(s.get("bounded", False)),
                                      float(s.get("bounding_radius", 0.0)))


def build_model(scenario: dict) -> BuiltScenario:
    domain = _build_domain(scenario)
    A, B, evidence = _build_coefficients(scenario, domain)
    gauge = _build_gauge(scenario)
    if gauge.dimension != scenario["dimension"]:
        raise ScenarioError("gauge: dimension mismatch with the scenario")
    singular = _build_singular(scenario)
    beta = compute_beta(B, A, singular)
    return BuiltScenario(scenario, domain, A, B, beta, gauge, singular, evidence)


# ---------------------------------------------------------------------------
# pipelines


def _ladder_boxes(model):
    halfwidths = model.scenario["regions"]["ladder_halfwidths"]
    d = model.scenario["dimension"]
    boxes = []
    for w in halfwidths:
        lo = -w * np.ones(d)
        hi = w * np.ones(d)
        if model.domain.kind == "half-space-3d":
            lo[2], hi[2] = 0.0, 2.0 * w
        elif model.domain.kind == "wedge-2d":
            lo[1], hi[1] = 0.0, 2.0 * w
        boxes.append((lo, hi))
    return boxes


def _ellipticity_ladder(model, seed):
    tol = model.scenario["tolerances"]["residual"]
    samples = model.scenario["samples"]["ellipticity"]
    deltas, ms = [], []
    p1s, p2s = [], []
    for i, box in enumerate(_ladder_boxes(model)):
        e1, e2 = check_ellipticity_bounds(model.A, box, samples, (seed, "P1", i),
                                          model.domain, tol)
        p1s.append(e1)
        p2s.append(e2)
        deltas.append(e1.constants["delta"])
        ms.append(e2.constants.get("M", float("inf")))
    worst = int(np.argmin(deltas))
    p1 = ConditionEvidence(
        tag="P1",
        status="pass" if all(e.passed for e in p1s) else "fail",
        constants={"delta": deltas[worst],
                   "delta_p001": p1s[worst].constants["delta_p001"]},
        worst_point=p1s[worst].worst_point,
        sample_count=sum(e.sample_count for e in p1s),
        tolerance=tol,
        sequence={"region": list(range(1, len(p1s) + 1)), "delta": deltas})
    worst_m = int(np.argmax(ms))
    p2 = ConditionEvidence(
        tag="P2",
        status="pass" if all(e.passed for e in p2s) else "fail",
        constants={"M": ms[worst_m]},
        worst_point=p2s[worst_m].worst_point,
        sample_count=sum(e.sample_count for e in p2s),
        tolerance=tol,
        sequence={"region": list(range(1, len(p2s) + 1)), "M": ms})
    return p1, p2


def run_check(model: BuiltScenario) -> CriterionReport:
    sc = model.scenario
    seed = sc["seed"]
    tols = sc["tolerances"]
    samples = sc["samples"]
    grids = sc["grids"]
    R = grids["R"]
    r_grid = grids["r_grid"]

    evidence = []
    p1, p2 = _ellipticity_ladder(model, seed)
    evidence += [p1, p2]
    evidence.append(check_divergence_free(
        model.B, model.domain, samples["divergence_tests"], samples["quadrature"],
        (seed, "P3"), tols["residual"]))
    evidence.append(check_sectoriality(
        model.B, model.A, _ladder_boxes(model), samples["ellipticity"],
        (seed, "P4"), model.domain, tols["residual"]))

    box = sc["regions"]["poincare_box"]
    if box is None:
        box = model.domain.interior_box()
    else:
        box = (np.asarray(box["lo"], float), np.asarray(box["hi"], float))
    evidence.append(estimate_poincare(model.A, box, samples["poincare_resolution"],
                                      tols["poincare_stability"]))

    if model.domain.kind == "full-space":
        evidence.append(check_growth_cons_b(
            model.A, model.beta, model.singular_set, grids["radial_grid"],
            samples["angular"], (seed, "GROWTH"), tols["growth"]))

    interior_domain = model.domain if model.domain.has_boundary else None
    evidence.append(check_S1(model.beta, model.gauge, model.singular_set, R, r_grid,
                             samples["s1"], (seed, "S1"), interior_domain,
                             tols["final"]))
    evidence.append(check_S2(model.beta, model.gauge, model.singular_set, r_grid,
                             samples["s2"], (seed, "S2"), interior_domain,
                             tols["growth"]))
    if model.domain.has_boundary:
        evidence.append(check_boundary_S3(model.A, model.gauge, model.domain, r_grid,
                                          samples["boundary"], R, (seed, "S3"),
                                          tols["final"]))

    candidates = grids.get("T_candidates")
    curve = None
    if candidates:
        best, curve = None, None
        for T in sorted(candidates, reverse=True):
            curve = martingale_tail_bound(
                model.A, model.gauge, R, T, r_grid, (seed, "tail"),
                interior_domain, samples["volume"], samples["energy"],
                tols["tail_final"])
            if curve.satisfied:
                break
    else:
        curve = martingale_tail_bound(
            model.A, model.gauge, R, grids["T"], r_grid, (seed, "tail"),
            interior_domain, samples["volume"], samples["energy"], tols["tail_final"])

    fingerprint = {"seed": seed, "tolerances": tols,
                   "grids": {"R": R, "T": curve.T, "r_grid": list(map(float, r_grid)),
                             "radial_grid": list(map(float, grids["radial_grid"]))}}
    report = assemble_verdict(evidence, curve, model.domain, model.singular_set,
                              fingerprint)
    return report


def run_simulation(model: BuiltScenario, keep_traces=False):
    sc = model.scenario
    sim = sc["simulation"]
    init = sim["initial"]
    config = SimulationConfig(
        horizon=sim["horizon"], dt=sim["dt"], n_paths=sim["paths"], seed=sc["seed"],
        domain=model.domain, gauge=model.gauge, r_max=sim["r_max"],
        initial_point=init["point"] if init["kind"] == "point" else None,
        initial_level=init.get("level") if init["kind"] == "uniform-level-set" else None,
        keep_traces=keep_traces)
    drift, factor = build_drift(model.A, model.B)
    reflection = model.A if model.domain.has_boundary else None
    ensemble = em_simulate(config, drift, factor, reflection)
    return config, ensemble


def _start_volume(model, config):
    if config.initial_level is None:
        return None
    vol = estimate_volume(model.gauge, config.initial_level,
                          model.scenario["samples"]["volume"],
                          (model.scenario["seed"], "start-vol"),
                          model.domain if model.domain.has_boundary else None)
    return vol.value


# ---------------------------------------------------------------------------
# emission


def _format(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header, rows):
    """RFC-4180 CSV with full-precision floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def write_report(path, payload: dict):
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def report_payload(scenario, report: Optional[CriterionReport],
                   constructor_evidence, simulation_section):
    payload = {
        "tool": {"name": "divform", "version": __version__},
        "scenario": scenario,
        "constructor_check": None if constructor_evidence is None
        else constructor_evidence.to_dict(),
    }
    if report is not None:
        payload["report"] = report.to_dict()
    if simulation_section is not None:
        payload["simulation"] = simulation_section
    return payload


def summary_text(report: CriterionReport) -> str:
    lines = [f"verdict: {report.verdict}"
             + (f" (route {report.route})" if report.route else ""),
             report.narrative, ""]
    for ev in report.evidence:
        consts = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in sorted(ev.constants.items())
                           if isinstance(v, (int, float)))
        lines.append(f"  {ev.tag:6s} {ev.status:12s} {consts}")
    if report.tail_curve is not None:
        tc = report.tail_curve
        lines.append(f"  tail   {'satisfied' if tc.satisfied else 'not satisfied':12s} "
                     f"T={tc.T:g} final={tc.final_bound:.3g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# built-in examples


def builtin_scenario(name: str) -> dict:
    if name == "fullspace-growth":
        return {
            "dimension": 2,
            "domain": {"kind": "full-space"},
            "coefficients": {"a": [["1", "0"], ["0", "1"]]},
            "gauge": {"kind": "log", "variant": "square-plus-1"},
            "grids": {"R": 1.0, "T": 0.1},
            "simulation": {"horizon": 1.0, "dt": 1e-3, "paths": 2000, "r_max": 10.0,
                           "initial": {"kind": "point", "point": [0.0, 0.0]},
                           "tail_grid": [2.0, 4.0, 6.0, 8.0, 10.0]},
        }
    if name == "rot2d-gamma":
        rot = "min(sqrt(x1^2+x2^2),1)"
        return {
            "dimension": 2,
            "domain": {"kind": "full-space"},
            "coefficients": {"a": [["1", rot], ["-" + rot, "1"]]},
            "singular_set": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
            "gauge": {"kind": "log", "variant": "abs-plus-2"},
            "grids": {"R": 1.0, "T": 0.1,
                      "r_grid": [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]},
            "simulation": {"horizon": 1.0, "dt": 1e-3, "paths": 2000, "r_max": 6.0,
                           "initial": {"kind": "point", "point": [0.5, 0.5]},
                           "tail_grid": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]},
        }
    if name == "wedge-oblique":
        # bounded-profile variant of the wedge construction: j' = tanh is odd,
        # k' = -tanh matches the edge compatibility, and B stays bounded on
        # the wedge (quadratic profiles would make |B| ~ |z|/2 on the edges)
        p = float(1.0 / np.sqrt(2.0))
        return {
            "dimension": 2,
            "domain": {"kind": "wedge-2d", "p1": p, "p2": p},
            "coefficients": {"constructor": "wedge-example",
                             "f": "sech(x1)^2", "k": "-log(exp(x1)+exp(-x1))",
                             "j": "log(exp(x1)+exp(-x1))", "g": "tanh(x1)"},
            "gauge": {"kind": "log", "variant": "square-plus-2"},
            "grids": {"R": 1.0, "T": 0.1,
                      "r_grid": [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]},
            "simulation": {"horizon": 1.0, "dt": 1e-3, "paths": 2000, "r_max": 6.0,
                           "initial": {"kind": "point", "point": [0.0, 1.0]},
                           "tail_grid": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]},
        }
    if name == "halfspace-s4":
        prof = "log(x1^2+2)"
        return {
            "dimension": 3,
            "domain": {"kind": "half-space-3d"},
            "coefficients": {"constructor": "halfspace-example",
                             "g": "tanh(x1)", "k": prof, "l": prof},
            "gauge": {"kind": "sum", "k": prof, "l": prof, "m": prof},
            "grids": {"R": 3.0, "T": 0.05,
                      "r_grid": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]},
            "simulation": {"horizon": 0.05, "dt": 1e-3, "paths": 4000, "r_max": 6.0,
                           "initial": {"kind": "uniform-level-set", "level": 3.0},
                           "tail_grid": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]},
        }
    raise ScenarioError(f"unknown example {name!r}; choose one of {', '.join(EXAMPLES)}")


# ---------------------------------------------------------------------------
# driver


def run_scenario(scenario: dict, command: str, out_dir, dump_paths=False) -> dict:
    """Run one command over a resolved scenario; writes artifacts into
    ``out_dir`` and returns the report payload."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(scenario)

    report = None
    simulation_section = None
    curve = None
    if command in ("check", "full"):
        report = run_check(model)
        curve = report.tail_curve
        write_csv(out / "curves.csv",
                  ["r", "vol", "vol_stderr", "M_rho", "erfc_arg", "bound"],
                  curve.rows())
    if command in ("simulate", "full"):
        config, ensemble = run_simulation(model, keep_traces=dump_paths)
        start_vol = _start_volume(model, config)
        table = explosion_statistics(ensemble, scenario["simulation"]["tail_grid"],
                                     curve, start_vol)
        header = ["r", "empirical_tail", "stderr"]
        if curve is not None:
            header += ["theoretical_bound", "violation"]
        rows = []
        for row in table.rows:
            base = [row["r"], row["empirical_tail"], row["stderr"]]
            if curve is not None:
                base += [row["theoretical_bound"], row["violation"]]
            rows.append(base)
        write_csv(out / "tails.csv", header, rows)
        simulation_section = {"summary": ensemble.summary(),
                              "tails": table.to_dict()}
        if dump_paths:
            write_paths(out / "paths.bin", ensemble)
    payload = report_payload(scenario, report, model.constructor_evidence,
                             simulation_section)
    if command in ("check", "full"):
        write_report(out / "report.json", payload)
        (out / "summary.txt").write_text(summary_text(report), encoding="utf-8")
    return payload


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="divform",
        description="Numerical conservativeness checks for perturbed "
                    "divergence-form diffusions, cross-checked by simulation.")
    parser.add_argument("command", choices=["check", "simulate", "full", "example"])
    parser.add_argument("name", nargs="?", help="built-in example name "
                        f"({', '.join(EXAMPLES)}) for the example command")
    parser.add_argument("--scenario", help="scenario JSON file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (results are independent of this)")
    parser.add_argument("--tolerance", type=float,
                        help="override the residual tolerance")
    parser.add_argument("--dump-paths", action="store_true",
                        help="dump per-path traces to paths.bin")
    args = parser.parse_args(argv)

    try:
        if args.command == "example":
            if not args.name:
                raise ScenarioError("example: a scenario name is required")
            raw = builtin_scenario(args.name)
            scenario = load_scenario(raw)
            command = "full"
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            _apply_overrides(scenario, args)
            (out / f"{args.name}.scenario.json").write_text(
                json.dumps(scenario, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        else:
            if not args.scenario:
                raise ScenarioError("--scenario is required for this command")
            scenario = load_scenario_file(args.scenario)
            _apply_overrides(scenario, args)
            command = args.command
        payload = run_scenario(scenario, command, args.out, args.dump_paths)
    except ScenarioError as exc:
        print(f"scenario invalid: {exc}", file=sys.stderr)
        return 2
    except DivformError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    if "report" in payload:
        print(f"verdict: {payload['report']['verdict']}")
    return 0


def _apply_overrides(scenario, args):
    if args.seed is not None:
        scenario["seed"] = int(args.seed)
    if args.tolerance is not None:
        scenario["tolerances"]["residual"] = float(args.tolerance)


if __name__ == "__main__":
    raise SystemExit(main())
