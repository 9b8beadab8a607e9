"""Command-line front end: scenario files in, machine-readable reports out.

One scenario JSON drives every subcommand; sections are read on demand so
the same file reproduces a whole experiment.  Artifacts carry the scenario
hash and are byte-stable for a fixed seed.

    slfcert classify --scenario s.json --out results/
    slfcert lqg      --scenario s.json --out results/
    slfcert simulate --scenario s.json --out results/ [--threads N] [--seed S]
    slfcert smooth   --scenario s.json --out results/
    slfcert report   --out results/

Exit codes: 0 certified / succeeded, 2 not verified, 1 error.  The
environment variable SLFCERT_SEED overrides the scenario seed; an explicit
--seed flag overrides both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
from pathlib import Path

import numpy as np

from . import checker, connector, jsonio, lqg, montecarlo
from . import candidates as cand
from . import expr as ex
from . import sde_model

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_VERIFIED = 2


class ScenarioError(ValueError):
    pass


def _load_scenario(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    try:
        scenario = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return scenario, jsonio.scenario_hash(text)


def _section(scenario, key):
    if key not in scenario:
        raise ScenarioError(f"scenario is missing the {key!r} section")
    return scenario[key]


def _load_system(scenario) -> sde_model.SdeSystem:
    spec = _section(scenario, "system")
    try:
        if "builtin" in spec:
            return sde_model.builtin_example(spec["builtin"])
        return sde_model.SdeSystem.from_json(spec)
    except (KeyError, ValueError, ex.ExprError) as exc:
        raise ScenarioError(f"system: {exc}") from exc


def _load_candidate(scenario, n) -> cand.Candidate:
    spec = _section(scenario, "candidate")
    try:
        c = cand.candidate_from_json(spec)
    except (KeyError, ValueError, ex.ExprError) as exc:
        raise ScenarioError(f"candidate: {exc}") from exc
    if c.n != n:
        raise ScenarioError(
            f"candidate dimension {c.n} does not match system dimension {n}")
    return c


def _load_rates(scenario, n):
    rates = []
    for i, s in enumerate(scenario.get("rates", [])):
        try:
            rates.append(ex.parse(s, n))
        except ex.ExprError as exc:
            raise ScenarioError(f"rates[{i}]: {exc}") from exc
    return rates


def _load_grid(scenario, n) -> checker.Grid:
    spec = scenario.get("grid", {})
    per_axis = int(spec.get("per_axis", {1: 21, 2: 13, 3: 9}.get(n, 5)))
    return checker.Grid.build(n, radius=float(spec.get("radius", 2.0)),
                              per_axis=per_axis)


def _load_sim_config(scenario, seed_override) -> montecarlo.SimConfig:
    spec = dict(_section(scenario, "sim"))
    spec.pop("x0", None)
    if seed_override is not None:
        spec["seed"] = seed_override
    for key in ("thresholds", "envelope_eps", "terminal_quantiles"):
        if key in spec:
            spec[key] = tuple(spec[key])
    try:
        return montecarlo.SimConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"sim: {exc}") from exc


def _sim_x0(scenario, n):
    spec = _section(scenario, "sim")
    x0 = np.atleast_1d(np.asarray(spec.get("x0", [0.0] * n), dtype=float))
    if x0.shape != (n,):
        raise ScenarioError(f"sim.x0 must have dimension {n}")
    return x0


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _fcip_for(system, candidate, scenario):
    """Forward-completeness certificate via a smoothed power-sum surrogate."""
    spec = scenario.get("connector", {})
    radius = float(spec.get("radius", 100.0))
    if isinstance(candidate, cand.Smoothed):
        smoothed = candidate
    else:
        if isinstance(candidate, cand.PowerSum):
            exponents = candidate.exponents
        else:
            exponents = np.ones(system.n)
        a = float(spec.get("a", 0.05))
        b = float(spec.get("b", 0.4))
        inner_src = spec.get("inner")
        specs = []
        for p in exponents:
            inner = ex.parse(inner_src, 1) if inner_src else None
            specs.append(connector.fit_connector(a, b, float(p), inner))
        smoothed = connector.build_smoothed(cand.PowerSum(exponents), specs)
    cfg = connector.FcipGridConfig.for_dimension(system.n, radius=radius)
    return connector.fcip_certificate(system, smoothed, cfg)


def cmd_classify(args) -> int:
    scenario, digest = _load_scenario(args.scenario)
    system = _load_system(scenario)
    candidate = _load_candidate(scenario, system.n)
    rates = _load_rates(scenario, system.n)
    grid = _load_grid(scenario, system.n)

    origin = sde_model.classify_origin(system)
    verdict = checker.classify(system, candidate, rates, grid)
    plain = checker.check_plain_supersolution(system, candidate, None, grid)

    try:
        cert = _fcip_for(system, candidate, scenario)
        fcip_ok = connector.fcip_conclusion(cert)
        cert_json = cert.to_jsonable()
    except connector.ConnectorError as exc:
        cert_json = {"error": str(exc)}
        fcip_ok = False
    conclusion = checker.stability_conclusion(verdict, origin, fcip_ok)

    report = {
        "scenario_hash": digest,
        "command": "classify",
        "system": system.to_jsonable(),
        "candidate": candidate.to_jsonable(),
        "origin": origin.value,
        "classification": verdict.classification.value,
        "weak_supersolution": verdict.weak_supersolution,
        "plain_supersolution": plain.plain_supersolution.value,
        "rate": verdict.rate,
        "conclusion": conclusion.value,
        "caveats": [
            "grid evidence only: the pointwise condition was sampled, not proven",
            "local Lipschitz continuity of the coefficients is assumed, "
            "not verified",
        ],
        "fcip": cert_json,
        "worst_margin": verdict.worst_margin,
        "notes": verdict.notes,
        "counterexamples": [c.to_jsonable() for c in plain.counterexamples[:10]],
        "grid": verdict.grid_meta,
    }
    out = Path(args.out)
    _write(out, "classify.json", jsonio.dumps(report))
    _write(out, "classify_margins.csv", verdict.margins_csv())
    print(f"classification: {verdict.classification.value}; "
          f"conclusion: {conclusion.value}")
    return EXIT_OK if conclusion is not checker.StabilityConclusion.NONE \
        else EXIT_NOT_VERIFIED


def cmd_lqg(args) -> int:
    scenario, digest = _load_scenario(args.scenario)
    spec = _section(scenario, "lqg")
    try:
        problem = lqg.LqgProblem.from_json(spec)
    except (KeyError, ValueError) as exc:
        raise ScenarioError(f"lqg: {exc}") from exc
    cert = lqg.certify_nas(problem)
    report = {"scenario_hash": digest, "command": "lqg"}
    report.update(cert.to_jsonable())
    _write(Path(args.out), "lqg_certificate.json", jsonio.dumps(report))
    print(f"lqg NAS certificate: {'granted' if cert.nas else 'withheld'}"
          + (" (ASiP-eligible: noiseless)" if cert.asip_eligible else ""))
    return EXIT_OK if cert.nas else EXIT_NOT_VERIFIED


def cmd_simulate(args) -> int:
    scenario, digest = _load_scenario(args.scenario)
    system = _load_system(scenario)
    cfg = _load_sim_config(scenario, args.seed)
    x0 = _sim_x0(scenario, system.n)
    stats = montecarlo.simulate(system, x0, cfg, threads=args.threads)
    payload = {"scenario_hash": digest, "command": "simulate"}
    payload.update(stats.to_jsonable())
    out = Path(args.out)
    _write(out, "simulate_stats.json", jsonio.dumps(payload))
    _write(out, "simulate_envelope.csv", stats.envelope_csv())
    if stats.retained is not None:
        _write(out, "simulate_paths.csv", _paths_csv(stats, cfg))
    print(f"simulated {cfg.n_paths} paths over T={cfg.horizon}; "
          f"{stats.n_hit} hit the origin, {stats.n_exploded} exploded")
    return EXIT_OK


def _paths_csv(stats, cfg):
    retained = stats.retained
    steps, m, n = retained.shape
    header = ["t"] + [f"path{j}_x{i+1}" for j in range(m) for i in range(n)]
    lines = [",".join(header)]
    for k in range(steps):
        row = [format(k * cfg.dt, ".17g")]
        row += [format(retained[k, j, i], ".17g")
                for j in range(m) for i in range(n)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_smooth(args) -> int:
    scenario, digest = _load_scenario(args.scenario)
    spec = scenario.get("connector", {})
    a = float(spec.get("a", 0.05))
    b = float(spec.get("b", 0.4))
    p = float(spec.get("p", 4.0))
    inner = ex.parse(spec["inner"], 1) if spec.get("inner") else None
    fitted = connector.fit_connector(a, b, p, inner)
    out = Path(args.out)
    _write(out, "connector_curve.csv", connector.connector_csv(fitted))
    payload = {"scenario_hash": digest, "command": "smooth"}
    payload.update(fitted.to_jsonable())
    _write(out, "connector_spec.json", jsonio.dumps(payload))
    print(f"connector fitted on [{a}, {b}] with exponent {p}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    entries = []
    if out.is_dir():
        for path in sorted(out.glob("*.json")):
            if path.name == "summary.json":
                continue
            try:
                obj = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ScenarioError(f"{path.name}: {exc}") from exc
            entry = {"file": path.name}
            for key in ("scenario_hash", "command", "classification",
                        "conclusion", "nas", "verdict"):
                if isinstance(obj, dict) and key in obj:
                    entry[key] = obj[key]
            entries.append(entry)
    _write(out, "summary.json", jsonio.dumps({"artifacts": entries}))
    print(f"merged {len(entries)} artifact(s) into summary.json")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slfcert",
        description="stochastic Lyapunov certification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_scenario in (
        ("classify", cmd_classify, True),
        ("lqg", cmd_lqg, True),
        ("simulate", cmd_simulate, True),
        ("smooth", cmd_smooth, True),
        ("report", cmd_report, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=needs_scenario)
        p.add_argument("--out", required=True)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None and "SLFCERT_SEED" in os.environ:
        try:
            args.seed = int(os.environ["SLFCERT_SEED"])
        except ValueError:
            print("error: SLFCERT_SEED must be an integer", file=_sys.stderr)
            return EXIT_ERROR
    try:
        return args.fn(args)
    except (ScenarioError, ex.ExprError, connector.ConnectorError,
            lqg.RiccatiError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    _sys.exit(main())
