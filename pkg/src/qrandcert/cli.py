"""Command-line interface.

Exit codes: 0 success, 2 protocol failure (entropy threshold not reached),
1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backend import backend_name
from .bell_model import (
    ConditionalDistribution,
    InputDistribution,
    bias_vertices,
    build_polytope,
    chsh_value,
    enumerate_vertices,
)
from .calibration import CountTable, max_likelihood, statistical_strength
from .eat import EatInputs, n_eat
from .pef import DEFAULT_F_MAX, PefTable, optimize_beta, optimize_pef, validate_pef
from .pipeline import (
    PipelineConfig,
    StageError,
    certificate_to_json,
    load_reference_tables,
    replay_reference_instances,
    run_instance,
    write_certificate,
)
from .protocol import plan_parameters
from .simulator import (
    SimConfig,
    sample_trials,
    write_trials,
    write_trials_csv,
)
from .trevisan import extract, extraction_header, extractor_params, weak_design

PROTOCOL_FAILED = 2
USAGE_ERROR = 1


def _read_json(path):
    return json.loads(Path(path).read_text())


def _emit(doc, out):
    text = json.dumps(doc, indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_counts(path) -> CountTable:
    raw = _read_json(path)
    grid = raw["counts"] if isinstance(raw, dict) and "counts" in raw else raw
    return CountTable(np.array(grid))


def cmd_calibrate(args):
    counts = _load_counts(args.counts)
    h = build_polytope(tsirelson=True)
    fit = max_likelihood(counts, h)
    doc = {
        "nu": fit.nu.probs.tolist(),
        "log_likelihood": fit.log_likelihood,
        "kkt_residual": fit.kkt_residual,
        "chsh_value": chsh_value(fit.nu),
        "statistical_strength_bits": statistical_strength(fit.nu),
    }
    _emit(doc, args.out)
    return 0


def cmd_plan(args):
    params = plan_parameters(args.k, args.eps, args.split_sigma)
    doc = {
        "k": params.k,
        "eps": params.eps,
        "eps_sigma": params.eps_sigma,
        "eps_x": params.eps_x,
        "sigma": params.sigma,
    }
    _emit(doc, args.out)
    return 0


def cmd_optimize_pef(args):
    nu = ConditionalDistribution(np.array(_read_json(args.nu)))
    params = plan_parameters(args.k, args.eps, args.split_sigma)
    vertices = enumerate_vertices(build_polytope(tsirelson=True))
    bias = bias_vertices(args.eps_b)
    uniform = InputDistribution.uniform()
    if args.beta is not None:
        pef = optimize_pef(nu, uniform, args.beta, vertices, bias)
        pef = PefTable(pef.f, pef.beta, args.f_max)
        beta = args.beta
        planning = None
    else:
        beta, pef, plan = optimize_beta(
            nu, uniform, params.sigma, params.eps_sigma, vertices, bias,
            f_max=args.f_max,
        )
        planning = {
            "n_exp": plan.n_exp,
            "n_budget": plan.n_budget,
            "p_fail_bound": plan.p_fail_bound,
            "entropy_rate": plan.entropy_rate,
        }
    doc = {
        "beta": round(beta, 3),
        "beta_raw": beta,
        "f_max": pef.f_max,
        "pef": [[f"{v:.17g}" for v in row] for row in pef.f],
        "constraint_value": validate_pef(pef, vertices, bias),
    }
    if planning:
        doc["planning"] = planning
    _emit(doc, args.out)
    return 0


def _config_from_args(args) -> PipelineConfig:
    if args.config:
        raw = _read_json(args.config)
    else:
        raw = {}
    cfg = PipelineConfig.from_dict(raw)
    overrides = {}
    if args.eps_b is not None:
        overrides["eps_b"] = args.eps_b
    if args.f_max is not None:
        overrides["f_max"] = args.f_max
    if args.subblock_size is not None:
        overrides["subblock_size"] = args.subblock_size
    if args.seed_file is not None:
        overrides["seed_file"] = args.seed_file
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def cmd_run(args):
    cfg = _config_from_args(args)
    cert = run_instance(cfg)
    if args.out:
        write_certificate(cert, args.out)
        if cert.extracted is not None and args.bits_out:
            Path(args.bits_out).write_bytes(cert.extracted)
    else:
        _emit(certificate_to_json(cert), None)
    return 0 if cert.success else PROTOCOL_FAILED


def cmd_extract(args):
    raw = Path(args.input).read_bytes()
    input_bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    m = args.m if args.m is not None else input_bits.size
    if input_bits.size < m:
        raise ValueError(f"input file has {input_bits.size} bits, need m={m}")
    input_bits = input_bits[:m]
    params = extractor_params(m, args.k, args.eps_x)
    seed_raw = Path(args.seed_file).read_bytes()
    seed_bits = np.unpackbits(np.frombuffer(seed_raw, dtype=np.uint8), bitorder="little")
    if seed_bits.size < params.d_provided:
        raise ValueError(
            f"seed file has {seed_bits.size} bits, need {params.d_provided}"
        )
    bits = extract(input_bits, seed_bits[: params.d_provided], params)
    doc = extraction_header(params)
    doc["bits_hex"] = np.packbits(bits).tobytes().hex()
    _emit(doc, args.out)
    return 0


def cmd_simulate(args):
    nu = ConditionalDistribution(np.array(_read_json(args.nu)))
    cfg = SimConfig(
        nu=nu,
        input_dist=InputDistribution.uniform(),
        n=args.n,
        rng_seed=args.seed,
    )
    if args.csv:
        n = write_trials_csv(sample_trials(cfg), args.out)
    else:
        n = write_trials(sample_trials(cfg), args.out)
    print(f"wrote {n} trials to {args.out}", file=sys.stderr)
    return 0


def cmd_eat_compare(args):
    inputs = EatInputs(
        I_hat=2.0 + args.violation,
        sigma=args.sigma,
        eps_sigma=args.eps_sigma,
        kappa=args.kappa,
    )
    n, pt = n_eat(inputs)
    doc = {
        "I_hat": inputs.I_hat,
        "sigma": inputs.sigma,
        "eps_sigma": inputs.eps_sigma,
        "kappa": inputs.kappa,
        "n_eat": n,
        "p_t_star": pt,
        "runtime_hours_at_rate": n / args.rate / 3600.0,
    }
    _emit(doc, args.out)
    return 0


def cmd_replay_paper(args):
    instances = tuple(int(t) for t in args.instances.split(","))
    results = replay_reference_instances(instances)
    ref = load_reference_tables()
    rows = []
    for r in results:
        rows.append(
            {
                "instance": r.instance,
                "beta": r.beta,
                "n_budget": r.n_budget,
                "n_budget_reference": ref["trial_budgets"][str(r.instance)],
                "p_fail_bound": r.p_fail_bound,
                "entropy_rate": r.entropy_rate,
                "entropy_rate_reference": ref["entropy_rates"][str(r.instance)],
                "certified_entropy": r.certified_entropy,
                "n_act": r.n_act,
                "success": r.success,
            }
        )
        if args.out_dir:
            path = Path(args.out_dir) / f"instance-{r.instance}.json"
            write_certificate(r.certificate, path)
    _emit({"instances": rows, "backend": backend_name()}, args.out)
    return 0 if all(r.success for r in results) else PROTOCOL_FAILED


def cmd_full(args):
    return cmd_run(args)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qrandcert",
        description="CHSH randomness certification: calibration, factor "
        "optimization, entropy accumulation, extraction.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="maximum-likelihood fit from a counts JSON")
    c.add_argument("--counts", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("plan", help="error split and entropy threshold for a request")
    c.add_argument("--k", type=int, default=512)
    c.add_argument("--eps", type=float, default=2.0**-64)
    c.add_argument("--split-sigma", type=float, default=0.8)
    c.add_argument("--out")
    c.set_defaults(func=cmd_plan)

    c = sub.add_parser("optimize-pef", help="optimal factor table for a behaviour")
    c.add_argument("--nu", required=True, help="JSON 4x4 conditional distribution")
    c.add_argument("--beta", type=float, help="fixed power (default: search)")
    c.add_argument("--k", type=int, default=512)
    c.add_argument("--eps", type=float, default=2.0**-64)
    c.add_argument("--split-sigma", type=float, default=0.8)
    c.add_argument("--eps-b", type=float, default=1e-3)
    c.add_argument("--f-max", type=float, default=DEFAULT_F_MAX)
    c.add_argument("--out")
    c.set_defaults(func=cmd_optimize_pef)

    for name, help_text in [
        ("run", "execute one protocol instance from a config"),
        ("full", "end-to-end instance (alias of run)"),
    ]:
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", help="pipeline config JSON")
        c.add_argument("--seed-file")
        c.add_argument("--eps-b", type=float)
        c.add_argument("--f-max", type=float)
        c.add_argument("--subblock-size", type=int)
        c.add_argument("--out", help="certificate path")
        c.add_argument("--bits-out", help="raw extracted-bits path")
        c.set_defaults(func=cmd_run if name == "run" else cmd_full)

    c = sub.add_parser("extract", help="run the strong extractor on packed bit files")
    c.add_argument("--input", required=True, help="raw input bits (little-endian packed)")
    c.add_argument("--seed-file", required=True)
    c.add_argument("--m", type=int, help="input length in bits (default: whole file)")
    c.add_argument("--k", type=int, default=512)
    c.add_argument("--eps-x", type=float, default=0.2 * 2.0**-64)
    c.add_argument("--out")
    c.set_defaults(func=cmd_extract)

    c = sub.add_parser("simulate", help="write a seeded i.i.d. trial file")
    c.add_argument("--nu", required=True, help="JSON 4x4 conditional distribution")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--csv", action="store_true")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("eat-compare", help="entropy-accumulation trial-count baseline")
    c.add_argument("--violation", type=float, required=True, help="CHSH value minus 2")
    c.add_argument("--sigma", type=float, default=1089)
    c.add_argument("--eps-sigma", type=float, default=0.8 * 2.0**-64)
    c.add_argument("--kappa", type=float, default=1.0)
    c.add_argument("--rate", type=float, default=1e5, help="trials/second for latency")
    c.add_argument("--out")
    c.set_defaults(func=cmd_eat_compare)

    c = sub.add_parser("replay-paper", help="re-run the bundled five-instance dataset")
    c.add_argument("--instances", default="1,2,3,4,5")
    c.add_argument("--out")
    c.add_argument("--out-dir", help="write per-instance certificates here")
    c.set_defaults(func=cmd_replay_paper)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
