"""End-to-end orchestration: calibrate -> plan -> optimize -> accumulate ->
extract -> report, plus certificate serialization and the bundled
five-instance replay driver.

A certificate embeds the SHA-256 of every input (count tables, trial
files, seed bits, configuration) so a third party can re-verify the
running log2-factor value from raw data.  Certificates serialize to JSON
with factor entries as decimal strings at full precision; repeated runs of
a fixed configuration are byte-identical apart from the timestamp field.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__ as _pkg_version
from .backend import backend_name
from .bell_model import (
    BiasPolytope,
    ConditionalDistribution,
    InputDistribution,
    VertexList,
    bias_vertices,
    build_polytope,
    enumerate_vertices,
)
from .calibration import CountTable, max_likelihood
from .pef import (
    DEFAULT_F_MAX,
    PefTable,
    PlanningReport,
    expected_trials,
    failure_probability,
    optimize_beta,
)
from .protocol import (
    ProtocolParams,
    RunCertificate,
    accumulate,
    accumulate_counts,
    certified_entropy,
    plan_parameters,
)
from .simulator import (
    PRNG_VERSION,
    SimConfig,
    iter_trial_codes,
    read_trials,
    sample_codes,
    tally,
    write_trials,
)
from .trevisan import extract, extraction_header, extractor_params, weak_design

__all__ = [
    "PipelineConfig",
    "StageError",
    "run_instance",
    "write_certificate",
    "certificate_to_json",
    "load_reference_tables",
    "replay_reference_instances",
    "read_trials",
    "write_trials",
]

DEFAULT_SUBBLOCK = 100_000


class StageError(RuntimeError):
    """Failure inside one pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    """One protocol instance: request, model assumptions, data sources."""

    k: int = 512
    eps: float = 2.0**-64
    split_sigma: float = 0.8
    eps_b: float = 1e-3
    f_max: float = DEFAULT_F_MAX
    calibration_counts: CountTable | None = None
    calibration_file: str | None = None
    run_trials_file: str | None = None
    run_sim_seed: int | None = None
    run_sim_nu: ConditionalDistribution | None = None  # default: calibrated fit
    seed_file: str | None = None
    seed_rng_seed: int | None = None
    beta_range: tuple[float, float] = (1e-3, 0.05)
    subblock_size: int | None = None
    skip_extraction: bool = False

    @staticmethod
    def from_dict(raw: dict) -> "PipelineConfig":
        req = raw.get("request", {})
        cal = raw.get("calibration", {})
        run = raw.get("run", {})
        counts = None
        if "counts" in cal:
            counts = CountTable(np.array(cal["counts"]))
        nu = None
        if "nu" in run:
            nu = ConditionalDistribution(np.array(run["nu"]))
        return PipelineConfig(
            k=int(req.get("k", 512)),
            eps=float(req.get("eps", 2.0**-64)),
            split_sigma=float(req.get("split_sigma", 0.8)),
            eps_b=float(raw.get("eps_b", 1e-3)),
            f_max=float(raw.get("f_max", DEFAULT_F_MAX)),
            calibration_counts=counts,
            calibration_file=cal.get("counts_file"),
            run_trials_file=run.get("trials_file"),
            run_sim_seed=run.get("rng_seed"),
            run_sim_nu=nu,
            seed_file=raw.get("seed_file"),
            seed_rng_seed=raw.get("seed_rng_seed"),
            beta_range=tuple(raw.get("beta_range", (1e-3, 0.05))),
            subblock_size=raw.get("subblock_size"),
            skip_extraction=bool(raw.get("skip_extraction", False)),
        )


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _calibration_counts(cfg: PipelineConfig) -> tuple[CountTable, str]:
    if cfg.calibration_counts is not None:
        counts = cfg.calibration_counts
    elif cfg.calibration_file:
        path = Path(cfg.calibration_file)
        if path.suffix == ".json":
            counts = CountTable(np.array(json.loads(path.read_text())))
        else:
            counts = tally(iter_trial_codes(path))
    else:
        raise ValueError("no calibration source configured")
    digest = _sha256_bytes(
        json.dumps(counts.counts.tolist(), separators=(",", ":")).encode()
    )
    return counts, digest


def _run_stream(cfg: PipelineConfig, nu, n_budget) -> tuple[Iterator[np.ndarray], dict]:
    if cfg.run_trials_file:
        meta = {"trials_sha256": _sha256_file(cfg.run_trials_file)}
        return iter_trial_codes(cfg.run_trials_file), meta
    if cfg.run_sim_seed is None:
        raise ValueError("no run source configured (trials file or simulator seed)")
    sim = SimConfig(
        nu=cfg.run_sim_nu or nu,
        input_dist=InputDistribution.uniform(),
        n=n_budget,
        rng_seed=cfg.run_sim_seed,
    )
    meta = {"simulator": {"rng_seed": sim.rng_seed, "prng": PRNG_VERSION}}
    return sample_codes(sim), meta


def _seed_bits(cfg: PipelineConfig, d_provided: int) -> tuple[np.ndarray, dict]:
    if cfg.seed_file:
        raw = Path(cfg.seed_file).read_bytes()
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        if bits.size < d_provided:
            raise ValueError(
                f"seed file provides {bits.size} bits, need {d_provided}"
            )
        return bits[:d_provided], {"seed_sha256": _sha256_bytes(raw)}
    if cfg.seed_rng_seed is None:
        raise ValueError("no extractor seed configured (seed file or seed_rng_seed)")
    gen = np.random.Generator(np.random.Philox(key=cfg.seed_rng_seed))
    bits = gen.integers(0, 2, size=d_provided, dtype=np.uint8)
    return bits, {"seed_rng_seed": cfg.seed_rng_seed, "seed_prng": PRNG_VERSION}


def _output_bits(cfg: PipelineConfig, nu, n_act: int, m: int) -> np.ndarray:
    """Extractor input: trial outputs (a then b per trial) for the first
    n_act trials, zero-padded to m bits."""
    bits = np.zeros(m, dtype=np.uint8)
    pos = 0
    stream, _ = _run_stream(cfg, nu, n_act)
    for codes in stream:
        if pos >= 2 * n_act:
            break
        codes = codes[: (2 * n_act - pos + 1) // 2]
        c = codes & 3
        bits[pos : pos + 2 * codes.size : 2] = c & 1        # a
        bits[pos + 1 : pos + 1 + 2 * codes.size : 2] = c >> 1  # b
        pos += 2 * codes.size
    return bits


def run_instance(cfg: PipelineConfig, model_vertices: VertexList | None = None) -> RunCertificate:
    """Execute one full protocol instance per the configuration."""
    meta: dict = {"config_sha256": _config_hash(cfg), "backend": backend_name()}

    try:
        counts, cal_digest = _calibration_counts(cfg)
        meta["calibration_sha256"] = cal_digest
        h = build_polytope(tsirelson=True)
        fit = max_likelihood(counts, h)
        nu = fit.nu
    except Exception as exc:  # noqa: BLE001
        raise StageError("calibration", exc) from exc

    try:
        params = plan_parameters(cfg.k, cfg.eps, cfg.split_sigma)
        vertices = model_vertices or enumerate_vertices(h)
        bias = bias_vertices(cfg.eps_b)
        beta, pef, plan = optimize_beta(
            nu,
            InputDistribution.uniform(),
            params.sigma,
            params.eps_sigma,
            vertices,
            bias,
            beta_range=cfg.beta_range,
            f_max=cfg.f_max,
        )
        params = params.with_budget(plan.n_budget)
        meta["planning"] = {
            "beta": round(beta, 3),
            "n_exp": plan.n_exp,
            "p_fail_bound": plan.p_fail_bound,
            "entropy_rate": plan.entropy_rate,
        }
    except Exception as exc:  # noqa: BLE001
        raise StageError("planning", exc) from exc

    try:
        stream, run_meta = _run_stream(cfg, nu, params.n_budget)
        meta.update(run_meta)
        cert = accumulate(stream, pef, params, subblock_size=cfg.subblock_size)
    except Exception as exc:  # noqa: BLE001
        raise StageError("accumulation", exc) from exc

    extracted = None
    if cert.success and not cfg.skip_extraction:
        try:
            xp = extractor_params(2 * params.n_budget, cfg.k, params.eps_x)
            design = weak_design(xp)
            seed_bits, seed_meta = _seed_bits(cfg, xp.d_provided)
            meta.update(seed_meta)
            input_bits = _output_bits(cfg, nu, cert.n_act, xp.m)
            bits = extract(input_bits, seed_bits, xp, design)
            extracted = np.packbits(bits).tobytes()
            meta["extraction"] = extraction_header(xp)
        except Exception as exc:  # noqa: BLE001
            raise StageError("extraction", exc) from exc

    meta["fit_kkt_residual"] = fit.kkt_residual
    return RunCertificate(
        L=cert.L,
        n_act=cert.n_act,
        success=cert.success,
        certified_entropy=cert.certified_entropy,
        params=params,
        pef=pef,
        extracted=extracted,
        meta=meta,
    )


def _config_hash(cfg: PipelineConfig) -> str:
    blob = repr(
        (
            cfg.k,
            cfg.eps,
            cfg.split_sigma,
            cfg.eps_b,
            cfg.f_max,
            None if cfg.calibration_counts is None else cfg.calibration_counts.counts.tolist(),
            cfg.calibration_file,
            cfg.run_trials_file,
            cfg.run_sim_seed,
            None if cfg.run_sim_nu is None else cfg.run_sim_nu.probs.tolist(),
            cfg.seed_file,
            cfg.seed_rng_seed,
            cfg.beta_range,
            cfg.subblock_size,
        )
    ).encode()
    return _sha256_bytes(blob)


def _sig12(x: float) -> float:
    return float(f"{x:.12g}")


def certificate_to_json(cert: RunCertificate) -> dict:
    p = cert.params
    doc = {
        "format": "qrandcert-certificate/v1",
        "params": {
            "k": p.k,
            "eps": p.eps,
            "eps_sigma": p.eps_sigma,
            "eps_x": p.eps_x,
            "sigma": p.sigma,
            "n_budget": p.n_budget,
        },
        "pef": {
            "grid": [[f"{v:.17g}" for v in row] for row in cert.pef.f],
            "beta": cert.pef.beta,
            "f_max": f"{cert.pef.f_max:.17g}",
        },
        "run": {
            "L": _sig12(cert.L),
            "n_act": cert.n_act,
            "success": bool(cert.success),
            "certified_entropy": _sig12(cert.certified_entropy),
        },
        "meta": cert.meta,
        "package_version": _pkg_version,
    }
    if cert.extracted is not None:
        doc["extracted_hex"] = cert.extracted.hex()
    return doc


def write_certificate(cert: RunCertificate, path: str | Path) -> dict:
    doc = certificate_to_json(cert)
    doc["timestamp"] = datetime.now(timezone.utc).isoformat()
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc


# ---------------------------------------------------------------------------
# Bundled five-instance reference dataset
# ---------------------------------------------------------------------------


def load_reference_tables() -> dict:
    with resources.files("qrandcert.data").joinpath("reference_tables.json").open() as fh:
        return json.load(fh)


@dataclass(frozen=True)
class ReplayResult:
    instance: int
    beta: float
    n_budget: int
    p_fail_bound: float
    entropy_rate: float
    certified_entropy: float
    n_act: int
    success: bool
    certificate: RunCertificate = field(repr=False)


def replay_reference_instances(
    instances: tuple[int, ...] = (1, 2, 3, 4, 5),
    vertices: VertexList | None = None,
) -> list[ReplayResult]:
    """Re-run planning and batch accumulation for the bundled dataset.

    Planning (power search, trial budget, failure bound) runs on the
    calibration counts with the scaling constant at exactly 1, matching the
    dataset's budget accounting; accumulation applies the certified
    constant as a per-trial penalty.  Each instance is replayed from its
    published calibration and analysis count tables.
    """
    ref = load_reference_tables()
    h = build_polytope(tsirelson=True)
    if vertices is None:
        vertices = enumerate_vertices(h)
    bias = bias_vertices(1e-3)
    params0 = plan_parameters(512, 2.0**-64, 0.8)
    results = []
    for inst in instances:
        key = str(inst)
        counts = CountTable(np.array(ref["calibration_counts"][key]["grid"]))
        fit = max_likelihood(counts, h)
        beta, pef_plan, plan = optimize_beta(
            fit.nu,
            InputDistribution.uniform(),
            params0.sigma,
            params0.eps_sigma,
            vertices,
            bias,
            f_max=1.0,
        )
        params = params0.with_budget(plan.n_budget)
        pef_run = PefTable(pef_plan.f, pef_plan.beta, DEFAULT_F_MAX)
        ana = CountTable(np.array(ref["analysis_counts"][key]["grid"]))
        cert = accumulate_counts(ana, pef_run, params)
        results.append(
            ReplayResult(
                instance=inst,
                beta=round(beta, 3),
                n_budget=plan.n_budget,
                p_fail_bound=plan.p_fail_bound,
                entropy_rate=cert.L / (pef_run.beta * cert.n_act),
                certified_entropy=cert.certified_entropy,
                n_act=cert.n_act,
                success=cert.success,
                certificate=cert,
            )
        )
    return results
