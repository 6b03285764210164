"""Command-line experiment driver.

Every subcommand reads one YAML or JSON document (``--config``), validates
it strictly and writes its outputs to ``--out`` (default: ``$KERNELPM_OUT``
or ``./kernelpm-out``).  Each output embeds the resolved configuration and
the package version.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  On
failure a JSON error document is printed to stderr and written to
``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .errors import KernelPMError
from .exact import (DEFAULT_DENSE_CAP, dense_power_method, extremal_eigs, fidelity, ground_state, operator_for,
                    safe_shift, spectrum)
from .hamiltonian import HamiltonianSpec
from .kernel import DEFAULT_GAMMA, KernelParams, empirical_ntk, kernel_eval
from .krr import DEFAULT_LAMBDA, save_model
from .lattice import SpinConfig, build_lattice, single_site, translation_group, trivial_group
from .noisy_pm import NoiseSpec, noisy_pm_run, stepcount_bound, verify_stepcount_bound
from .sampler import EXCHANGE, SINGLE_FLIP, ZERO_MAGNETIZATION, SamplerConfig
from .scaling import fit_scaling
from .slpm import IterationRecord, SlpmConfig, run

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUT_ENV = "KERNELPM_OUT"
CSV_COLUMNS = ("iter", "energy_mean", "energy_stderr", "acceptance", "n_unique", "log_shift",
               "step_infid", "infid", "rel_err")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HamiltonianCfg(_Strict):
    model: Literal["TFI", "AFH"]
    dims: list[int] = Field(min_length=1, max_length=2)
    h: float = 0.0
    marshall: bool = False


class KernelCfg(_Strict):
    gamma: float = DEFAULT_GAMMA
    symmetry: Literal["translation", "none"] = "translation"
    z2_even: bool = True


class SamplerCfg(_Strict):
    move: Literal["single_flip", "exchange"] | None = None
    n_chains: int = Field(16, ge=1)
    burn_in_sweeps: int = Field(16, ge=0)
    sweeps_per_sample: int = Field(1, ge=1)
    constraint: Literal["zero_magnetization"] | None = None


class SlpmCfg(_Strict):
    shift: float | None = None
    n_iters: int = Field(300, ge=0)
    n_samples: int = Field(4096, ge=1)
    lambda_ridge: float = Field(DEFAULT_LAMBDA, gt=0)
    energy_eval_samples: int = Field(4096, ge=1)
    track_exact: bool = False
    count_reg: bool = False
    full_basis_dataset: bool = False
    sign_policy: Literal["error", "abs"] | None = None
    reference_energy: float | None = None
    save_model: bool = True


class NoiseCfg(_Strict):
    epsilon: float = Field(gt=0)
    eps_scale: float = Field(1.0, ge=0)
    parallel_fraction: float = Field(1.0, ge=0)
    at_boundary: bool = True
    steps: int | None = Field(None, ge=0)
    shift: float | None = None
    initial: Literal["uniform", "random"] = "uniform"

    @field_validator("epsilon")
    @classmethod
    def _premise(cls, v):
        if v >= 0.5:
            raise ValueError("the convergence theorem requires epsilon < 1/2")
        return v


class ExactCfg(_Strict):
    # method of the E1/Emax report; E0 always comes from the dense power method
    method: Literal["power", "lanczos"] = "lanczos"
    sector: Literal["full", "zero_magnetization"] | None = None
    tol: float = Field(1e-11, gt=0)


class NtkCfg(_Strict):
    dims: list[int] = Field(default_factory=lambda: [8], min_length=1, max_length=2)
    width: int = Field(65536, ge=1)
    n_pairs: int = Field(20, ge=1)
    tolerance: float = Field(0.05, gt=0)


class ScalingCfg(_Strict):
    points: list[tuple[float, float]] = Field(min_length=3)


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    hamiltonian: HamiltonianCfg | None = None
    kernel: KernelCfg = KernelCfg()
    sampler: SamplerCfg = SamplerCfg()
    slpm: SlpmCfg | None = None
    noise: NoiseCfg | None = None
    exact: ExactCfg = ExactCfg()
    ntk: NtkCfg | None = None
    scaling: ScalingCfg | None = None
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)


class ConfigError(ValueError):
    pass


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(doc or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def lattice_from_dims(dims):
    return single_site() if list(dims) == [1] else build_lattice(tuple(dims))


def build_spec(cfg: ExperimentConfig) -> HamiltonianSpec:
    if cfg.hamiltonian is None:
        raise ConfigError("this command needs a 'hamiltonian' section")
    hc = cfg.hamiltonian
    try:
        return HamiltonianSpec(hc.model, lattice_from_dims(hc.dims), hc.h, hc.marshall)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_kernel(cfg: ExperimentConfig, lattice) -> KernelParams:
    kc = cfg.kernel
    group = translation_group(lattice) if kc.symmetry == "translation" else trivial_group(lattice.n_sites)
    try:
        return KernelParams(group, kc.gamma, kc.z2_even)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_sampler(cfg: ExperimentConfig, spec: HamiltonianSpec, seed: int) -> SamplerConfig:
    sc = cfg.sampler
    move = sc.move or (EXCHANGE if spec.model == "AFH" else SINGLE_FLIP)
    constraint = sc.constraint
    if sc.move is None and spec.model == "AFH":
        constraint = ZERO_MAGNETIZATION
    try:
        return SamplerConfig(move, sc.n_chains, sc.burn_in_sweeps, sc.sweeps_per_sample, seed, constraint)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_slpm(cfg: ExperimentConfig, seed: int, dense_cap: int) -> SlpmConfig:
    if cfg.slpm is None:
        raise ConfigError("run-slpm needs an 'slpm' section")
    spec = build_spec(cfg)
    s = cfg.slpm
    try:
        return SlpmConfig(
            hamiltonian=spec, kernel=build_kernel(cfg, spec.lattice), shift=s.shift, n_iters=s.n_iters,
            n_samples=s.n_samples, lambda_ridge=s.lambda_ridge, sampler=build_sampler(cfg, spec, seed),
            energy_eval_samples=s.energy_eval_samples, seed=seed, track_exact=s.track_exact,
            dense_cap=dense_cap, count_reg=s.count_reg, full_basis_dataset=s.full_basis_dataset,
            sign_policy=s.sign_policy or ("abs" if spec.model == "AFH" else "error"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _echo(cfg: ExperimentConfig, **extra) -> dict:
    return {"version": __version__, "config": cfg.model_dump(mode="json"), **extra}


def _finite(o):
    """Strict JSON has no infinities or NaN; they are written as null."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (float, np.floating)) and not np.isfinite(o):
        return None
    return o


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_finite(doc), indent=2, sort_keys=True, default=_json_default, allow_nan=False) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvStream:
    """Append-only per-iteration CSV, flushed after every row."""

    def __init__(self, path: Path, header_comment: str):
        self.file = open(path, "w", newline="")
        self.file.write(f"# {header_comment}\n")
        self.writer = csv.writer(self.file)
        self.writer.writerow(CSV_COLUMNS)
        self.file.flush()

    def __call__(self, rec: IterationRecord):
        self.writer.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
        self.file.flush()

    def close(self):
        self.file.close()


def cmd_run_slpm(cfg: ExperimentConfig, out: Path, dense_cap: int, threads: int) -> dict:
    slpm_cfgs = [build_slpm(cfg, seed, dense_cap) for seed in cfg.seeds]
    spec = slpm_cfgs[0].hamiltonian
    reference = cfg.slpm.reference_energy
    if reference is None and spec.n_sites <= dense_cap:
        reference = ground_state(spec, slpm_cfgs[0].sampler.constraint or "full")[0]

    def one(scfg: SlpmConfig) -> dict:
        stem = f"slpm_seed{scfg.seed}"
        echo = json.dumps(_echo(cfg, seed=scfg.seed), sort_keys=True)
        stream = CsvStream(out / f"{stem}.csv", f"kernelpm {__version__} {echo}")
        try:
            res = run(scfg, on_record=stream)
        finally:
            stream.close()
        mean, stderr = res.final_energy
        summary = _echo(cfg, seed=scfg.seed, final_energy=mean, final_energy_stderr=stderr,
                        reference_energy=reference, n_records=len(res.records),
                        rel_err=None if reference is None else abs(mean - reference) / abs(reference),
                        shift=scfg.shift_value, warm_start=res.meta.get("warm_start"))
        _write_json(out / f"{stem}_summary.json", summary)
        _write_json(out / f"{stem}_timings.json", res.timings)
        if cfg.slpm.save_model:
            save_model(res.final_model, out / f"{stem}_model.npz")
        return summary

    if threads > 1 and len(slpm_cfgs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            summaries = list(pool.map(one, slpm_cfgs))
    else:
        summaries = [one(c) for c in slpm_cfgs]
    return {"runs": [{k: s[k] for k in ("seed", "final_energy", "final_energy_stderr", "rel_err")} for s in summaries]}


def cmd_run_exact(cfg: ExperimentConfig, out: Path, dense_cap: int, threads: int) -> dict:
    spec = build_spec(cfg)
    if spec.n_sites > dense_cap:
        raise ConfigError(f"N={spec.n_sites} exceeds the dense cap {dense_cap}")
    ec = cfg.exact
    basis = operator_for(spec, ec.sector).basis
    info = extremal_eigs(spec, tol=ec.tol, method=ec.method, basis=basis)
    e0, _ = dense_power_method(spec, safe_shift(spec, basis), tol=ec.tol, basis=basis)
    doc = _echo(cfg, E0=e0, E0_spectrum=info.E0, E1=info.E1, Emax=info.Emax, gap=info.gap,
                degenerate=info.degenerate, sector=basis.sector, dim=basis.dim)
    _write_json(out / "exact.json", doc)
    return {k: doc[k] for k in ("E0", "E1", "Emax", "gap", "degenerate")}


def cmd_run_noisy_pm(cfg: ExperimentConfig, out: Path, dense_cap: int, threads: int) -> dict:
    spec = build_spec(cfg)
    if cfg.noise is None:
        raise ConfigError("run-noisy-pm needs a 'noise' section")
    if spec.n_sites > dense_cap:
        raise ConfigError(f"N={spec.n_sites} exceeds the dense cap {dense_cap}")
    nc = cfg.noise
    op = operator_for(spec, cfg.exact.sector)
    info = spectrum(spec, op.basis.sector)
    shift = 0.5 * (info.E1 + info.Emax) if nc.shift is None else nc.shift
    _, ground = ground_state(spec, op.basis.sector)
    reports = []
    for seed in cfg.seeds:
        if nc.initial == "uniform":
            psi0 = np.ones(op.basis.dim)
        else:
            psi0 = np.random.default_rng(seed).standard_normal(op.basis.dim)
        f0 = fidelity(ground, psi0)
        steps = nc.steps
        if steps is None:
            bound = stepcount_bound(f0, nc.epsilon, info.ratio(shift))
            steps = int(np.ceil(bound)) + 10 if np.isfinite(bound) else 1000
        noise = NoiseSpec(nc.epsilon, nc.eps_scale, nc.parallel_fraction, seed, nc.at_boundary)
        try:
            rep = noisy_pm_run(spec, shift, psi0, noise, steps, info=info, sector=op.basis.sector)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        d = rep.to_dict()
        d.update(seed=seed, F0=f0, steps=steps,
                 stepcount_ok=verify_stepcount_bound(rep, f0, nc.epsilon, info, shift),
                 final_bound_ok=rep.final_infid <= nc.epsilon**2)
        reports.append(d)
    doc = _echo(cfg, shift=shift, spectrum={"E0": info.E0, "E1": info.E1, "Emax": info.Emax,
                                            "degenerate": info.degenerate}, reports=reports)
    _write_json(out / "noisy_pm.json", doc)
    return {"runs": len(reports),
            "all_contractions_hold": all(r["all_contractions_hold"] for r in reports),
            "all_stepcounts_ok": all(r["stepcount_ok"] for r in reports),
            "all_final_bounds_ok": all(r["final_bound_ok"] for r in reports)}


def cmd_verify_kernel(cfg: ExperimentConfig, out: Path, dense_cap: int, threads: int) -> dict:
    nc = cfg.ntk or NtkCfg()
    lattice = lattice_from_dims(nc.dims)
    p = build_kernel(cfg, lattice)
    seed = cfg.seeds[0]
    rng = np.random.default_rng(seed)
    n = lattice.n_sites
    pairs = [(SpinConfig(int(a), n), SpinConfig(int(b), n))
             for a, b in rng.integers(0, 1 << n, size=(nc.n_pairs, 2))]
    exact_k = np.array([kernel_eval(x, y, p) for x, y in pairs])
    ntk = empirical_ntk(p, nc.width, pairs, seed=seed)
    rel_rms = float(np.sqrt(np.mean((ntk - exact_k) ** 2) / np.mean(exact_k**2)))
    doc = _echo(cfg, kernel=exact_k, empirical=ntk, rel_rms=rel_rms, passed=rel_rms <= nc.tolerance)
    _write_json(out / "verify_kernel.json", doc)
    return {"rel_rms": rel_rms, "passed": rel_rms <= nc.tolerance}


def cmd_fit_scaling(cfg: ExperimentConfig, out: Path, dense_cap: int, threads: int) -> dict:
    if cfg.scaling is None:
        raise ConfigError("fit-scaling needs a 'scaling' section with at least 3 points")
    try:
        fit = fit_scaling(cfg.scaling.points)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    doc = _echo(cfg, alpha=fit.alpha, A=fit.A, r_squared=fit.r_squared)
    _write_json(out / "scaling.json", doc)
    return {"alpha": fit.alpha, "A": fit.A, "r_squared": fit.r_squared}


COMMANDS = {
    "run-slpm": cmd_run_slpm,
    "run-exact": cmd_run_exact,
    "run-noisy-pm": cmd_run_noisy_pm,
    "verify-kernel": cmd_verify_kernel,
    "fit-scaling": cmd_fit_scaling,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernelpm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kernelpm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML or JSON experiment document")
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./kernelpm-out)")
        p.add_argument("--seed", type=int, default=None, help="override the config's seed list with one seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for seed lists")
        p.add_argument("--dense-cap", type=int, default=DEFAULT_DENSE_CAP, help="largest N handled densely")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(out: Path | None, code: int, kind: str, exc: BaseException) -> int:
    doc = {"error": kind, "message": str(exc), "exit_code": code, "version": __version__}
    print(json.dumps(doc), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "error.json", doc)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    out = args.out or Path(os.environ.get(OUT_ENV, "kernelpm-out"))
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seeds": [args.seed]})
        if args.threads < 1 or args.dense_cap < 1:
            raise ConfigError("--threads and --dense-cap must be positive")
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out, args.dense_cap, args.threads)
    except ConfigError as exc:
        return _fail(out, EXIT_CONFIG, "config", exc)
    except (KernelPMError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(out, EXIT_NUMERICAL, "numerical", exc)
    print(json.dumps(_finite(result), default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
