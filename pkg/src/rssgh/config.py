"""Run configuration: one TOML file with nested sections, validated strictly.

Example::

    seed = 7

    [model]
    family = "LN"              # LN, LL, PGW, GAM, GG
    submodel = "RS-SGH"        # RS-SGH, RS-SPH, RS-SAFT, RS-AH, RS-GH, RS-PH, RS-AFT
    structure = "ICAR"         # None, IID, ICAR, BYM2 (placed on every allowed level)
    hazard_covariates = ["age_std", "sex"]
    time_covariates = ["age_std"]

    [hyper]
    sigma2_beta = 100.0        # N(0, sigma2) on hazard-level coefficients

    [sampler]
    chains = 4

    [paths]
    patients = "patients.csv"

Relative paths are resolved against the directory holding the file.
Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DomainError, ModelSpecError
from .hmc import SamplerConfig
from .model import HyperConfig, ModelSpec
from .simulate import CovariateScheme, SimConfig

# documented defaults of every prior hyperparameter
HYPER_DOC = {
    "sigma2_alpha": "N(0, sigma2) on time-level coefficients (100)",
    "sigma2_beta": "N(0, sigma2) on hazard-level coefficients (100)",
    "sigma2_mu": "N(0, sigma2) on the log-normal / log-logistic location (100)",
    "tau_sigma": "half-Cauchy scale for the LN/LL scale parameter (2.5)",
    "tau_eta": "half-Cauchy scale for the PGW/GAM/GG scale parameter (2.5)",
    "tau_nu": "half-Cauchy scale for the PGW/GAM/GG shape parameter (2.5)",
    "tau_sigma_gamma": "half-Cauchy scale on the g-prior variances (2.5)",
    "theta_tau": "Gamma(theta, theta) on IID precisions and Gamma(0.01, 0.01) on ICAR precisions (0.01)",
    "kappa_shape": "Gamma shape for the PGW/GG second shape parameter (0.65)",
    "kappa_rate": "Gamma rate for the PGW/GG second shape parameter (1.83)",
    "bym2_sigma_scale": "half-normal scale on the BYM2 marginal sd (1)",
    "bym2_rho_a": "Beta(a, b) on the BYM2 mixing weight, a (0.5)",
    "bym2_rho_b": "Beta(a, b) on the BYM2 mixing weight, b (0.5)",
    "sum_zero_sd": "soft sum-to-zero sd per region for ICAR effects (0.001)",
}

_MODEL_KEYS = {"family", "submodel", "structure", "time_structure", "hazard_structure", "hazard_covariates",
               "time_covariates", "splines", "overall_survival", "standardize"}
_PATH_KEYS = {"patients", "lifetable", "adjacency", "output"}
_TOP_KEYS = {"seed", "model", "hyper", "sampler", "paths", "simulate", "output"}


@dataclass
class OutputConfig:
    grid_steps: int = 200
    level: float = 0.95
    max_draws: int | None = 1000

    def __post_init__(self):
        if int(self.grid_steps) < 1:
            raise ConfigError("output.grid_steps must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("output.level must lie in (0, 1)")
        if self.max_draws is not None and int(self.max_draws) < 1:
            raise ConfigError("output.max_draws must be >= 1")


@dataclass
class RunConfig:
    seed: int = 1
    model: ModelSpec | None = None
    standardize: tuple = ()
    hyper: HyperConfig = field(default_factory=HyperConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    paths: dict = field(default_factory=dict)
    simulate: SimConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    raw: dict = field(default_factory=dict)

    def path(self, key: str) -> Path | None:
        v = self.paths.get(key)
        return None if v is None else Path(v)


def _reject_unknown(section: str, got: dict, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown keys at {where}: {', '.join(extra)}")


def _table(d: dict, key: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"[{key}] must be a table")
    return v


def _model(block: dict) -> tuple[ModelSpec, tuple]:
    _reject_unknown("model", block, _MODEL_KEYS)
    if "family" not in block:
        raise ConfigError("model.family is required")
    if "structure" in block and ("time_structure" in block or "hazard_structure" in block):
        raise ConfigError("give either model.structure or time_structure/hazard_structure, not both")
    splines = []
    for s in block.get("splines", []):
        if not isinstance(s, dict) or set(s) != {"column", "knots"}:
            raise ConfigError("each model.splines entry needs exactly 'column' and 'knots'")
        splines.append((s["column"], s["knots"]))
    kw = dict(
        hazard_covariates=tuple(block.get("hazard_covariates", ())),
        time_covariates=None if block.get("time_covariates") is None else tuple(block["time_covariates"]),
        spline_covariates=tuple(splines),
        overall_survival=bool(block.get("overall_survival", False)),
    )
    if "structure" in block:
        spec = ModelSpec.with_structure(block["family"], block.get("submodel", "RS-SGH"), block["structure"], **kw)
    else:
        spec = ModelSpec(block["family"], block.get("submodel", "RS-SGH"), block.get("time_structure"),
                         block.get("hazard_structure"), **kw)
    return spec, tuple(block.get("standardize", ()))


def _dataclass_from(cls, section: str, block: dict, **extra):
    names = {f.name for f in fields(cls)}
    _reject_unknown(section, block, names - set(extra))
    return cls(**{**block, **extra})


def parse_config(d: dict, base_dir: Path | None = None, check_paths=True) -> RunConfig:
    """Validate a parsed TOML document; raises ``ConfigError`` with a readable message.

    ``check_paths`` is ``True`` (every input path must exist), ``False``, or a
    collection of the path keys to check.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        _reject_unknown("", d, _TOP_KEYS)
        seed = d.get("seed", 1)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        spec, standardize = _model(_table(d, "model")) if "model" in d else (None, ())
        hyper = _dataclass_from(HyperConfig, "hyper", _table(d, "hyper"))
        sblock = dict(_table(d, "sampler"))
        if "seed" in sblock:
            raise ConfigError("the sampler seed comes from the top-level seed")
        sampler = _dataclass_from(SamplerConfig, "sampler", sblock, seed=seed)
        pblock = _table(d, "paths")
        _reject_unknown("paths", pblock, _PATH_KEYS)
        paths = {k: str((base / v).resolve()) for k, v in pblock.items()}
        if check_paths:
            keys = _PATH_KEYS - {"output"} if check_paths is True else set(check_paths)
            for k, v in sorted(paths.items()):
                if k in keys and not Path(v).exists():
                    raise ConfigError(f"paths.{k} does not exist: {v}")
        sim = None
        if "simulate" in d:
            sb = dict(_table(d, "simulate"))
            if "seed" in sb:
                raise ConfigError("the simulation seed comes from the top-level seed")
            cov = sb.pop("covariates", {})
            _reject_unknown("simulate.covariates", cov, {f.name for f in fields(CovariateScheme)})
            for k in ("theta", "alpha", "beta", "u_tilde", "u"):
                if sb.get(k) is not None:
                    sb[k] = tuple(sb[k])
            if "region_weights" in cov:
                cov["region_weights"] = tuple(cov["region_weights"])
            sim = _dataclass_from(SimConfig, "simulate", sb, seed=seed, covariates=CovariateScheme(**cov))
        out = _dataclass_from(OutputConfig, "output", _table(d, "output"))
    except ConfigError:
        raise
    except (ModelSpecError, DomainError, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    return RunConfig(seed, spec, standardize, hyper, sampler, paths, sim, out, d)


def load_config(path, check_paths=True) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(d, path.parent, check_paths)


def config_summary(cfg: RunConfig) -> dict:
    """JSON-ready view of the resolved configuration."""
    sampler = asdict(cfg.sampler)
    sampler.pop("seed")
    out = {"seed": cfg.seed, "paths": dict(cfg.paths), "hyper": asdict(cfg.hyper),
           "sampler": sampler, "output": asdict(cfg.output)}
    if cfg.model is not None:
        m = cfg.model
        out["model"] = {
            "family": m.family.value,
            "submodel": m.submodel.value,
            "time_structure": m.time_structure.value,
            "hazard_structure": m.hazard_structure.value,
            "hazard_covariates": list(m.hazard_covariates),
            "time_covariates": list(m.time_covariates),
            "splines": [{"column": c, "knots": k} for c, k in m.spline_covariates],
            "overall_survival": m.overall_survival,
            "standardize": list(cfg.standardize),
        }
    return out
