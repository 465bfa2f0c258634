"""Reproducible experiment runs: typed configs, a stage registry, manifests.

An experiment is a generator plus a list of check stages.  Running one
writes a directory: the canonical config, one JSON (and sometimes CSV)
artifact per stage, and a manifest recording the config hash, package
versions, per-stage verdicts, and the sha256 of every produced file.
Nothing time-dependent is written, so re-running a config must reproduce
every byte; verify_run re-runs and compares.
"""

from __future__ import annotations

import hashlib
import importlib.metadata
import json
import math
import platform
import tempfile
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field

from . import generators as gen
from .dyadic import DyadicCube, as_k, cover_tubes
from .incidence import (
    BoundReport,
    Configuration,
    check_discretized_st,
    check_tube_count,
    count_incidences,
    count_incidences_brute,
)
from .multiscale import (
    BoundParams,
    check_multiscale_bound,
    decompose,
    decompose_oracle,
    dichotomy_check,
    extract_product_structure,
    ledger_csv,
    refine_cover,
    refine_two_scale,
    scales_from_decomposition,
)
from .projections import exceptional_survey
from .spread import branching_function, check_spread

ENV_OUTPUT_ROOT = "INCIDENCELAB_RUNS"


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)  # "inf"/"nan" as strings keep the JSON strict
    return obj


def canonical_json(obj) -> str:
    """Stable serialization: sorted keys, fixed separators, trailing newline."""
    return json.dumps(_finite(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# generator specs
# ---------------------------------------------------------------------------


class Cantor1dGen(_Strict):
    kind: Literal["cantor1d"]
    s: float
    delta_k: int
    block: int | None = None
    seed: int | None = None
    min_gap: int = 1
    schedule: list[int] | None = None


class CantorTargetGen(_Strict):
    kind: Literal["cantor_target"]
    s: float
    t: float
    delta_k: int
    seed: int | None = None


class FurstenbergGen(_Strict):
    kind: Literal["furstenberg"]
    s: float
    t: float
    delta_k: int
    seed: int | None = None


class NiceRandomGen(_Strict):
    kind: Literal["nice_random"]
    delta_k: int
    s: float
    t: float
    c: float = 8.0
    m: int | None = None
    seed: int | None = None


class RegularGen(_Strict):
    kind: Literal["regular"]
    delta_k: int
    s: float
    t: float
    c: float = 8.0
    kappa: float = 4.0
    m: int | None = None
    lopsided: bool = False
    seed: int | None = None


class TwoRegimeGen(_Strict):
    kind: Literal["two_regime"]
    delta_k: int
    s: float
    t1: float
    t2: float
    c: float = 8.0
    m: int | None = None
    seed: int | None = None


class ProductGen(_Strict):
    kind: Literal["product_structure"]
    delta_k: int
    s: float
    t: float
    c: float = 8.0
    seed: int | None = None


class ExceptionalGen(_Strict):
    kind: Literal["exceptional_projection"]
    s: float
    t: float
    alpha: float
    delta_k: int
    seed: int | None = None


GeneratorSpec = Annotated[
    Union[
        Cantor1dGen,
        CantorTargetGen,
        FurstenbergGen,
        NiceRandomGen,
        RegularGen,
        TwoRegimeGen,
        ProductGen,
        ExceptionalGen,
    ],
    Field(discriminator="kind"),
]


def _points_only(k: int, cubes) -> Configuration:
    from .dyadic import Scale

    return Configuration(delta=Scale(k), points=tuple(sorted(cubes)), tubes_of={})


def build_configuration(spec) -> Configuration:
    """Instantiate the generator; set-only outputs become fanless configs."""
    if spec.kind == "cantor1d":
        cs = gen.cantor1d(
            spec.s,
            spec.delta_k,
            block=spec.block,
            seed=spec.seed,
            min_gap=spec.min_gap,
            schedule=spec.schedule,
        )
        return _points_only(cs.k, (DyadicCube(cs.k, i, 0) for i in cs.indices))
    if spec.kind == "cantor_target":
        target = gen.cantor_target(spec.s, spec.t, spec.delta_k, seed=spec.seed)
        return _points_only(target.delta_k, target.cubes)
    if spec.kind == "furstenberg":
        return gen.furstenberg(spec.s, spec.t, spec.delta_k, seed=spec.seed)
    if spec.kind == "nice_random":
        return gen.nice_random(
            spec.delta_k, spec.s, spec.t, c=spec.c, m=spec.m, seed=spec.seed
        )
    if spec.kind == "regular":
        return gen.regular_random(
            spec.delta_k,
            spec.s,
            spec.t,
            c=spec.c,
            kappa=spec.kappa,
            m=spec.m,
            lopsided=spec.lopsided,
            seed=spec.seed,
        )
    if spec.kind == "two_regime":
        return gen.two_regime(
            spec.delta_k, spec.s, spec.t1, spec.t2, c=spec.c, m=spec.m, seed=spec.seed
        )
    if spec.kind == "product_structure":
        return gen.product_structure(spec.delta_k, spec.s, spec.t, c=spec.c, seed=spec.seed)
    if spec.kind == "exceptional_projection":
        ex = gen.exceptional_projection_config(
            spec.s, spec.t, spec.alpha, spec.delta_k, seed=spec.seed
        )
        return _points_only(ex.delta_k, ex.cubes)
    raise ValueError(f"unknown generator kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# stage specs
# ---------------------------------------------------------------------------


class CountStage(_Strict):
    stage: Literal["count"]
    check_brute: bool = False


class NicenessStage(_Strict):
    stage: Literal["niceness"]


class SpreadStage(_Strict):
    stage: Literal["spread"]
    s: float
    c: float = 8.0


class TubeCountStage(_Strict):
    stage: Literal["tube_count"]
    budget: float | None = None


class IncidenceBoundStage(_Strict):
    stage: Literal["incidence_bound"]
    log_exponent: float = 3.0


class RefineCoverStage(_Strict):
    stage: Literal["refine_cover"]
    coarse_k: int
    floor_factor: float = 0.125


class TwoScaleStage(_Strict):
    stage: Literal["two_scale"]
    coarse_k: int


class DecomposeStage(_Strict):
    stage: Literal["decompose"]
    eps: float = 0.1
    s: float | None = None
    t: float | None = None
    good_threshold: float | None = None
    eps_n: float = 0.1
    eta: float = 0.1
    c_log: float = 4.0
    c_prime: float = 1.0


class DichotomyStage(_Strict):
    stage: Literal["dichotomy"]
    eps: float = 0.0


class ExtractStage(_Strict):
    stage: Literal["extract"]
    eps: float = 0.01
    budget: float = 16.0
    typical_fraction: float = 0.5


class SurveyStage(_Strict):
    stage: Literal["survey"]
    s: float
    expect_none: bool = True


class DimensionStage(_Strict):
    stage: Literal["dimension"]
    target: float
    tol: float = 0.15
    lo_k: int = 0


StageSpec = Annotated[
    Union[
        CountStage,
        NicenessStage,
        SpreadStage,
        TubeCountStage,
        IncidenceBoundStage,
        RefineCoverStage,
        TwoScaleStage,
        DecomposeStage,
        DichotomyStage,
        ExtractStage,
        SurveyStage,
        DimensionStage,
    ],
    Field(discriminator="stage"),
]


class ExperimentConfig(_Strict):
    name: str
    generator: GeneratorSpec
    stages: list[StageSpec] = Field(min_length=1)

    def sha256(self) -> str:
        return _sha256(canonical_json(self.model_dump()))


# ---------------------------------------------------------------------------
# stage runners: each returns (passed, summary, files)
# ---------------------------------------------------------------------------


def _cube_row(c: DyadicCube) -> list[int]:
    return [c.k, c.ix, c.iy]


def _spread_json(rep) -> dict:
    return {
        "delta_k": rep.delta_k,
        "s": rep.s,
        "n_cubes": rep.n_cubes,
        "c_star": rep.c_star,
        "witness_scale": None if rep.witness_scale is None else as_k(rep.witness_scale),
        "witness_count": rep.witness_count,
        "declared_c": rep.declared_c,
        "pass": rep.passed,
    }


def _bound_passed(rep: BoundReport) -> bool:
    return rep.passed is not False  # measurement-only reports record, not fail


def _run_count(cfg: Configuration, spec: CountStage):
    out = {
        "declared": count_incidences(cfg, "declared"),
        "geometric": count_incidences(cfg, "geometric"),
    }
    passed = True
    if spec.check_brute:
        out["brute"] = count_incidences_brute(cfg.points, cfg.all_tubes)
        passed = out["geometric"] == out["brute"]
    out["pass"] = passed
    return passed, out, {"count.json": canonical_json(out)}


def _run_niceness(cfg: Configuration, spec: NicenessStage):
    rep = cfg.check_nice()
    return bool(rep["pass"]), rep, {"niceness.json": canonical_json(rep)}


def _run_spread(cfg: Configuration, spec: SpreadStage):
    rep = check_spread(cfg.points, cfg.delta, spec.s, c=spec.c)
    doc = _spread_json(rep)
    return bool(rep.passed), doc, {"spread.json": canonical_json(doc)}


def _run_tube_count(cfg: Configuration, spec: TubeCountStage):
    rep = check_tube_count(cfg, budget=spec.budget)
    doc = rep.to_json()
    return _bound_passed(rep), doc, {"tube_count.json": canonical_json(doc)}


def _run_incidence_bound(cfg: Configuration, spec: IncidenceBoundStage):
    rep = check_discretized_st(cfg, log_exponent=spec.log_exponent)
    doc = rep.to_json()
    return _bound_passed(rep), doc, {"incidence_bound.json": canonical_json(doc)}


def _run_refine_cover(cfg: Configuration, spec: RefineCoverStage):
    if cfg.nice is None:
        raise ValueError("refine_cover stage needs niceness metadata")
    k = cfg.delta.k
    rc = refine_cover(
        cfg.points,
        cfg.tubes_of,
        k,
        spec.coarse_k,
        cfg.nice.s,
        cfg.nice.c,
        cfg.nice.m,
        floor_factor=spec.floor_factor,
    )
    log5 = max(float(k - spec.coarse_k), 2.0) ** 5
    pairs_before = sum(len(cfg.tubes_of[p]) for p in cfg.points)
    pairs_after = sum(len(rc.tubes_of[p]) for p in rc.points)
    doc = {
        "coarse_k": rc.coarse_k,
        "kept_points": len(rc.points),
        "kept_coarse_tubes": len(rc.coarse_tubes),
        "j_count": rc.j_count,
        "j_rep": rc.j_rep,
        "h_floor": rc.h_floor,
        "min_incidences": rc.min_incidences,
        "c2": rc.c2,
        "pairs_before": pairs_before,
        "pairs_after": pairs_after,
        "budget_log5": log5,
    }
    passed = (
        rc.min_incidences >= rc.h_floor / 8
        and len(rc.points) >= len(cfg.points) / log5
        and rc.c2 <= log5 * cfg.nice.c
        and pairs_after <= pairs_before
    )
    doc["pass"] = passed
    return passed, doc, {
        "refine_cover.json": canonical_json(doc),
        "refine_cover_ledger.csv": rc.ledger_csv(),
    }


def _run_two_scale(cfg: Configuration, spec: TwoScaleStage):
    ts = refine_two_scale(cfg, spec.coarse_k)
    doc = {
        "coarse_k": spec.coarse_k,
        "clauses": ts.clauses,
        "product": ts.product,
        "windows": len(ts.windows),
        "coarse_points": len(ts.coarse_cfg.points),
        "pass": ts.passed,
    }
    return ts.passed, doc, {
        "two_scale.json": canonical_json(doc),
        "two_scale_ledger.csv": ts.ledger_csv(),
    }


def _run_decompose(cfg: Configuration, spec: DecomposeStage):
    k = cfg.delta.k
    f = branching_function(cfg.points, 1, k)
    s = spec.s if spec.s is not None else (cfg.nice.s if cfg.nice else 0.5)
    t = spec.t if spec.t is not None else f(k) / k
    dec = decompose(f, s=s, t=t, eps=spec.eps)
    sd = scales_from_decomposition(dec, 1).classify(spec.good_threshold)
    oracle = decompose_oracle(f, s, spec.eps)
    doc = {
        "s": s,
        "t": t,
        "eps": spec.eps,
        "intervals": [[iv.a, iv.b, iv.kind, iv.slope] for iv in dec.intervals],
        "covered": dec.covered,
        "oracle": oracle,
        "greedy_gap": oracle - dec.covered,
        "tau": dec.tau,
        "ladder_pass": sd.passed,
    }
    files = {
        "decompose.json": canonical_json(doc),
        "ladder.json": sd.to_json() + "\n",
        "branching.csv": "level,count,value\n"
        + "\n".join(f"{j},{n},{v:g}" for j, n, v in f.to_csv_rows())
        + "\n",
    }
    passed = sd.passed
    if cfg.nice is not None:
        rep = check_multiscale_bound(
            cfg,
            sd,
            BoundParams(
                eps_n=spec.eps_n,
                eta=spec.eta,
                lam=None,
                c_log=spec.c_log,
                c_prime=spec.c_prime,
            ),
        )
        files["multiscale_bound.json"] = canonical_json(rep.to_json())
        passed = passed and _bound_passed(rep)
        doc["bound_pass"] = _bound_passed(rep)
    doc["pass"] = passed
    files["decompose.json"] = canonical_json(doc)
    return passed, doc, files


def _run_dichotomy(cfg: Configuration, spec: DichotomyStage):
    rep = dichotomy_check(cfg, eps=spec.eps)
    doc = {
        "delta_k": rep.delta_k,
        "s": rep.s,
        "eps": rep.eps,
        "n_fine": rep.n_fine,
        "n_coarse": rep.n_coarse,
        "fine_exponent": rep.fine_exponent,
        "coarse_exponent": rep.coarse_exponent,
        "fine_branch": rep.fine_branch,
        "coarse_branch": rep.coarse_branch,
        "pass": rep.some_branch,
    }
    return rep.some_branch, doc, {"dichotomy.json": canonical_json(doc)}


def _run_extract(cfg: Configuration, spec: ExtractStage):
    ex = extract_product_structure(
        cfg, eps=spec.eps, budget=spec.budget, typical_fraction=spec.typical_fraction
    )
    doc = {
        "ok": ex.ok,
        "stage_failed": ex.stage_failed,
        "heavy_windows": len(ex.heavy_windows),
        "rows": len(ex.thetas),
        "dual_points": len(ex.dual_points),
        "properties": ex.properties,
        "pass": ex.ok,
    }
    return ex.ok, doc, {
        "extract.json": canonical_json(doc),
        "extract_ledger.csv": ledger_csv(ex.ledger),
    }


def _run_survey(cfg: Configuration, spec: SurveyStage):
    sv = exceptional_survey(cfg.points, spec.s, cfg.delta)
    doc = {
        "s": spec.s,
        "threshold": sv.threshold,
        "grid_g": sv.grid_g,
        "n_exceptional": len(sv.exceptional),
        "max_count": max((n for _, n in sv.counts), default=0),
    }
    passed = (len(sv.exceptional) == 0) == spec.expect_none
    doc["pass"] = passed
    return passed, doc, {"survey.json": canonical_json(doc)}


def _run_dimension(cfg: Configuration, spec: DimensionStage):
    from .spread import covering_number

    k = cfg.delta.k
    lo = spec.lo_k
    if not 0 <= lo < k:
        raise ValueError(f"lo_k must lie in [0, {k})")
    n_lo = covering_number(cfg.points, lo)
    n_hi = len(set(cfg.points))
    slope = (math.log2(n_hi) - math.log2(n_lo)) / (k - lo)
    doc = {
        "lo_k": lo,
        "hi_k": k,
        "n_lo": n_lo,
        "n_hi": n_hi,
        "slope": slope,
        "target": spec.target,
        "tol": spec.tol,
    }
    passed = abs(slope - spec.target) <= spec.tol
    doc["pass"] = passed
    return passed, doc, {"dimension.json": canonical_json(doc)}


_RUNNERS = {
    "count": _run_count,
    "niceness": _run_niceness,
    "spread": _run_spread,
    "tube_count": _run_tube_count,
    "incidence_bound": _run_incidence_bound,
    "refine_cover": _run_refine_cover,
    "two_scale": _run_two_scale,
    "decompose": _run_decompose,
    "dichotomy": _run_dichotomy,
    "extract": _run_extract,
    "survey": _run_survey,
    "dimension": _run_dimension,
}


# ---------------------------------------------------------------------------
# running and verifying
# ---------------------------------------------------------------------------


class StageResult(_Strict):
    stage: str
    passed: bool
    summary: dict
    files: list[str]


class RunManifest(_Strict):
    name: str
    config_sha256: str
    package: str
    python: str
    passed: bool
    stages: list[StageResult]
    files: dict[str, str]  # name -> sha256


def _package_version() -> str:
    try:
        return importlib.metadata.version("incidencelab")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def run_experiment(config: ExperimentConfig) -> tuple[RunManifest, dict[str, str]]:
    """Run all stages; returns the manifest and every file as text.

    A stage that raises is recorded as failed with the error message; the
    run continues so later stages still report.
    """
    cfg = build_configuration(config.generator)
    files: dict[str, str] = {"config.json": canonical_json(config.model_dump())}
    results: list[StageResult] = []
    seen_stages: dict[str, int] = {}
    for spec in config.stages:
        n = seen_stages.get(spec.stage, 0)
        seen_stages[spec.stage] = n + 1
        prefix = f"{spec.stage}_{n}/" if n else ""
        try:
            passed, summary, stage_files = _RUNNERS[spec.stage](cfg, spec)
        except Exception as e:  # recorded, not raised: failures are results
            passed, summary, stage_files = False, {"error": f"{type(e).__name__}: {e}"}, {}
        named = {prefix + name: text for name, text in stage_files.items()}
        files.update(named)
        results.append(
            StageResult(
                stage=spec.stage,
                passed=passed,
                summary=summary,
                files=sorted(named),
            )
        )
    manifest = RunManifest(
        name=config.name,
        config_sha256=config.sha256(),
        package=f"incidencelab {_package_version()}",
        python=platform.python_version(),
        passed=all(r.passed for r in results),
        stages=results,
        files={name: _sha256(text) for name, text in sorted(files.items())},
    )
    files["manifest.json"] = canonical_json(manifest.model_dump())
    return manifest, files


def write_run(outdir: Path, files: dict[str, str]) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        path = outdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def compare_run(rundir: Path, files: dict[str, str]) -> dict:
    """Byte-compare a run directory against freshly produced files.

    Returns {"match": bool, "differing": [...], "missing": [...],
    "extra": [...]}; manifest.json participates like any other file.
    """
    rundir = Path(rundir)
    differing, missing = [], []
    for name, text in sorted(files.items()):
        disk = rundir / name
        if not disk.is_file():
            missing.append(name)
        elif disk.read_text() != text:
            differing.append(name)
    expected = set(files)
    extra = sorted(
        str(p.relative_to(rundir))
        for p in rundir.rglob("*")
        if p.is_file() and str(p.relative_to(rundir)) not in expected
    )
    return {
        "match": not differing and not missing and not extra,
        "differing": differing,
        "missing": missing,
        "extra": extra,
    }


def verify_run(rundir: Path) -> dict:
    """Re-run the directory's config in-process and compare every byte."""
    rundir = Path(rundir)
    config = ExperimentConfig.model_validate_json(
        (rundir / "config.json").read_text()
    )
    _, files = run_experiment(config)
    return compare_run(rundir, files)
