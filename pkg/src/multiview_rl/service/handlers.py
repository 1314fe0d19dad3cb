"""Request handlers shared by the HTTP app and the in-process CLI."""
from __future__ import annotations

from ..harness import RunConfig, evaluate, run_seed, run_sweep
from ..oracles import run_all
from .schemas import (
    EvalRequest,
    EvalResponse,
    OracleCheck,
    OracleResponse,
    SeedSummary,
    SweepRequest,
    SweepResponse,
    TrainRequest,
)


def resolve_config(doc: dict, env: str | None = None, seed: int | None = None) -> RunConfig:
    doc = dict(doc)
    if env is not None:
        doc["env"] = env
    if seed is not None:
        doc["seeds"] = [seed]
    return RunConfig.model_validate(doc)


def train(req: TrainRequest) -> SeedSummary:
    config = resolve_config(req.config, req.env, req.seed)
    run = run_seed(config, config.seeds[0], req.out or config.output_dir)
    return SeedSummary(**run.summary())


def sweep(req: SweepRequest) -> SweepResponse:
    config = resolve_config(req.config, req.env, req.seed)
    out = req.out or config.output_dir
    manifest = run_sweep(config, out, jobs=req.jobs)
    return SweepResponse(out=out, **{k: manifest[k] for k in
                                     ("completed_seeds", "failed_seeds", "mean_curve_csv", "final_reward", "seeds")})


def evaluate_run(req: EvalRequest) -> EvalResponse:
    res = evaluate(req.run_dir, req.episodes, req.seed, req.worker, req.random_policy)
    return EvalResponse(**res.as_dict())


def oracle() -> OracleResponse:
    checks = [OracleCheck(name=r.name, passed=r.passed, cases=r.cases, worst=r.worst, line=r.line())
              for r in run_all()]
    return OracleResponse(passed=all(c.passed for c in checks), checks=checks)
