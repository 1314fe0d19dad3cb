"""Command line entry point.

Runs in-process by default.  With ``--server URL`` the same requests go to a
running ``multiview-rl serve`` instance instead.  Exit status is 1 when a run
diverges or an oracle check fails, 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import BaseModel, ValidationError

from .service import handlers
from .service.schemas import (
    EvalRequest,
    EvalResponse,
    OracleResponse,
    SeedSummary,
    SweepRequest,
    SweepResponse,
    TrainRequest,
)


class RemoteError(RuntimeError):
    pass


def _post(server: str, path: str, payload: BaseModel | None, model: type[BaseModel]) -> BaseModel:
    import httpx

    body = payload.model_dump() if payload is not None else None
    resp = httpx.post(server.rstrip("/") + path, json=body, timeout=None)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail")
        except ValueError:
            detail = resp.text
        raise RemoteError(f"{resp.status_code}: {detail}")
    return model.model_validate(resp.json())


def _config_doc(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--env", choices=["point_mass", "corridor"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiview-rl", description=__doc__.split("\n")[0])
    parser.add_argument("--server", metavar="URL", help="send the request to a running service")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    train = sub.add_parser("train", help="two-stage run for one seed")
    _run_args(train)

    sweep = sub.add_parser("sweep", help="two-stage runs over every configured seed")
    _run_args(sweep)
    sweep.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")

    ev = sub.add_parser("eval", help="zero-noise evaluation of a trained seed directory")
    ev.add_argument("run_dir", help="a seed directory written by train or sweep")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0, metavar="N")
    ev.add_argument("--worker", type=int, help="evaluate one worker acting alone on its view")
    ev.add_argument("--random", action="store_true", help="evaluate a uniform random policy")
    ev.add_argument("--out", metavar="DIR", help="also write eval.json here")

    sub.add_parser("oracle", help="gradient and penalty self-checks")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _report_seed(s: SeedSummary) -> int:
    status = "FAILED" if s.failed else "ok"
    rewards = ", ".join(f"{k}={v:.4f}" for k, v in s.final_reward.items())
    print(f"seed {s.seed}: {status} in {s.wall_clock_s:.1f}s -> {s.directory} ({rewards})")
    if s.error:
        print(f"  {s.error}", file=sys.stderr)
    return 1 if s.failed else 0


def _call(args, path, payload, model, local):
    if args.server:
        return _post(args.server, path, payload, model)
    return local(payload) if payload is not None else local()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "serve":
            import uvicorn

            uvicorn.run("multiview_rl.service:app", host=args.host, port=args.port)
            return 0
        if args.verb == "oracle":
            res: OracleResponse = _call(args, "/oracle", None, OracleResponse, handlers.oracle)
            for check in res.checks:
                print(check.line)
            return 0 if res.passed else 1
        if args.verb == "train":
            req = TrainRequest(config=_config_doc(args.config), seed=args.seed, out=args.out, env=args.env)
            return _report_seed(_call(args, "/train", req, SeedSummary, handlers.train))
        if args.verb == "sweep":
            req = SweepRequest(config=_config_doc(args.config), seed=args.seed, out=args.out, env=args.env,
                               jobs=args.jobs)
            res: SweepResponse = _call(args, "/sweep", req, SweepResponse, handlers.sweep)
            code = max([_report_seed(s) for s in res.seeds], default=0)
            print(f"{res.completed_seeds} seeds completed; mean curve -> {res.mean_curve_csv}")
            return code
        if args.verb == "eval":
            req = EvalRequest(run_dir=args.run_dir, episodes=args.episodes, seed=args.seed,
                              worker=args.worker, random_policy=args.random)
            res: EvalResponse = _call(args, "/eval", req, EvalResponse, handlers.evaluate_run)
            print(f"mean_reward {res.mean_reward:.6f} std {res.std:.6f} over {len(res.episode_returns)} episodes")
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "eval.json").write_text(res.model_dump_json(indent=2))
            return 0
    except (ValidationError, ValueError, FileNotFoundError, FileExistsError, RemoteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
