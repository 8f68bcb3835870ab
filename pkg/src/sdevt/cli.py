"""Thin command-line client for the experiment service.

Subcommands mirror the experiment kinds; each posts the config to the
service (in-process by default, or a remote base URL via --server) and
persists the returned result locally.  `all` runs the acceptance suite,
`serve` starts the HTTP service.

Exit codes: 0 = every check passed, 1 = some check failed, 2 = bad config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_KIND_COMMANDS = {
    "evl": "evl",
    "poisson": "poisson",
    "spectrum": "spectrum",
    "kl": "kl",
    "ly-fit": "ly_fit",
    "refine": "refine",
    "blocks": "blocks",
    "norms": "norms",
}


def _configure_threads() -> None:
    threads = os.environ.get("SDEVT_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdevt",
        description="rare-event statistics of sampled SDEs: Monte Carlo and "
                    "transfer-operator experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _KIND_COMMANDS:
        p = sub.add_parser(command, help=f"run a {command} experiment from a config file")
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--server", default=None,
                       help="base URL of a running service (default: in-process)")
    p_all = sub.add_parser("all", help="run the acceptance suite end-to-end")
    p_all.add_argument("--out", default=None, help="output directory")
    p_all.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    return parser


class RemoteConfigError(Exception):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


def _post_run(cfg_payload: dict, server: str | None) -> dict:
    import httpx

    if server:
        with httpx.Client(base_url=server, timeout=3600.0) as client:
            resp = client.post("/run", json=cfg_payload)
    else:
        import asyncio

        from .service import app

        async def _post_in_process():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://sdevt", timeout=3600.0
            ) as client:
                return await client.post("/run", json=cfg_payload)

        resp = asyncio.run(_post_in_process())
    if resp.status_code == 400:
        raise RemoteConfigError(resp.json().get("detail", ["bad config"]))
    if resp.status_code == 422:
        detail = resp.json().get("detail", [])
        msgs = [f"{'.'.join(str(p) for p in e.get('loc', []))}: {e.get('msg')}"
                for e in detail]
        raise RemoteConfigError(msgs or ["invalid config"])
    resp.raise_for_status()
    return resp.json()


def _run_kind(args: argparse.Namespace, kind: str) -> int:
    from .experiments import ConfigError, ExperimentResult, parse_config, persist

    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    if cfg.kind != kind:
        print(f"config error: config kind {cfg.kind!r} does not match "
              f"subcommand {kind!r}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.model_copy(
            update={"sampling": cfg.sampling.model_copy(update={"seed": args.seed})}
        )
    out_dir = args.out or cfg.out_dir
    payload = cfg.model_copy(update={"out_dir": None}).model_dump()
    try:
        raw = _post_run(payload, args.server)
    except RemoteConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    result = ExperimentResult.model_validate(raw)
    for rec in result.records:
        status = "PASS" if rec.passed else "FAIL"
        print(f"[{status}] {rec.name}: value={rec.value:.6g} "
              f"target={rec.target:.6g} tol={rec.tolerance:.3g} ({rec.mode})")
    if out_dir:
        for path in persist(result, out_dir):
            print(f"wrote {path}")
    return 0 if result.all_passed else 1


def main(argv: list[str] | None = None) -> int:
    _configure_threads()
    args = _build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    if args.command == "all":
        from .acceptance import run_acceptance_suite

        ok = run_acceptance_suite(out_dir=args.out, seed=args.seed,
                                  emit=lambda line: print(line))
        return 0 if ok else 1
    return _run_kind(args, _KIND_COMMANDS[args.command])


if __name__ == "__main__":
    sys.exit(main())
