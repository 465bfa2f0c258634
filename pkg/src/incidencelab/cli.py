"""The lab command: run experiments, report on them, verify reproducibility.

All subcommands that do work go through the HTTP API; by default the
FastAPI app is mounted in-process (no socket), and --server points the
same client at a remote instance.  Exit codes: 0 all checks passed,
1 a check failed or files diverged, 2 bad configuration or usage,
3 transport or internal error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx
import pydantic

from .experiment import ENV_OUTPUT_ROOT, ExperimentConfig, compare_run, write_run

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_INTERNAL = 3


def _client(server: str | None) -> httpx.AsyncClient:
    if server:
        return httpx.AsyncClient(base_url=server, timeout=600.0)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.AsyncClient(
        transport=transport, base_url="http://lab.internal", timeout=600.0
    )


def _load_config(path: Path) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(path.read_text())


def _output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))


def _print_manifest(manifest: dict, out=None) -> None:
    out = out if out is not None else sys.stdout  # bind at call, not import
    print(f"run: {manifest['name']}  [{manifest['package']}]", file=out)
    print(f"config sha256: {manifest['config_sha256']}", file=out)
    for r in manifest["stages"]:
        verdict = "PASS" if r["passed"] else "FAIL"
        print(f"  {verdict}  {r['stage']}", file=out)
    print("result:", "PASS" if manifest["passed"] else "FAIL", file=out)


def _post_run(server: str | None, config: ExperimentConfig) -> dict:
    async def go() -> dict:
        async with _client(server) as client:
            resp = await client.post("/experiments/run", json=config.model_dump())
            resp.raise_for_status()
            return resp.json()

    return asyncio.run(go())


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load_config(Path(args.config))
    except (OSError, pydantic.ValidationError, json.JSONDecodeError) as e:
        print(f"bad config: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    outdir = Path(args.out) if args.out else _output_root() / config.name
    try:
        payload = _post_run(args.server, config)
    except httpx.HTTPError as e:
        print(f"transport error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    write_run(outdir, payload["files"])
    _print_manifest(payload["manifest"])
    print(f"wrote {len(payload['files'])} files to {outdir}")
    return EXIT_OK if payload["manifest"]["passed"] else EXIT_CHECK_FAILED


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.rundir) / "manifest.json"
    if not path.is_file():
        print(f"no manifest at {path}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    manifest = json.loads(path.read_text())
    _print_manifest(manifest)
    if args.stage:
        for r in manifest["stages"]:
            if r["stage"] == args.stage:
                print(json.dumps(r["summary"], indent=2, sort_keys=True))
    return EXIT_OK if manifest["passed"] else EXIT_CHECK_FAILED


def cmd_verify(args: argparse.Namespace) -> int:
    rundir = Path(args.rundir)
    config_path = rundir / "config.json"
    if not config_path.is_file():
        print(f"no config at {config_path}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        config = _load_config(config_path)
    except (pydantic.ValidationError, json.JSONDecodeError) as e:
        print(f"bad config: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        payload = _post_run(args.server, config)
    except httpx.HTTPError as e:
        print(f"transport error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    report = compare_run(rundir, payload["files"])
    if report["match"]:
        print(f"verified: {rundir} reproduces byte-for-byte")
        return EXIT_OK
    for kind in ("differing", "missing", "extra"):
        for name in report[kind]:
            print(f"{kind}: {name}")
    return EXIT_CHECK_FAILED


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to an experiment config JSON")
    p_run.add_argument("--out", help="output directory (default: runs root / name)")
    p_run.add_argument("--server", help="remote service URL (default: in-process)")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="summarize a finished run directory")
    p_rep.add_argument("rundir")
    p_rep.add_argument("--stage", help="also print this stage's summary JSON")
    p_rep.set_defaults(func=cmd_report)

    p_ver = sub.add_parser("verify", help="re-run a directory's config and compare bytes")
    p_ver.add_argument("rundir")
    p_ver.add_argument("--server", help="remote service URL (default: in-process)")
    p_ver.set_defaults(func=cmd_verify)

    p_srv = sub.add_parser("serve", help="serve the HTTP API")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # anything unplanned is an internal error
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
