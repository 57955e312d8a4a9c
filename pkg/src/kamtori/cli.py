"""Command line entry point.

`kam step|iterate|scaling|verify --config <path> [--out <dir>] [--strict]`
runs in-process by default; with `--server URL` the same request is sent to
a running HTTP service and the artifacts are written locally.  `kam serve`
starts the service.

Exit codes: 0 success; 1 verify failure or schema violation; 2 threshold
infeasibility (the binding inequality is named); 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from pydantic import ValidationError

from .runner import (EXIT_FAILED, RunConfig, RunResult, execute,
                     parse_config, write_artifacts)

KINDS = ("step", "iterate", "scaling", "verify")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="kam",
        description="KAM iteration engine: invariant torus construction on "
                    "sparse Fourier-Taylor Hamiltonians")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a '{kind}' job from a config file")
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", default=None, help="artifact output directory")
        p.add_argument("--strict", action="store_true",
                       help="abort on any violated threshold instead of "
                            "recording its margin")
        p.add_argument("--server", default=None,
                       help="base URL of a running service; run remotely "
                            "instead of in-process")
    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_config(args):
    with open(args.config, "r") as fh:
        text = fh.read()
    config = parse_config(text)
    data = config.model_dump()
    data["kind"] = args.kind
    if args.strict:
        data["strict"] = True
    if args.out is not None:
        data["out_dir"] = args.out
    return RunConfig.model_validate(data)


def _run_remote(config, server):
    import httpx

    url = server.rstrip("/") + f"/v1/{config.kind}"
    resp = httpx.post(url, json=config.model_dump(), timeout=600.0)
    resp.raise_for_status()
    body = resp.json()
    return RunResult(body["exit_code"], body["manifest"], body["artifacts"],
                     message=body.get("message", ""))


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.kind == "serve":
        import uvicorn

        from .service import app
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        config = _load_config(args)
    except (json.JSONDecodeError, OSError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValidationError as exc:
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"])
            print(f"error: config field '{loc}': {err['msg']}",
                  file=sys.stderr)
        return EXIT_FAILED

    if args.server:
        result = _run_remote(config, args.server)
    else:
        result = execute(config)

    out_dir = config.out_dir
    if out_dir:
        write_artifacts(result, out_dir)
    if result.message:
        stream = sys.stderr if result.exit_code else sys.stdout
        print(result.message, file=stream)
    if not out_dir:
        print(json.dumps(result.manifest, indent=2, sort_keys=True,
                         default=str))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
