"""Command-line front end: a thin HTTP client of the pipeline service.

Every subcommand builds a request, sends it to the service and prints the
returned summary. With ``--server`` the request goes to a running instance;
without it the service application is driven in-process, so the CLI works
standalone while exercising exactly the HTTP surface.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esncontrol",
        description="Extreme-event suppression experiments on the nine-mode shear-flow model")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; in-process when omitted")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="path to the run config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--output-dir", default=None, help="override the output directory")

    sp = sub.add_parser("generate", help="generate training/validation datasets")
    add_common(sp)

    sp = sub.add_parser("train", help="train the surrogate on a dataset file")
    add_common(sp)
    sp.add_argument("--dataset", required=True, help="training dataset file")
    sp.add_argument("--val-dataset", default=None, help="held-out dataset for the skill report")

    sp = sub.add_parser("tune", help="tune a controller's free parameters")
    add_common(sp)
    sp.add_argument("--controller", required=True, choices=["P_ESN", "PID_DIRECT"])
    sp.add_argument("--model", default=None, help="trained model file (P_ESN)")
    sp.add_argument("--budget", type=int, default=None, help="override the evaluation budget")

    sp = sub.add_parser("evaluate", help="evaluate controller strategies on shared episodes")
    add_common(sp)
    sp.add_argument("--model", default=None, help="trained model file")
    sp.add_argument("--workers", type=int, default=1, help="episode-chunk worker threads")
    sp.add_argument("--strategies", default=None,
                    help="comma-separated subset of strategies to run")

    sp = sub.add_parser("pdf", help="histogram of the observable over trajectory files")
    add_common(sp)
    sp.add_argument("--data", required=True, nargs="+", help="trajectory/dataset files")

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return parser


def _load_config_payload(args) -> dict:
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file is not valid JSON: {exc}") from exc
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.output_dir is not None:
        payload["output_dir"] = args.output_dir
    return payload


def _client(server: str | None):
    if server is not None:
        import httpx
        return httpx.Client(base_url=server, timeout=None)
    # in-process transport against the service application
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    from .service import app
    return TestClient(app, raise_server_exceptions=False)


def _post(client, path: str, payload: dict) -> tuple[int, dict]:
    response = client.post(path, json=payload)
    try:
        body = response.json()
    except Exception:
        body = {"detail": response.text}
    return response.status_code, body


def _print_result(body: dict) -> None:
    result = body.get("result", body)
    for key, value in result.items():
        if key == "manifest":
            print(f"  config_hash: {value.get('config_hash', '')}")
        elif isinstance(value, (str, int, float, bool)):
            print(f"  {key}: {value}")
        elif key == "summary" and isinstance(value, list):
            for row in value:
                print("  " + " ".join(f"{k}={v}" for k, v in row.items()))


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    if args.command == "serve":
        import uvicorn

        from .service import app
        uvicorn.run(app, host=args.host, port=args.port)
        return EXIT_OK

    try:
        config = _load_config_payload(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "generate":
        path, payload = "/ops/generate", {"config": config}
    elif args.command == "train":
        path, payload = "/ops/train", {"config": config, "dataset_path": args.dataset,
                                       "val_path": args.val_dataset}
    elif args.command == "tune":
        path, payload = "/ops/tune", {"config": config, "controller": args.controller,
                                      "model_path": args.model, "budget": args.budget}
    elif args.command == "evaluate":
        strategies = args.strategies.split(",") if args.strategies else None
        path, payload = "/ops/evaluate", {"config": config, "model_path": args.model,
                                          "workers": args.workers,
                                          "strategies": strategies}
    elif args.command == "pdf":
        path, payload = "/ops/pdf", {"config": config, "data_paths": list(args.data)}
    else:  # pragma: no cover - argparse enforces the choices
        return EXIT_USAGE

    try:
        with _client(args.server) as client:
            status, body = _post(client, path, payload)
    except Exception as exc:
        print(f"error: could not reach the service: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if status == 200:
        print(f"{args.command}: ok")
        _print_result(body)
        return EXIT_OK
    detail = body.get("detail", body)
    print(f"error ({status}): {detail}", file=sys.stderr)
    return EXIT_USAGE if status in (400, 404, 422) else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
