"""Command line entry point.

Thin client over the service layer: each subcommand builds a request model
from a JSON config file (flags override config fields), runs it in-process
or against a remote server, and renders the response as csv, json, or an
aligned table.

Heavy numerical imports happen inside the dispatch path so that --threads
can cap BLAS pools before any linear algebra library loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

FORMATS = ("csv", "json", "table")

ROUTES = {
    "design.enumerate": "/design/enumerate",
    "design.sample": "/design/sample",
    "probs": "/probs",
    "bound": "/bound",
    "estimate": "/estimate",
    "varest": "/varest",
    "simulate": "/simulate",
    "check": "/check",
}

BLAS_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", help="write output to this path instead of stdout")
    parser.add_argument("--format", choices=FORMATS, default="table")
    parser.add_argument("--tensor-cache", default=None, help="directory for cached moment tensors")
    parser.add_argument(
        "--server", default=None, help="base URL of a running service; default runs in-process"
    )
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS thread count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocvar",
        description="Design-based variance estimation for randomized experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    design = sub.add_parser("design", help="enumerate or sample assignments")
    dsub = design.add_subparsers(dest="subcommand", required=True)
    p = dsub.add_parser("enumerate", help="list the full assignment support with probabilities")
    _common_flags(p)
    p.set_defaults(route="design.enumerate")
    p = dsub.add_parser("sample", help="draw assignments with a seeded generator")
    _common_flags(p)
    p.add_argument("--draws", type=int, default=None, help="number of assignments to draw")
    p.set_defaults(route="design.sample")

    simple = [
        ("probs", "export first and joint inclusion moments and the design kernel"),
        ("bound", "conservative kernel bound with verification report"),
        ("estimate", "point estimate of the contrast on given data"),
        ("varest", "variance estimators on given data and assignment"),
        ("simulate", "full rerandomization study with per-estimator metrics"),
        ("check", "spectral and bound diagnostics for one design"),
    ]
    for name, help_text in simple:
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        p.set_defaults(route=name)
        if name == "varest":
            p.add_argument(
                "--estimators", default=None, help="comma-separated list, e.g. gs,oc0,gc"
            )
        if name == "simulate":
            p.add_argument("--data", default=None, help="input CSV path; overrides config")
    return parser


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _normalize_study(cfg: dict) -> dict:
    cfg = dict(cfg)
    if "estimator_list" in cfg:
        cfg["estimators"] = cfg.pop("estimator_list")
    design = cfg.pop("design", None)
    if design not in (None, "paired_cluster"):
        from .errors import SchemaError

        raise SchemaError(
            "study designs are derived from the dataset; only 'paired_cluster' is accepted"
        )
    return cfg


def _build_request(route: str, cfg: dict, args, sm):
    cfg = dict(cfg)
    if route == "design.enumerate":
        return sm.DesignEnumerateRequest(**cfg)
    if route == "design.sample":
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.draws is not None:
            cfg["draws"] = args.draws
        return sm.DesignSampleRequest(**cfg)
    if route == "simulate":
        cfg = _normalize_study(cfg)
        if args.data is not None:
            cfg["data_csv"] = args.data
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.tensor_cache is not None:
            cfg["tensor_cache"] = args.tensor_cache
        return sm.SimulateRequest(**cfg)
    if args.seed is not None:
        cfg["options"] = {**cfg.get("options", {}), "seed": args.seed}
    if route in ("varest", "check") and args.tensor_cache is not None:
        cfg["tensor_cache"] = args.tensor_cache
    if route == "varest" and args.estimators is not None:
        cfg["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    model = {
        "probs": sm.ProbsRequest,
        "bound": sm.BoundRequest,
        "estimate": sm.EstimateRequest,
        "varest": sm.VarestRequest,
        "check": sm.CheckRequest,
    }[route]
    return model(**cfg)


def _post(server: str, route: str, request) -> dict:
    import httpx

    url = server.rstrip("/") + ROUTES[route]
    resp = httpx.post(url, json=request.model_dump(), timeout=600.0)
    if resp.status_code != 200:
        try:
            detail = resp.json()["error"]
            raise _RemoteError(detail["code"], detail["message"])
        except (KeyError, ValueError):
            raise _RemoteError("HttpError", f"{resp.status_code}: {resp.text[:500]}") from None
    return resp.json()


class _RemoteError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _dispatch(route: str, request, handlers):
    table = {
        "design.enumerate": handlers.design_enumerate,
        "design.sample": handlers.design_sample,
        "probs": handlers.probs,
        "bound": handlers.bound,
        "estimate": handlers.estimate,
        "varest": handlers.varest,
        "simulate": handlers.simulate,
        "check": handlers.check,
    }
    return table[route](request).model_dump()


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True)
    return str(value)


def _tabular(route: str, payload: dict):
    """Header and rows for the csv/table formats; falls back to key/value."""
    if route == "design.enumerate":
        n = len(payload["assignments"][0]) if payload["assignments"] else 0
        header = [f"unit_{i + 1}" for i in range(n)] + ["probability"]
        rows = [
            [str(a) for a in arms] + [repr(prob)]
            for arms, prob in zip(payload["assignments"], payload["probabilities"])
        ]
        return header, rows
    if route == "design.sample":
        n = len(payload["assignments"][0]) if payload["assignments"] else 0
        header = ["draw"] + [f"unit_{i + 1}" for i in range(n)]
        rows = [[str(i)] + [str(a) for a in arms] for i, arms in enumerate(payload["assignments"])]
        return header, rows
    if route == "varest":
        header = ["estimator", "value"]
        rows = [[name, repr(value)] for name, value in sorted(payload["values"].items())]
        return header, rows
    if route == "simulate":
        header = ["estimator", "e_ratio", "se_ratio", "bias_ratio", "rmse_ratio", "cv"]
        rows = [
            [
                row["name"],
                repr(row["e_ratio"]),
                repr(row["se_ratio"]),
                repr(row["bias_ratio"]),
                repr(row["rmse_ratio"]),
                repr(row["cv"]),
            ]
            for row in payload["rows"]
        ]
        return header, rows
    header = ["field", "value"]
    rows = [[key, _cell(payload[key])] for key in sorted(payload)]
    return header, rows


def _render(route: str, payload: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    header, rows = _tabular(route, payload)
    if fmt == "csv":
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    if route == "simulate":
        lines.append("")
        lines.append(f"assignments evaluated: {payload['n_assignments']}")
        lines.append(f"true variance: {repr(payload['true_var'])}")
        for ref in sorted(payload["ratios"]):
            for name in sorted(payload["ratios"][ref]):
                for metric, value in sorted(payload["ratios"][ref][name].items()):
                    lines.append(f"{metric} ratio {name}/{ref}: {repr(value)}")
    return "\n".join(lines) + "\n"


def _error_info(exc) -> tuple:
    if isinstance(exc, _RemoteError):
        return exc.code, str(exc)
    try:
        from .errors import OcvarError

        if isinstance(exc, OcvarError):
            return exc.code, str(exc)
    except ImportError:
        pass
    if isinstance(exc, (FileNotFoundError, json.JSONDecodeError)):
        return "SchemaError", str(exc)
    name = type(exc).__name__
    if name == "ValidationError":
        return "SchemaError", str(exc)
    return name, str(exc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads > 0:
        for var in BLAS_ENV_VARS:
            os.environ[var] = str(args.threads)
    try:
        cfg = _load_config(args.config)
        from .service import schemas as sm

        request = _build_request(args.route, cfg, args, sm)
        if args.server:
            payload = _post(args.server, args.route, request)
        else:
            from .service import handlers

            payload = _dispatch(args.route, request, handlers)
        text = _render(args.route, payload, args.format)
    except Exception as exc:  # noqa: BLE001 - uniform machine-readable failure
        code, message = _error_info(exc)
        sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")
        return 1
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
