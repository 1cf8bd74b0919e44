"""Thin CLI client for the pipeline service.

Subcommands: run | sensitivity | tradeoff | allocate | mpc-loop.  The config
file (YAML) carries the request body; the client posts it to the service
(in-process by default, or a remote --server URL) and writes the returned
artifacts to the output directory.

Exit codes: 0 success, 2 validation/config failure, 3 solver failure,
4 internal-consistency failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx
import yaml

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_CONSISTENCY = 4


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


def _load_config(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with p.open() as fh:
        d = yaml.safe_load(fh) or {}
    if not isinstance(d, dict):
        raise ValueError("config must be a mapping")
    return d


def _resolve_problem_source(cfg):
    src = cfg.get("problem")
    if isinstance(src, str):
        return {"builtin": src}
    if isinstance(src, dict) and "file" in src:
        path = Path(src["file"])
        if not path.exists():
            raise FileNotFoundError(f"problem file not found: {path}")
        with path.open() as fh:
            return {"inline": yaml.safe_load(fh)}
    return src


def _write(outdir, name, text):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / name).write_text(text)


def _write_json(outdir, name, obj):
    _write(outdir, name, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _post(client, path, body, quiet):
    resp = client.post(path, json=body)
    if resp.status_code == 422:
        print(f"error: {resp.json().get('detail', resp.text)}", file=sys.stderr)
        return None, EXIT_VALIDATION
    if resp.status_code == 409:
        print(f"error: {resp.json().get('detail', resp.text)}", file=sys.stderr)
        return None, EXIT_CONSISTENCY
    if resp.status_code >= 500:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        print(f"error: {detail}", file=sys.stderr)
        return None, EXIT_SOLVER
    return resp.json(), EXIT_OK


def cmd_run(args, cfg, client, outdir):
    body = {
        "problem": _resolve_problem_source(cfg),
        "K": cfg.get("K", 100),
        "seed": args.seed if args.seed is not None else cfg.get("seed", 0),
        "noise": cfg.get("noise", {}),
        "thetas": cfg.get("thetas"),
        "privacy_requested": cfg.get("privacy_requested"),
    }
    data, code = _post(client, "/run", body, args.quiet)
    if data is None:
        return code
    _write(outdir, "transcript.csv", data["transcript_csv"])
    _write_json(outdir, "privacy_report.json", data["privacy_report"])
    _write_json(outdir, "summary.json", data["summary"])
    for w in data["summary"].get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    if not args.quiet:
        print(f"final dual gap {data['summary']['final_dual_gap']:.6g}, "
              f"bound {data['summary']['suboptimality_bound']:.6g}")
    return EXIT_OK


def cmd_sensitivity(args, cfg, client, outdir):
    body = {
        "problem": _resolve_problem_source(cfg),
        "agent": cfg.get("agent", 0),
        "alpha": cfg.get("alpha", 0.01),
        "beta": cfg.get("beta", 0.01),
        "seed": args.seed if args.seed is not None else cfg.get("seed", 0),
        "N_override": args.trials if args.trials is not None else cfg.get("N"),
    }
    data, code = _post(client, "/sensitivity", body, args.quiet)
    if data is None:
        return code
    _write_json(outdir, "sensitivity_certificate.json", data["certificate"])
    if not args.quiet:
        c = data["certificate"]
        print(f"gamma_N={c['gamma_N']:.6g} (N={c['N']}), analytic upper bound: {c['analytic_upper']}")
    return EXIT_OK


def cmd_tradeoff(args, cfg, client, outdir):
    body = {k: cfg[k] for k in ("theta", "M", "G", "rho_phi") if k in cfg}
    for k in ("eps_bar", "S_bar", "sigmas", "Ks", "test_points"):
        if k in cfg:
            body[k] = cfg[k]
    data, code = _post(client, "/tradeoff", body, args.quiet)
    if data is None:
        return code
    _write(outdir, "tradeoff_cloud.csv", data["cloud_csv"])
    _write_json(outdir, "pareto_front.json", data["front"])
    _write_json(outdir, "feasibility_verdicts.json", data["verdicts"])
    if not args.quiet:
        print(f"{len(data['front'])} Pareto points; {len(data['verdicts'])} verdicts")
    return EXIT_OK


def cmd_allocate(args, cfg, client, outdir):
    body = {k: cfg[k] for k in ("scheme", "rho_phi", "K", "S_K", "G", "thetas", "bids", "M") if k in cfg}
    data, code = _post(client, "/allocate", body, args.quiet)
    if data is None:
        return code
    _write_json(outdir, "allocation.json", data["allocation"])
    if data["allocation"].get("infeasible_target"):
        print("warning: suboptimality target infeasible; budget is zero", file=sys.stderr)
    if not args.quiet:
        print(f"budget {data['allocation']['budget']:.6g} shared as "
              f"{data['allocation']['shares_sigma2']}")
    return EXIT_OK


def cmd_mpc_loop(args, cfg, client, outdir):
    body = {
        "building": cfg.get("building"),
        "sigma": cfg.get("sigma", 0.0),
        "K_per_step": cfg.get("K_per_step", 10),
        "steps": cfg.get("steps", 96),
        "seed": args.seed if args.seed is not None else cfg.get("seed", 0),
        "with_reference": cfg.get("with_reference", True),
    }
    if isinstance(body["building"], str):
        with open(body["building"]) as fh:
            body["building"] = yaml.safe_load(fh)
    data, code = _post(client, "/mpc-loop", body, args.quiet)
    if data is None:
        return code
    _write(outdir, "trajectory.csv", data["trajectory_csv"])
    _write_json(outdir, "summary.json", data["summary"])
    if not args.quiet:
        err = data["summary"].get("tracking_rel_error_vs_centralized")
        if err is not None:
            print(f"tracking error vs centralized: {err:.4%}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sensitivity": cmd_sensitivity,
    "tradeoff": cmd_tradeoff,
    "allocate": cmd_allocate,
    "mpc-loop": cmd_mpc_loop,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="privdist", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML config path")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--trials", type=int, default=None, help="override sample/trial count")
    parser.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    outdir = Path(args.out)
    try:
        with _client(args.server) as client:
            try:
                return COMMANDS[args.command](args, cfg, client, outdir)
            except FileNotFoundError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_VALIDATION
    except httpx.HTTPError as exc:
        print(f"error: service unreachable: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
