"""Command-line front end.

Every command is a thin client of the HTTP service: by default requests run
against an in-process application, and --server points them at a running
deployment instead, so outputs are identical either way.  Commands write
UTF-8 CSV files (and JSON summaries) into --out and print a one-line result.

Typical session, which reproduces the bundled experiment end to end:

    optmm init-config config.json
    optmm solve --config config.json --out results
    optmm quotes --config config.json --out results
    optmm simulate --config config.json --out results --episodes 1000
"""

from __future__ import annotations

import base64
import json
import os
import sys

import click

from . import config as cfgmod


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _config_payload(path: str | None) -> dict | None:
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _post(client, route: str, payload: dict) -> dict:
    response = client.post(route, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except Exception:
            detail = response.text
        raise click.ClickException(f"{route} failed ({response.status_code}): "
                                   f"{detail}")
    return response.json()


def _ensure_out(out: str) -> str:
    os.makedirs(out, exist_ok=True)
    return out


def _write(out: str, name: str, text: str) -> str:
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _artifact_b64(path: str) -> str:
    with open(path, "rb") as fh:
        return base64.b64encode(fh.read()).decode("ascii")


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="Experiment config JSON "
                             "(defaults to the bundled configuration).")
out_option = click.option("--out", default=".", show_default=True,
                          help="Output directory.")
server_option = click.option("--server", default=None,
                             help="Base URL of a running service; default "
                             "runs in-process.")
vf_option = click.option("--value-function", "vf_path", default=None,
                         help="Value-function artifact file "
                         "[default: <out>/value_function.bin].")


@click.group()
def main():
    """Optimal option market-making toolkit."""


@main.command("init-config")
@click.argument("path", default="config.json")
def init_config(path):
    """Write the default experiment configuration to PATH."""
    cfgmod.dump(cfgmod.ExperimentConfig(), path)
    click.echo(f"wrote default config to {path}")


@main.command()
@config_option
@click.option("--seed", type=int, default=None, help="Override the MC seed.")
@click.option("--oracle", is_flag=True,
              help="Append semi-analytic oracle columns.")
@click.option("--sentinel", is_flag=True,
              help="Append a strike-0 sanity row.")
@out_option
@server_option
def surface(config_path, seed, oracle, sentinel, out, server):
    """Price the configured options and write the implied-vol surface CSV."""
    client = _client(server)
    data = _post(client, "/surface", {
        "config": _config_payload(config_path), "seed": seed,
        "oracle": oracle, "sentinel": sentinel,
    })
    path = _write(_ensure_out(out), "surface.csv", data["csv"])
    click.echo(f"wrote {len(data['rows'])} rows to {path}")


@main.command()
@config_option
@click.option("--refine", is_flag=True,
              help="Also solve on a doubled (time, vega) grid and report "
              "the value change at the origin.")
@click.option("--auto-refine", is_flag=True,
              help="Refine the time axis automatically instead of aborting "
              "on a stability violation.")
@out_option
@server_option
def solve(config_path, refine, auto_refine, out, server):
    """Solve the value function and write the artifact plus its t=0 slice."""
    client = _client(server)
    data = _post(client, "/solve", {
        "config": _config_payload(config_path), "refine": refine,
        "auto_refine": auto_refine,
    })
    out = _ensure_out(out)
    art_path = os.path.join(out, "value_function.bin")
    with open(art_path, "wb") as fh:
        fh.write(base64.b64decode(data["artifact_b64"]))
    _write(out, "value_function_t0.csv", data["csv_t0"])
    _write(out, "solve_summary.json",
           json.dumps(data["summary"], indent=2) + "\n")
    summary = data["summary"]
    line = (f"artifact {summary['artifact_id']} -> {art_path}; "
            f"v(0, nu0, 0) = {summary['value_at_origin']:.6g}")
    if refine:
        line += (f"; refinement changes it by "
                 f"{summary['refine_rel_delta']:.3%}")
    click.echo(line)


@main.command()
@config_option
@vf_option
@out_option
@server_option
def quotes(config_path, vf_path, out, server):
    """Write the optimal quote ladder CSV at t=0."""
    client = _client(server)
    vf_path = vf_path or os.path.join(out, "value_function.bin")
    data = _post(client, "/quotes", {
        "config": _config_payload(config_path),
        "artifact_b64": _artifact_b64(vf_path),
    })
    path = _write(_ensure_out(out), "quotes.csv", data["csv"])
    click.echo(f"wrote {data['n_rows']} rows to {path}")


@main.command()
@config_option
@vf_option
@click.option("--episodes", type=int, default=None,
              help="Number of episodes (default from config).")
@click.option("--seed", type=int, default=None, help="Override the sim seed.")
@click.option("--hedge", type=click.Choice(["delta", "optimal"]), default=None,
              help="Hedging mode (default from config).")
@click.option("--policy", type=click.Choice(["hjb", "myopic", "none"]),
              default="hjb", show_default=True)
@out_option
@server_option
def simulate(config_path, vf_path, episodes, seed, hedge, policy, out, server):
    """Run simulation episodes under a quoting policy and write PnL CSVs."""
    client = _client(server)
    vf_path = vf_path or os.path.join(out, "value_function.bin")
    data = _post(client, "/simulate", {
        "config": _config_payload(config_path),
        "artifact_b64": _artifact_b64(vf_path),
        "episodes": episodes, "seed": seed, "hedge": hedge, "policy": policy,
    })
    out = _ensure_out(out)
    path = _write(out, "episodes.csv", data["csv"])
    _write(out, "simulate_summary.json",
           json.dumps(data["summary"], indent=2) + "\n")
    s = data["summary"]
    click.echo(f"{s['n_episodes']} episodes ({s['policy']} policy, "
               f"{s['hedge']} hedge): objective {s['objective']:.6g} "
               f"+- {s['objective_stderr']:.3g} -> {path}")


@main.command()
@config_option
@vf_option
@click.option("--states", "states_path", type=click.Path(exists=True),
              default=None, help="JSON list of query states "
              "{time, spot, variance, inventory}.")
@click.option("--seed", type=int, default=None,
              help="Override the correction seed.")
@out_option
@server_option
def correct(config_path, vf_path, states_path, seed, out, server):
    """Estimate the first-order vega-drift corrections and write phi.csv."""
    client = _client(server)
    vf_path = vf_path or os.path.join(out, "value_function.bin")
    states = None
    if states_path:
        with open(states_path, "r", encoding="utf-8") as fh:
            states = json.load(fh)
    data = _post(client, "/correct", {
        "config": _config_payload(config_path),
        "artifact_b64": _artifact_b64(vf_path),
        "states": states, "seed": seed,
    })
    path = _write(_ensure_out(out), "phi.csv", data["csv"])
    for row in data["rows"]:
        click.echo(f"phi = {row['phi']:.6g} +- {row['stderr']:.3g} "
                   f"(n={row['n_paths']}, flagged={row['flagged']})")
    click.echo(f"wrote {len(data['rows'])} rows to {path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
