"""Command-line client for the pipeline service.

Each subcommand posts one stage request.  By default the service runs
in-process (no sockets, fully deterministic for scripted runs); pass
--server to talk to a deployed instance instead.  Exit codes: 0 success,
2 configuration error, 3 data or format error.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

from .service.app import app as service_app

EXIT_CONFIG = 2
EXIT_DATA = 3


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # Sync in-process ASGI client; no sockets involved, so scripted runs stay
    # deterministic and work without a deployed service.
    from starlette.testclient import TestClient

    return TestClient(service_app, raise_server_exceptions=False)


def _call(server, path, payload) -> None:
    body = {k: v for k, v in payload.items() if v is not None}
    try:
        with _client(server) as client:
            resp = client.post(path, json=body)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(1)
    if resp.status_code == 200:
        data = resp.json()
        click.echo(json.dumps(data.get("result", data), indent=1))
        return
    try:
        data = resp.json()
    except ValueError:
        data = {"detail": resp.text}
    detail = data.get("detail")
    if isinstance(detail, list):  # request-validation errors arrive as a list
        detail = "; ".join(
            f"{'.'.join(str(p) for p in e.get('loc', []))}: {e.get('msg')}" for e in detail
        )
    kind = data.get("kind", "config" if resp.status_code == 422 else "data")
    click.echo(f"error ({kind}): {detail}", err=True)
    if resp.status_code == 422:
        sys.exit(EXIT_CONFIG)
    if resp.status_code == 400:
        sys.exit(EXIT_DATA)
    sys.exit(1)


_config = click.option("--config", default=None, type=click.Path(), help="JSON pipeline config; defaults apply when omitted.")
_manifest = click.option("--manifest", default=None, type=click.Path(), help="Dataset manifest JSON.")
_out = click.option("--out", required=True, type=click.Path(), help="Output directory shared by chained stages.")
_seed = click.option("--seed", default=None, type=click.IntRange(min=0), help="Override the config seed.")
_layers = click.option("--layers", default=None, type=click.IntRange(min=1), help="Use only the first k region layers.")
_multistride = click.option("--multistride", default=None, type=bool, help="true/false: per-layer stride shrinking.")
_fusion = click.option("--fusion", default=None, type=bool, help="true/false: two-forest score fusion.")
_regions_opt = click.option("--regions", "regions_path", default=None, type=click.Path(), help="Fitted region file; defaults to <out>/regions.json.")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--server", default=None, metavar="URL", help="Remote service URL; default runs the service in-process.")
@click.pass_context
def main(ctx, server):
    """Tiny-obstacle discovery pipeline."""
    ctx.obj = {"server": server}


@main.command()
@_config
@_out
@_seed
@click.pass_context
def synth(ctx, config, out, seed):
    """Generate a synthetic dataset with ground truth."""
    _call(ctx.obj["server"], "/v1/synth", {"config": config, "out": out, "seed": seed})


@main.command()
@_config
@_manifest
@_out
@_seed
@_layers
@click.pass_context
def regions(ctx, config, manifest, out, seed, layers):
    """Fit the nested scene-prior regions from training annotations."""
    _call(
        ctx.obj["server"],
        "/v1/regions",
        {"config": config, "manifest": manifest, "out": out, "seed": seed, "layers": layers},
    )


@main.command()
@_config
@_manifest
@_out
@click.pass_context
def edges(ctx, config, manifest, out):
    """Write baseline edge maps for every image in the manifest."""
    _call(ctx.obj["server"], "/v1/edges", {"config": config, "manifest": manifest, "out": out})


@main.command()
@_config
@_manifest
@_out
@_regions_opt
@_multistride
@_layers
@click.pass_context
def proposals(ctx, config, manifest, out, regions_path, multistride, layers):
    """Generate ranked sliding-window proposals for the test split."""
    _call(
        ctx.obj["server"],
        "/v1/proposals",
        {
            "config": config,
            "manifest": manifest,
            "out": out,
            "regions": regions_path,
            "multistride": multistride,
            "layers": layers,
        },
    )


@main.command()
@_config
@_manifest
@_out
@_regions_opt
@_multistride
@_layers
@click.pass_context
def features(ctx, config, manifest, out, regions_path, multistride, layers):
    """Dump per-proposal feature matrices for the test split."""
    _call(
        ctx.obj["server"],
        "/v1/features",
        {
            "config": config,
            "manifest": manifest,
            "out": out,
            "regions": regions_path,
            "multistride": multistride,
            "layers": layers,
        },
    )


@main.command()
@_config
@_manifest
@_out
@_seed
@_regions_opt
@_layers
@click.pass_context
def train(ctx, config, manifest, out, seed, regions_path, layers):
    """Train the primary/secondary forest pair on the train split."""
    _call(
        ctx.obj["server"],
        "/v1/train",
        {
            "config": config,
            "manifest": manifest,
            "out": out,
            "seed": seed,
            "regions": regions_path,
            "layers": layers,
        },
    )


@main.command()
@_config
@_manifest
@_out
@_multistride
@_fusion
@_layers
@click.option("--model", "model_path", default=None, type=click.Path(), help="Trained model; defaults to <out>/model.json.")
@click.pass_context
def infer(ctx, config, manifest, out, multistride, fusion, layers, model_path):
    """Score the test split: probability maps, masks, ranked proposals."""
    _call(
        ctx.obj["server"],
        "/v1/infer",
        {
            "config": config,
            "manifest": manifest,
            "out": out,
            "model": model_path,
            "multistride": multistride,
            "fusion": fusion,
            "layers": layers,
        },
    )


@main.command("eval-roc")
@_config
@_manifest
@_out
@click.pass_context
def eval_roc(ctx, config, manifest, out):
    """Pixel ROC of the probability maps under <out>/maps."""
    _call(ctx.obj["server"], "/v1/eval/roc", {"config": config, "manifest": manifest, "out": out})


@main.command("eval-recall")
@_config
@_manifest
@_out
@click.option("--top-n", "top_ns", multiple=True, type=click.IntRange(min=1), help="Proposal budget(s) for the recall curve; repeatable.")
@click.pass_context
def eval_recall(ctx, config, manifest, out, top_ns):
    """Instance recall and average recall of the ranked proposals."""
    payload = {"config": config, "manifest": manifest, "out": out}
    if top_ns:
        payload["top_ns"] = list(top_ns)
    _call(ctx.obj["server"], "/v1/eval/recall", payload)


@main.command()
@_config
@_manifest
@_out
@click.option("--max-boxes", default=20, type=click.IntRange(min=1), help="Box-overlay budget when no maps exist.")
@click.pass_context
def render(ctx, config, manifest, out, max_boxes):
    """Composite probability heat (or top boxes) over the test images."""
    _call(
        ctx.obj["server"],
        "/v1/render",
        {"config": config, "manifest": manifest, "out": out, "max_boxes": max_boxes},
    )


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
def serve(host, port):
    """Run the stage service over HTTP."""
    import uvicorn

    uvicorn.run("obstacle_discovery.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
