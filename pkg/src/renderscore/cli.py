"""Operator CLI: score image pairs, run batch evaluations, check renderers.

Exit codes are a stable contract: 0 success, 2 usage/input error,
3 renderer- or provider-environment error. Every flag can also be set
through RENDERSCORE_<COMMAND>_<FLAG> environment variables.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .emd import EmsConfig, ems
from .errors import (DuplicateInstance, MalformedManifest, ProviderUnavailable,
                     RenderscoreError)
from .harness import (build_leaderboard, emit_report, evaluate_instances,
                      load_manifest, make_provider, read_records)
from .images import load_image, normalize_pair, to_grayscale
from .basic_metrics import pixel_similarity, ssim_normalized
from .rendering import (default_renderer_specs, load_renderer_specs,
                        probe_renderer)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ENVIRONMENT = 3


def _metric_options(fn):
    fn = click.option("--grid", default=8, show_default=True,
                      help="Patches per side for the block metric.")(fn)
    fn = click.option("--max-dim", default=512, show_default=True,
                      help="Working-resolution bound before the block metric.")(fn)
    fn = click.option("--value-weight", default=1.0, show_default=True,
                      help="Weight of the |Δvalue| term in the patch cost.")(fn)
    return fn


def _specs(renderers: str | None):
    if renderers:
        return load_renderer_specs(renderers)
    return default_renderer_specs()


@click.group(context_settings={"auto_envvar_prefix": "RENDERSCORE"})
def main():
    """Round-trip structure evaluation toolkit."""


@main.command("score-pair")
@click.argument("image_a", type=click.Path())
@click.argument("image_b", type=click.Path())
@_metric_options
def score_pair(image_a, image_b, grid, max_dim, value_weight):
    """Score IMAGE_B against reference IMAGE_A and print metrics as JSON."""
    try:
        ref = load_image(image_a)
        cand = load_image(image_b)
    except Exception as exc:
        click.echo(f"error: cannot read input image: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    cfg = EmsConfig(grid=grid, max_dim=max_dim, value_weight=value_weight)
    ref, cand = normalize_pair(ref, cand)
    gray_ref, gray_cand = to_grayscale(ref), to_grayscale(cand)
    result = ems(gray_ref, gray_cand, cfg)
    click.echo(json.dumps({
        "ems": result.ems,
        "emd_block": result.emd_block,
        "ems_denominator": result.denominator,
        "worst_constant": result.worst_constant,
        "pixel_similarity": pixel_similarity(ref, cand),
        "ssim": ssim_normalized(gray_ref, gray_cand),
        "cis": None,
        "edit_similarity": None,
    }, indent=2))


@main.command("evaluate")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(),
              help="Output directory for records, artifacts and reports.")
@click.option("--renderers", type=click.Path(),
              help="Renderer spec JSON; bundled fallbacks when omitted.")
@click.option("--provider", required=True,
              help="Completion provider: an argv string or an http(s) URL.")
@click.option("--model-id", default="model", show_default=True)
@click.option("--workers", default=1, show_default=True,
              help="Concurrent render/score workers.")
@click.option("--format", "formats", multiple=True,
              type=click.Choice(["json", "csv", "html"]),
              help="Report formats (repeatable; default: all).")
@click.option("--activation-cmd", default=None,
              help="Optional activation-provider argv for CIS scoring.")
@_metric_options
def evaluate(manifest, out, renderers, provider, model_id, workers, formats,
             activation_cmd, grid, max_dim, value_weight):
    """Run the full round-trip evaluation over a manifest."""
    try:
        specs = _specs(renderers)
    except Exception as exc:
        click.echo(f"error: cannot load renderer specs: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    try:
        instances = load_manifest(manifest)
    except (MalformedManifest, DuplicateInstance, OSError) as exc:
        click.echo(f"error: bad manifest: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    if not instances:
        click.echo("manifest is empty; nothing to do")
        sys.exit(EXIT_OK)

    needed = sorted({i.domain for i in instances})
    missing = [d for d in needed if d not in specs]
    if missing:
        click.echo(f"error: no renderer configured for: {', '.join(missing)}",
                   err=True)
        sys.exit(EXIT_ENVIRONMENT)
    for domain in needed:
        probe = probe_renderer(domain, specs[domain])
        status = "ok" if probe["ok"] else f"FAIL ({probe['cause']})"
        click.echo(f"renderer {domain}: {status}")
        if not probe["ok"]:
            click.echo("error: renderer environment check failed", err=True)
            sys.exit(EXIT_ENVIRONMENT)

    cfg = EmsConfig(grid=grid, max_dim=max_dim, value_weight=value_weight)
    provider_obj = make_provider(provider)
    try:
        records = evaluate_instances(
            instances, provider_obj, model_id, specs, out, cfg=cfg,
            activation_cmd=activation_cmd.split() if activation_cmd else None,
            workers=workers,
            progress=lambda r: click.echo(
                f"  {r.instance_id}: "
                + (f"ems={r.scores.ems:.3f}" if r.render_success else "render failed")))
    except ProviderUnavailable as exc:
        click.echo(f"error: provider unavailable: {exc}", err=True)
        sys.exit(EXIT_ENVIRONMENT)
    except KeyboardInterrupt:
        click.echo("interrupted; partial records kept", err=True)
        sys.exit(130)

    files = emit_report(records, out, formats=tuple(formats) or ("json", "csv", "html"))
    board = build_leaderboard(records)
    ok = sum(r.render_success for r in records)
    click.echo(f"{len(records)} instances, rendering success {ok}/{len(records)}")
    for domain in board["domains"]:
        for row in board["tables"][domain]:
            ems_text = "-" if row["ems"] is None else f"{row['ems']:.3f}"
            click.echo(f"  {domain:9s} {row['model']}: "
                       f"RSR {row['rendering_success']:.3f}  EMS {ems_text}")
    for path in files:
        click.echo(f"wrote {path}")


@main.command("doctor")
@click.option("--renderers", type=click.Path(),
              help="Renderer spec JSON; bundled fallbacks when omitted.")
def doctor(renderers):
    """Probe every configured renderer with a known-good snippet."""
    try:
        specs = _specs(renderers)
    except Exception as exc:
        click.echo(f"error: cannot load renderer specs: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    all_ok = True
    for domain in sorted(specs):
        probe = probe_renderer(domain, specs[domain])
        all_ok &= probe["ok"]
        status = "ok" if probe["ok"] else f"FAIL: {probe['cause']}"
        version = f" [{probe['version']}]" if probe["version"] else ""
        duration = (f" ({probe['duration_s']}s)"
                    if probe["duration_s"] is not None else "")
        click.echo(f"{domain:9s} {status}{version}{duration}")
    click.echo("environment " + ("looks healthy" if all_ok else "has failures"))


@main.command("report")
@click.option("--records", "records_dir", required=True, type=click.Path(),
              help="Record store directory (the records/ folder).")
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "formats", multiple=True,
              type=click.Choice(["json", "csv", "html"]))
def report(records_dir, out, formats):
    """Regenerate reports from stored records."""
    try:
        records = read_records(records_dir)
    except (OSError, json.JSONDecodeError, RenderscoreError) as exc:
        click.echo(f"error: cannot read records: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    if not records:
        click.echo("error: no records found", err=True)
        sys.exit(EXIT_INPUT)
    files = emit_report(records, out, formats=tuple(formats) or ("json", "csv", "html"))
    for path in files:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
