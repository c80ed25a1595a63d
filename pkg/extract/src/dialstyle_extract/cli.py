"""Extraction CLI: ``extract bundles|speakers|weights|validate``."""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .backends import BackendUnavailable
from .extractor import ExtractorConfig, extract_corpus, extract_speaker_table, load_dialogues, provenance
from .refweights import gen_reference_weights
from .sdeb import SdebError, validate_bundles, write_bundles, write_tensors

log = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("RADKA_LOG", "").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_config(config_path, backend, aligner_dir, pooling) -> ExtractorConfig:
    cfg = ExtractorConfig.from_json(config_path) if config_path else ExtractorConfig()
    overrides = {}
    if backend:
        overrides["backend"] = backend
    if aligner_dir:
        overrides["aligner_dir"] = aligner_dir
    if pooling:
        overrides["pooling"] = pooling
    return replace(cfg, **overrides) if overrides else cfg


@click.group()
def main():
    """Feature extraction into the engine's portable file formats."""
    _setup_logging()


@main.command("bundles")
@click.option("--dialogues", "dialogues_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--audio-root", default=".", type=click.Path(exists=True, file_okay=False), show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--backend", type=click.Choice(["hashed", "hf"]), default=None,
              help="Override the config's backend.")
@click.option("--aligner-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--pooling", default=None, help="Emotion-embedder pooling, recorded in the sidecar.")
def cmd_bundles(dialogues_path, audio_root, out_path, config_path, backend, aligner_dir, pooling):
    """Extract embedding bundles for a dialogue corpus."""
    try:
        cfg = _load_config(config_path, backend, aligner_dir, pooling)
        dialogues = load_dialogues(dialogues_path)
        bundles, dims = extract_corpus(dialogues, cfg, audio_root)
        write_bundles(out_path, bundles, dims)
        sidecar = Path(out_path).with_suffix(Path(out_path).suffix + ".extract.json")
        sidecar.write_text(json.dumps(provenance(cfg, dims), indent=2, sort_keys=True), encoding="utf-8")
    except BackendUnavailable as exc:
        click.echo(f"backend unavailable: {exc}", err=True)
        sys.exit(3)
    except (SdebError, ValueError, KeyError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {len(bundles)} bundles dims={json.dumps(dims, sort_keys=True)}")


@main.command("speakers")
@click.option("--dialogues", "dialogues_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--audio-root", default=".", type=click.Path(exists=True, file_okay=False), show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--backend", type=click.Choice(["hashed", "hf"]), default=None)
def cmd_speakers(dialogues_path, audio_root, out_path, config_path, backend):
    """Extract one mean speaker vector per speaker (plus the projection)."""
    try:
        cfg = _load_config(config_path, backend, None, None)
        dialogues = load_dialogues(dialogues_path)
        tensors = extract_speaker_table(dialogues, cfg, audio_root)
        write_tensors(out_path, tensors)
    except BackendUnavailable as exc:
        click.echo(f"backend unavailable: {exc}", err=True)
        sys.exit(3)
    except (SdebError, ValueError, KeyError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    speakers = sorted(n.split("/", 1)[1] for n in tensors if n.startswith("speaker/"))
    click.echo(f"wrote {len(speakers)} speakers: {','.join(speakers)}")


@main.command("weights")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dims", "dims_spec", default=None,
              help="e.g. dt=32,st=32,wt=16,da=24,sa=24,wa=16 (defaults match the hashed backend).")
@click.option("--hidden", default=256, show_default=True, type=int)
@click.option("--predictor-hidden", default=64, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--scale", default=0.1, show_default=True, type=float)
@click.option("--zero", is_flag=True, help="All-zero weights (equivalent to --scale 0).")
def cmd_weights(out_path, dims_spec, hidden, predictor_hidden, seed, scale, zero):
    """Write seeded reference weights for the engine."""
    from .extractor import HASHED_DIMS

    dims = dict(HASHED_DIMS)
    if dims_spec:
        try:
            for part in dims_spec.split(","):
                key, value = part.split("=", 1)
                dims["d_" + key.strip()] = int(value)
        except ValueError:
            click.echo(f"error: bad dims spec {dims_spec!r}", err=True)
            sys.exit(2)
    try:
        tensors = gen_reference_weights(
            dims, seed, scale=0.0 if zero else scale, hidden=hidden, predictor_hidden=predictor_hidden
        )
        write_tensors(out_path, tensors)
    except (SdebError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {len(tensors)} tensors hidden={hidden} seed={seed}")


@main.command("validate")
@click.option("--bundles", "bundles_path", required=True, type=click.Path(exists=True, dir_okay=False))
def cmd_validate(bundles_path):
    """Check an SDEB file against the format contract."""
    try:
        summary = validate_bundles(bundles_path)
    except (SdebError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(
        f"OK entries={summary['entries']} "
        f"dims={json.dumps(summary['dims'], sort_keys=True)} "
        f"last_audio_absent={summary['last_audio_absent']}"
    )


if __name__ == "__main__":
    main()
