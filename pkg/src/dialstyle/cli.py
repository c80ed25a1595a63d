"""Command-line surface for batch experimentation and fixture generation.

Every subcommand is a thin, logged composition of library operations and is
deterministic under a fixed seed. Exit codes: 0 success, 1 domain error
(config/eval/build), 2 format or I/O error. ``RADKA_LOG=debug|info``
controls verbosity; ``--config FILE`` supplies per-subcommand defaults as
JSON (e.g. ``{"query": {"k": 3}}``).
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import synthetic
from .errors import ConfigError, DialstyleError, EvalError, FormatError
from .formats import read_bundle_file, read_vector_file, write_vector_file
from .retrieval import RetrievalConfig, Scheme, recall_at, retrieve, query_cd_vectors
from .sdssd import SpeakerTable, build_store, load_store, save_store
from .styleagg import PipelineWeights, aggregate_for_query, export_fs_emb, z_sweep, z_sweep_csv
from .synthetic import SyntheticConfig, load_meta_file, write_corpus
from .types import BundleDims

log = logging.getLogger(__name__)

STORE_FILE = "store.sdss"
SPEAKERS_FILE = "speakers.sdwt"


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("RADKA_LOG", "").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def engine_errors(fn):
    """Map engine exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FormatError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except DialstyleError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _log_params(command: str, params: dict) -> None:
    resolved = {k: v for k, v in sorted(params.items()) if v is not None}
    log.info("%s resolved config: %s", command, json.dumps(resolved, default=str, sort_keys=True))


def _parse_dims(spec: str | None) -> BundleDims:
    if not spec:
        return synthetic.DEFAULT_DIMS
    out = {}
    try:
        for part in spec.split(","):
            key, value = part.split("=", 1)
            out["d_" + key.strip()] = int(value)
    except ValueError:
        raise ConfigError(f"bad dims spec {spec!r}; expected e.g. sem=16,sty=16,dt=16,...") from None
    return BundleDims(**out)


def _parse_range(spec: str) -> tuple[int, int]:
    try:
        lo, hi = spec.split("..", 1)
        return int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"bad range {spec!r}; expected A..B") from None


def _parse_z_values(spec: str) -> list[int]:
    values: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = _parse_range(part)
            values.extend(range(lo, hi + 1))
        elif part:
            values.append(int(part))
    if not values:
        raise ConfigError(f"no z values in {spec!r}")
    return values


def _load_cd(cd_path, cd_meta_path, entry: str | None):
    """Load one current-dialogue bundle plus its speaker list."""
    dims, bundles = read_bundle_file(cd_path)
    if entry is not None:
        matching = [b for b in bundles if b.entry_id == entry]
        if not matching:
            raise ConfigError(f"no bundle {entry!r} in {cd_path}")
        bundle = matching[0]
    elif len(bundles) == 1:
        bundle = bundles[0]
    else:
        raise ConfigError(f"{cd_path} has {len(bundles)} bundles; pick one with --entry")

    if cd_meta_path is not None:
        _, metas = load_meta_file(cd_meta_path)
        by_id = {m.id: m for m in metas}
        if bundle.entry_id not in by_id:
            raise ConfigError(f"{cd_meta_path} has no dialogue {bundle.entry_id!r}")
        speakers = list(by_id[bundle.entry_id].speakers)
    else:
        # No meta: neutral speakers with zero offsets.
        speakers = ["?"] * bundle.n_sent
    return dims, bundle, speakers


def _load_table(db_dir, d_sty: int, speakers) -> SpeakerTable:
    path = Path(db_dir) / SPEAKERS_FILE
    if path.exists():
        table = SpeakerTable.load(path)
        missing = [s for s in speakers if s not in table.vectors]
        if not missing:
            return table
        log.warning("speaker table lacks %s; falling back to zero vectors", missing)
    return SpeakerTable.zeros(set(speakers), d_sty=d_sty)


def _read_gt_file(path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    try:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            out[row["query_id"]] = list(row["gt"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed ground-truth file {path}: {exc}") from exc
    return out


def _hit_line(hit) -> str:
    return json.dumps(
        {
            "id": hit.entry_id,
            "sem_sim": hit.sem_sim,
            "sty_sim": hit.sty_sim,
            "combined": hit.combined,
            "display_similarity": hit.display_similarity,
            "rank": hit.rank,
        }
    )


def _translate_config(doc: dict) -> dict:
    """Map user-facing flag names in a config file onto parameter names."""
    out = {}
    for cmd_name, overrides in doc.items():
        cmd = main.commands.get(cmd_name)
        if cmd is None or not isinstance(overrides, dict):
            out[cmd_name] = overrides
            continue
        by_flag = {}
        for param in cmd.params:
            for opt in param.opts:
                by_flag[opt.lstrip("-")] = param.name
        out[cmd_name] = {by_flag.get(k, k): v for k, v in overrides.items()}
    return out


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with per-subcommand option defaults.")
@click.pass_context
def main(ctx, config_path):
    """Dialogue semantic-style retrieval and aggregation engine."""
    _setup_logging()
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            ctx.default_map = _translate_config(json.load(fh))
        log.info("loaded config defaults from %s", config_path)


@main.command("build-db")
@click.option("--bundles", "bundles_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--meta", "meta_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--normalize/--no-normalize", default=True, show_default=True,
              help="Store L2-normalized vectors.")
@click.option("--speakers", "speakers_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Speaker table (SDWT); defaults to zero vectors.")
@engine_errors
def cmd_build_db(bundles_path, meta_path, out_dir, normalize, speakers_path):
    """Build the dialogue database from bundles + dialogue texts."""
    _log_params("build-db", locals())
    dims, bundles = read_bundle_file(bundles_path)
    _, metas = load_meta_file(meta_path)
    by_id = {b.entry_id: b for b in bundles}
    missing = [m.id for m in metas if m.id not in by_id]
    if missing:
        raise ConfigError(f"meta lists dialogues with no bundle: {missing[:5]}")
    if speakers_path:
        table = SpeakerTable.load(speakers_path)
    else:
        table = SpeakerTable.zeros({s for m in metas for s in m.speakers}, d_sty=dims.d_sa)

    store = build_store([(m, by_id[m.id]) for m in metas], table, normalize=normalize, dims=dims)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_store(store, out / STORE_FILE)
    table.save(out / SPEAKERS_FILE)
    digest = hashlib.sha256((out / STORE_FILE).read_bytes()).hexdigest()
    dims_str = ",".join(f"{k[2:]}={v}" for k, v in store.manifest.dims.as_dict().items())
    click.echo(f"entries={len(store)} dims={dims_str} checksum={digest}")


@main.command("query")
@click.option("--db", "db_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--cd", "cd_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cd-meta", "cd_meta_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--entry", default=None, help="Bundle id when --cd holds several.")
@click.option("--scheme", default="rs1", show_default=True,
              type=click.Choice([s.value for s in Scheme]))
@click.option("--k", default=5, show_default=True, type=int)
@click.option("--z", default=None, type=int, help="Override the hit count (inference-style).")
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--exclude", multiple=True, help="Entry ids to exclude (repeatable).")
@click.option("--seed", default=0, show_default=True, type=int, help="Seed for the random scheme.")
@click.option("--fold-an/--no-fold-an", default=False, show_default=True,
              help="Fold the predicted last-turn style into the style query.")
@engine_errors
def cmd_query(db_dir, cd_path, cd_meta_path, entry, scheme, k, z, weights_path, gt_path,
              exclude, seed, fold_an):
    """Rank stored dialogues against a current-dialogue bundle."""
    _log_params("query", locals())
    store = load_store(Path(db_dir) / STORE_FILE)
    _, bundle, speakers = _load_cd(cd_path, cd_meta_path, entry)
    table = _load_table(db_dir, store.manifest.dims.d_sty, speakers)

    predictor = None
    if weights_path:
        predictor = PipelineWeights.load(weights_path).an_predictor
    cfg = RetrievalConfig(
        scheme=Scheme.parse(scheme), k=k, exclude_ids=frozenset(exclude), seed=seed,
        fold_an_into_query=fold_an,
    )
    query_sem, query_sty, _ = query_cd_vectors(
        bundle, speakers, table, predictor, fold_an_into_query=fold_an
    )

    gt_ids = None
    if cfg.scheme is Scheme.RS7:
        if not gt_path:
            raise ConfigError("scheme rs7 needs --gt")
        gt_map = _read_gt_file(gt_path)
        if bundle.entry_id in gt_map:
            gt_ids = gt_map[bundle.entry_id]
        elif len(gt_map) == 1:
            gt_ids = next(iter(gt_map.values()))
        else:
            raise ConfigError(f"--gt has no row for query {bundle.entry_id!r}")

    hits = retrieve(store, query_sem, query_sty, cfg, n=z, gt_ids=gt_ids)
    for hit in hits:
        click.echo(_hit_line(hit))


@main.command("eval-recall")
@click.option("--results", "results_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL of {query_id, retrieved}; repeatable, one CSV row each.")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ks", default="1,2,3,4,5,10", show_default=True)
@click.option("--mode", default="hit", show_default=True, type=click.Choice(["hit", "overlap"]))
@engine_errors
def cmd_eval_recall(results_paths, gt_path, ks, mode):
    """Recall@k table (CSV) for one or more result sets."""
    _log_params("eval-recall", locals())
    gt = _read_gt_file(gt_path)
    try:
        k_list = [int(k) for k in ks.split(",") if k.strip()]
    except ValueError:
        raise EvalError(f"bad --ks {ks!r}") from None
    click.echo("results," + ",".join(f"R@{k}" for k in k_list))
    for path in results_paths:
        rows = {}
        try:
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                row = json.loads(line)
                rows[row["query_id"]] = list(row["retrieved"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed results file {path}: {exc}") from exc
        values = recall_at(rows, gt, k_list, mode=mode)
        label = Path(path).stem
        click.echo(label + "," + ",".join(f"{values[k]:.6f}" for k in k_list))


@main.command("encode")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--track", required=True, type=click.Choice(["text", "audio"]))
@click.option("--entry", default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@engine_errors
def cmd_encode(bundle_path, weights_path, track, entry, out_path):
    """Encode one bundle track into a single vector file."""
    _log_params("encode", locals())
    from .mghg import build_mghg, bundle_track, encode_dialogue

    _, bundle, _ = _load_cd(bundle_path, None, entry)
    weights = PipelineWeights.load(weights_path)
    enc = weights.text_encoder if track == "text" else weights.audio_encoder
    d, s, w = bundle_track(bundle, track)
    vec = encode_dialogue(build_mghg(d, s, w), enc)
    write_vector_file(out_path, vec)
    click.echo(f"encoded entry={bundle.entry_id} track={track} dim={vec.shape[0]}")


@main.command("aggregate")
@click.option("--db", "db_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--cd", "cd_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cd-meta", "cd_meta_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--entry", default=None)
@click.option("--bundles", "bundles_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="SDEB file with the stored entries' bundles (for encoding).")
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=5, show_default=True, type=int)
@click.option("--exclude", multiple=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@engine_errors
def cmd_aggregate(db_dir, cd_path, cd_meta_path, entry, bundles_path, weights_path, k, exclude, out_path):
    """Retrieve, encode and aggregate into a final style embedding file."""
    _log_params("aggregate", locals())
    store = load_store(Path(db_dir) / STORE_FILE)
    _, bundle, speakers = _load_cd(cd_path, cd_meta_path, entry)
    table = _load_table(db_dir, store.manifest.dims.d_sty, speakers)
    weights = PipelineWeights.load(weights_path)
    _, sd_bundles = read_bundle_file(bundles_path)
    bundle_map = {b.entry_id: b for b in sd_bundles}

    cfg = RetrievalConfig(scheme=Scheme.RS1, k=k, exclude_ids=frozenset(exclude))
    hits, _, w_vec, rs_emb, fs_emb = aggregate_for_query(
        store, bundle_map, bundle, speakers, table, weights, cfg
    )
    export_fs_emb(fs_emb, out_path)
    for hit in hits:
        click.echo(_hit_line(hit))
    click.echo(f"fs_emb dim={fs_emb.shape[0]} rs_norm={float(np.linalg.norm(rs_emb)):.6f} "
               f"weights_sum={float(np.sum(w_vec, dtype=np.float64)):.6f}")


@main.command("z-sweep")
@click.option("--db", "db_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--cd", "cd_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cd-meta", "cd_meta_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--entry", default=None)
@click.option("--bundles", "bundles_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt-style", "gt_style_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="SDFV file with the ground-truth style embedding.")
@click.option("--z", "z_spec", default="1..25", show_default=True,
              help="Z values: a range A..B and/or comma-separated values.")
@click.option("--exclude", multiple=True)
@click.option("--full-fs-emb/--rs-emb", default=False, show_default=True,
              help="Compare the full final embedding instead of the retrieved mix.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the CSV here as well as stdout.")
@engine_errors
def cmd_z_sweep(db_dir, cd_path, cd_meta_path, entry, bundles_path, weights_path, gt_style_path,
                z_spec, exclude, full_fs_emb, out_path):
    """Similarity-vs-retrieval-count curve against a ground-truth style."""
    _log_params("z-sweep", locals())
    store = load_store(Path(db_dir) / STORE_FILE)
    _, bundle, speakers = _load_cd(cd_path, cd_meta_path, entry)
    table = _load_table(db_dir, store.manifest.dims.d_sty, speakers)
    weights = PipelineWeights.load(weights_path)
    _, sd_bundles = read_bundle_file(bundles_path)
    gt_style = read_vector_file(gt_style_path)

    rows = z_sweep(
        store, {b.entry_id: b for b in sd_bundles}, bundle, speakers, table, weights,
        _parse_z_values(z_spec), gt_style,
        full_fs_emb=full_fs_emb, exclude_ids=frozenset(exclude),
    )
    csv = z_sweep_csv(rows)
    click.echo(csv, nl=False)
    if out_path:
        Path(out_path).write_text(csv, encoding="utf-8")


@main.command("gen-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--entries", default=50, show_default=True, type=int)
@click.option("--turns-range", default="2..6", show_default=True)
@click.option("--words-range", default="1..8", show_default=True)
@click.option("--dims", "dims_spec", default=None, help="e.g. sem=16,sty=16,dt=16,st=12,wt=8,da=16,sa=16,wa=8")
@click.option("--clusters", default=5, show_default=True, type=int)
@click.option("--noise", default=0.1, show_default=True, type=float)
@click.option("--queries", default=0, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@engine_errors
def cmd_gen_synthetic(out_dir, entries, turns_range, words_range, dims_spec, clusters, noise, queries, seed):
    """Generate a clustered synthetic corpus (bundles, meta, speakers)."""
    _log_params("gen-synthetic", locals())
    cfg = SyntheticConfig(
        entries=entries,
        turns=_parse_range(turns_range),
        words=_parse_range(words_range),
        clusters=clusters,
        noise=noise,
        dims=_parse_dims(dims_spec),
        seed=seed,
    )
    written = write_corpus(out_dir, cfg, queries=queries)
    click.echo(json.dumps(written, sort_keys=True))


@main.command("gen-weights")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dims", "dims_spec", default=None)
@click.option("--hidden", default=256, show_default=True, type=int)
@click.option("--predictor-hidden", default=64, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--scale", default=0.1, show_default=True, type=float,
              help="Uniform(-scale, scale) parameter range; 0 gives all-zero weights.")
@click.option("--predictor/--no-predictor", default=True, show_default=True)
@engine_errors
def cmd_gen_weights(out_path, dims_spec, hidden, predictor_hidden, seed, scale, predictor):
    """Write a seeded reference weights file (SDWT)."""
    _log_params("gen-weights", locals())
    weights = synthetic.random_pipeline_weights(
        _parse_dims(dims_spec), hidden, seed=seed, scale=scale,
        with_predictor=predictor, predictor_hidden=predictor_hidden,
    )
    weights.save(out_path)
    click.echo(f"tensors={len(weights.to_tensors())} hidden={hidden}")


@main.command("verify-bundle")
@click.option("--bundles", "bundles_path", required=True, type=click.Path(exists=True, dir_okay=False))
@engine_errors
def cmd_verify_bundle(bundles_path):
    """Validate an SDEB file and report its contents."""
    _log_params("verify-bundle", locals())
    dims, bundles = read_bundle_file(bundles_path)
    absent = sum(1 for b in bundles if b.last_audio_absent)
    dims_str = ",".join(f"{k[2:]}={v}" for k, v in dims.as_dict().items())
    click.echo(f"OK entries={len(bundles)} dims={dims_str} last_audio_absent={absent}")


if __name__ == "__main__":
    main()
