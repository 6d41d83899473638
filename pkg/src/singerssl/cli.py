"""Command line entry point: ``singerssl {prepare,synth,train,embed,eval}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
abort during training, 5 partial failure (some inputs skipped).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .dsp import AudioClip
from .io import FormatError, export_csv, read_checkpoint, read_embeddings, write_embeddings
from .metrics import mnr, probe_cross_validate, sample_trials, trials_eer
from .pairs import (SPLITS, AudioFormatError, DatasetManifest, ManifestEntry, load_clips,
                    read_wav, trim_silence, write_wav)
from .synth import make_corpus
from .train import NumericalAbort, embed_clips, train_loop

logger = logging.getLogger("singerssl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_PARTIAL = 5


class DataError(Exception):
    pass


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_manifest(path) -> DatasetManifest:
    try:
        return DatasetManifest.load(path)
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read manifest {path}: {err}") from err


def _splits(arg: str) -> list[str]:
    if arg == "all":
        return list(SPLITS)
    names = [s.strip() for s in arg.split(",") if s.strip()]
    bad = [s for s in names if s not in SPLITS]
    if bad or not names:
        raise C.ConfigError(f"--split must be 'all' or a comma list of {SPLITS}, got {arg!r}")
    return names


# --- commands ---------------------------------------------------------------------

def cmd_prepare(args, run) -> int:
    manifest = _load_manifest(args.manifest)
    if not len(manifest):
        raise DataError(f"{args.manifest} has no entries")
    out = Path(args.out)
    errors, entries = [], []
    for e in manifest.entries:
        rel = Path(e.path)
        rel = Path("wav") / rel.name if rel.is_absolute() else rel
        try:
            clip = read_wav(manifest.resolve(e), mono=run["mono"], resample=run["resample"])
        except (OSError, ValueError, AudioFormatError) as err:
            logger.warning("skipping %s: %s", e.path, err)
            errors.append({"path": e.path, "error": str(err)})
            continue
        trimmed = trim_silence(clip)
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_wav(out / rel, AudioClip(trimmed.samples, trimmed.sample_rate_hz))
        entries.append(ManifestEntry(str(rel), e.split, e.singer_id))
    out.mkdir(parents=True, exist_ok=True)
    DatasetManifest(entries, out).save(out / "manifest.jsonl")
    _dump(out / "prepare_report.json",
          {"config": C.jsonable(run), "written": len(entries), "errors": errors})
    print(f"prepared {len(entries)} of {len(manifest)} clips into {out}")
    if errors:
        print(f"{len(errors)} file(s) failed, see {out / 'prepare_report.json'}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_synth(args, run) -> int:
    out = Path(args.out)
    manifest = make_corpus(out, run["n_singers"], run["clips_per_singer"], run["seconds"], run["seed"])
    _dump(out / "config.json", C.jsonable(run))
    print(f"wrote {len(manifest)} clips to {out / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_train(args, run) -> int:
    tcfg = C.train_config(run)
    manifest = _load_manifest(args.manifest)
    try:
        train = load_clips(manifest, "train", tcfg.segment_seconds, run["mono"], run["resample"])
        val = load_clips(manifest, "val", 0.0, run["mono"], run["resample"])
    except (OSError, ValueError) as err:
        raise DataError(str(err)) from err
    if not train or not val:
        raise DataError("training needs clips in both the train and val splits")
    if tcfg.max_steps != 0 and tcfg.max_epochs != 0 and len(train) < tcfg.batch_size:
        raise DataError(f"{len(train)} usable training clips, batch size is {tcfg.batch_size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {"run": C.jsonable(run), "train": tcfg.to_dict()}
    _dump(out / "config.json", snapshot)
    log_path = out / "metrics.jsonl"
    log_path.write_text("")
    try:
        ckpt = train_loop(tcfg, train, val, log_path)
    except NumericalAbort as err:
        _dump(out / "abort.json", {"config": C.jsonable(run), "error": str(err),
                                   "diagnostics": err.diagnostics})
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    ckpt.config["run"] = C.jsonable(run)
    ckpt.save(out / "checkpoint.bin")
    print(f"best epoch {ckpt.epoch}: " + json.dumps(ckpt.metrics, sort_keys=True))
    return EXIT_OK


def cmd_embed(args, run) -> int:
    try:
        ckpt = read_checkpoint(args.checkpoint)
    except (OSError, FormatError) as err:
        raise DataError(f"cannot read checkpoint: {err}") from err
    manifest = _load_manifest(args.manifest)
    splits = _splits(args.split)
    clips = []
    try:
        for s in splits:
            clips += load_clips(manifest, s, 0.0, run["mono"], run["resample"])
    except (OSError, ValueError) as err:
        raise DataError(str(err)) from err
    table = embed_clips(ckpt.params, ckpt.spec, clips, run["eval_segment_seconds"])
    if not len(table):
        raise DataError("no clip is long enough for one segment")
    assert table.vectors.shape[1] == ckpt.spec.width
    provenance = {"run": C.jsonable(run), "checkpoint_run": ckpt.config.get("run"),
                  "splits": splits}
    write_embeddings(args.out, table, provenance)
    if args.csv:
        export_csv(args.csv, table)
    print(f"wrote {len(table)} x {table.vectors.shape[1]} embeddings to {args.out}")
    return EXIT_OK


def _table(rows: list[tuple[str, str]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def cmd_eval(args, run) -> int:
    try:
        table, emb_config = read_embeddings(args.embeddings)
    except (OSError, FormatError, KeyError) as err:
        raise DataError(f"cannot read embeddings: {err}") from err
    if not table.has_labels:
        raise DataError("evaluation needs singer labels in the embedding file")
    seed = run["seed"]
    report = {"config": C.jsonable(run), "embeddings": str(args.embeddings),
              "embedding_config": emb_config, "rows": len(table)}
    rows = [("rows", str(len(table)))]
    try:
        if args.task in ("similarity", "all"):
            res = trials_eer(sample_trials(table, run["n_pairs"], np.random.default_rng([seed, 1])))
            m = mnr(table, run["mnr_k"], run["mnr_n"], np.random.default_rng([seed, 2]))
            report["similarity"] = {"eer": res.eer, "eer_threshold": res.threshold,
                                    "n_pairs": run["n_pairs"], "mnr": m,
                                    "mnr_k": run["mnr_k"], "mnr_n": run["mnr_n"]}
            rows += [("EER", f"{100 * res.eer:.2f}%"),
                     (f"MNR (K={run['mnr_k']}, N={run['mnr_n']})", f"{m:.4f}")]
        if args.task in ("probe", "all"):
            res = probe_cross_validate(table, run["folds"], np.random.default_rng([seed, 3]),
                                       run["probe_epochs"])
            report["probe"] = res
            rows.append((f"probe accuracy ({run['folds']}-fold)", f"{100 * res['accuracy']:.2f}%"))
    except ValueError as err:
        raise DataError(str(err)) from err
    if args.out:
        _dump(Path(args.out), report)
    print(_table(rows))
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------------

COMMANDS = {
    "prepare": (cmd_prepare, "trim silence and normalise a manifest's audio"),
    "synth": (cmd_synth, "generate a synthetic labelled singer corpus"),
    "train": (cmd_train, "train an encoder with one of the self-supervised losses"),
    "embed": (cmd_embed, "embed fixed-length segments of every clip in a manifest"),
    "eval": (cmd_eval, "singer similarity (EER, MNR) and linear-probe evaluation"),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (override the --config file)")
    g.add_argument("--config", help="flat key = value config file")
    for key, default in C.DEFAULTS.items():
        if isinstance(default, tuple):
            shown = ",".join(map(str, default))
        else:
            shown = default
        g.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V",
                       help=f"default: {shown}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singerssl", description="Self-supervised singer embeddings from the command line.",
        epilog="exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort, 5 partial failure")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        if name == "prepare":
            p.add_argument("--manifest", required=True, help="input JSON-lines manifest")
            p.add_argument("--out", required=True, help="output directory")
        elif name == "synth":
            p.add_argument("--out", required=True, help="output directory")
        elif name == "train":
            p.add_argument("--manifest", required=True)
            p.add_argument("--out", required=True, help="run directory")
        elif name == "embed":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--manifest", required=True)
            p.add_argument("--out", required=True, help="embedding file to write")
            p.add_argument("--split", default="all", help="'all' or e.g. 'val,test'")
            p.add_argument("--csv", help="also export a CSV copy")
        elif name == "eval":
            p.add_argument("--embeddings", required=True)
            p.add_argument("--task", choices=("similarity", "probe", "all"), default="all")
            p.add_argument("--out", help="JSON report path")
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k) for k in C.DEFAULTS}
        run = C.resolve(args.config, overrides)
        print("# resolved configuration\n" + C.format_config(run), file=sys.stderr)
        return COMMANDS[args.command][0](args, run)
    except C.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
