"""Command-line entry point.

Subcommands: build-dataset, synth, train, eval, gradcheck, simmap.
Configuration precedence is defaults < --config JSON < command-line flags;
the effective configuration is echoed into the output directory. Exit
codes: 0 success, 1 runtime failure, 2 validation failure. Every command
is deterministic given --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import losses, synth, train, zeroshot
from .datapipe import gbif as gbif_mod
from .datapipe import manifest as manifest_mod
from .datapipe import sentences as sentences_mod
from .datapipe import tiles as tiles_mod
from .datapipe import wiki as wiki_mod
from .embed import make_provider
from .errors import ValidationError, WincelError
from .io import (
    atomic_write_bytes,
    read_embeddings,
    read_sidecar,
    write_json,
    write_loss_csv,
)
from .linalg import normalize_rows
from .simmap import grid_similarity, load_raster_embeddings, minmax_scale, write_raster

logger = logging.getLogger("wincel")

GRADCHECK_THRESHOLD = 1e-6


def _require_file(path: str, what: str) -> str:
    if not path or not os.path.exists(path):
        raise ValidationError(f"{what} not found: {path!r}")
    return path


def _merged_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < JSON config file < explicit CLI flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        with open(_require_file(args.config, "config file"), "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _echo_config(out_dir: str, command: str, cfg: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "effective_config.json"), {"command": command, **cfg})


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    try:
        import numba

        numba.set_num_threads(max(1, threads))
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# data loading shared by train/eval
# ---------------------------------------------------------------------------

def _load_records(manifest_path, features_path, splits):
    records_raw = manifest_mod.read_manifest(_require_file(manifest_path, "manifest"))
    feats = read_embeddings(_require_file(features_path, "features file")).astype(np.float64)
    sources = read_sidecar(features_path)
    row_of = {src: i for i, src in enumerate(sources)}
    out = []
    for i, rec in enumerate(records_raw):
        if rec.split not in splits:
            continue
        if rec.tile_id not in row_of:
            raise ValidationError(f"tile {rec.tile_id} missing from features sidecar")
        out.append(
            train.TripletRecord(
                tile_id=rec.tile_id,
                features=feats[row_of[rec.tile_id]],
                sentence_ids=list(rec.sentence_ids),
                label=rec.eunis_label,
                row=i,
                split=rec.split,
            )
        )
    return out


def _load_train_data(cfg) -> train.TrainData:
    records = _load_records(cfg["manifest"], cfg["features"], splits=("train",))
    if not records:
        raise ValidationError("no training records in manifest")
    val_records = _load_records(cfg["manifest"], cfg["features"], splits=("val",))
    sent = read_embeddings(_require_file(cfg["sentences"], "sentence embeddings")).astype(np.float64)
    sent, _ = normalize_rows(sent)
    texts = None
    if cfg.get("bank"):
        texts = manifest_mod.SentenceBank.load(_require_file(cfg["bank"], "sentence bank")).texts
    return train.TrainData(
        records=records, sentence_embeds=sent, sentence_texts=texts, val_records=val_records
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "manifest": "",
    "features": "",
    "sentences": "",
    "bank": "",
    "provider": "pseudo",
    "loss": "wincel",
    "lr": 1e-4,
    "batch_size": 256,
    "epochs": 60,
    "k": 15,
    "tau": None,
    "weight_decay": 0.01,
    "scheduler_step": 2,
    "scheduler_gamma": 0.95,
    "beta": None,
    "pad_mode": "paper_literal",
    "alpha_grad": "full",
    "use_bias": False,
    "init_latents": "",
}


def cmd_train(args) -> int:
    cfg = _merged_config(args, TRAIN_DEFAULTS)
    cfg["seed"] = args.seed
    out_dir = args.out or "."
    data = _load_train_data(cfg)
    config = train.TrainConfig(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        k=cfg["k"],
        tau=cfg["tau"],
        weight_decay=cfg["weight_decay"],
        scheduler_step=cfg["scheduler_step"],
        scheduler_gamma=cfg["scheduler_gamma"],
        loss_kind=cfg["loss"],
        beta=cfg["beta"],
        seed=args.seed,
        pad_mode=cfg["pad_mode"],
        alpha_grad=cfg["alpha_grad"],
        use_bias=bool(cfg["use_bias"]),
    )
    provider = make_provider(cfg["provider"], dim=data.d_out, seed=args.seed)
    head = None
    if cfg["init_latents"]:
        from .synth import warm_start_head

        latents = read_embeddings(_require_file(cfg["init_latents"], "init latents")).astype(np.float64)
        latent_sources = read_sidecar(cfg["init_latents"])
        latent_row = {src: i for i, src in enumerate(latent_sources)}
        rows = [latent_row[r.tile_id] for r in data.records if r.tile_id in latent_row]
        feats = np.stack([r.features for r in data.records if r.tile_id in latent_row])
        head = warm_start_head(feats, latents[rows], seed=args.seed)
    _echo_config(out_dir, "train", cfg)
    checkpoint, history = train.fit(data, config, embed_provider=provider, head=head)
    atomic_write_bytes(os.path.join(out_dir, "checkpoint.wnck"), checkpoint.to_bytes())
    write_loss_csv(os.path.join(out_dir, "loss.csv"), history)
    if history:
        logger.info("final epoch loss %.6f", history[-1][1])
    print(f"trained {config.loss_kind} for {config.epochs} epochs -> {out_dir}/checkpoint.wnck")
    return 0


EVAL_DEFAULTS = {
    "checkpoint": "",
    "manifest": "",
    "features": "",
    "prompts": "",
    "template": "",
    "provider": "pseudo",
    "split": "test",
}


def cmd_eval(args) -> int:
    cfg = _merged_config(args, EVAL_DEFAULTS)
    cfg["seed"] = args.seed
    out_dir = args.out or "."
    records = _load_records(cfg["manifest"], cfg["features"], splits=(cfg["split"],))
    if not records:
        raise ValidationError(f"no records with split {cfg['split']!r}")
    X = np.stack([r.features for r in records])
    labels = np.array([r.label for r in records])

    if cfg["checkpoint"]:
        with open(_require_file(cfg["checkpoint"], "checkpoint"), "rb") as fh:
            head = train.Checkpoint.from_bytes(fh.read()).head()
        V, _ = train.forward_batch(head, X)
    else:
        V, _ = normalize_rows(X)

    names = zeroshot.load_class_names(_require_file(cfg["prompts"], "prompt file"))
    prompts = zeroshot.build_prompts(zeroshot.PromptSet(class_names=names, template=cfg["template"]))
    provider = make_provider(cfg["provider"], dim=V.shape[1], seed=args.seed)
    class_embeds, _ = normalize_rows(provider.embed_texts(prompts))
    if labels.max() >= len(names):
        raise ValidationError("manifest labels exceed the prompt class count")

    preds = zeroshot.classify(V, class_embeds)
    report = zeroshot.EvalReport.from_predictions(preds, labels, len(names))
    _echo_config(out_dir, "eval", cfg)
    write_json(os.path.join(out_dir, "report.json"), report.to_dict())
    print(f"oa={report.overall_accuracy:.4f} macro_f1={report.macro_f1:.4f} n={len(records)}")
    return 0


SYNTH_DEFAULTS = {
    "classes": 8,
    "n_train": 2000,
    "n_test": 500,
    "k": 8,
    "dim": 64,
    "informative_fraction": 1.0,
    "noise": 0.25,
}


def cmd_synth(args) -> int:
    cfg = _merged_config(args, SYNTH_DEFAULTS)
    cfg["seed"] = args.seed
    out_dir = args.out or "."
    config = synth.SynthConfig(
        classes=cfg["classes"],
        n_train=cfg["n_train"],
        n_test=cfg["n_test"],
        k=cfg["k"],
        dim=cfg["dim"],
        informative_fraction=cfg["informative_fraction"],
        noise=cfg["noise"],
        seed=args.seed,
    )
    _echo_config(out_dir, "synth", cfg)
    info = synth.generate(config, out_dir)
    print(
        f"synthetic benchmark: {info['n_train']}+{info['n_test']} samples, "
        f"{info['classes']} classes, {info['sentences']} sentences -> {out_dir}"
    )
    return 0


GRADCHECK_DEFAULTS = {"loss": "all", "batches": 10}


def _gradcheck_batches(seed: int, n_batches: int):
    """Random small batches: features, padded sentence tensor, token texts."""
    out = []
    for b in range(n_batches):
        rng = np.random.default_rng([seed, b])
        n, k, d_in, d = 8, 4, 12, 10
        X = rng.standard_normal((n, d_in))
        T = rng.standard_normal((n, k, d))
        mask = np.ones((n, k), dtype=bool)
        for i in range(n):
            n_real = int(rng.integers(1, k + 1))
            mask[i, n_real:] = False
        for i in range(n):
            T[i], _ = normalize_rows(T[i])
        T[~mask] = 0.0
        sb = losses.SentenceBatch(T=T, pad_mask=mask)
        texts = [[f"token{int(x)} word thing extra" for x in rng.integers(0, 50, size=k)] for _ in range(n)]
        head = train.ProjectionHead.initialize(d_in, d, rng)
        out.append((head, X, sb, texts))
    return out


def cmd_gradcheck(args) -> int:
    cfg = _merged_config(args, GRADCHECK_DEFAULTS)
    cfg["seed"] = args.seed
    out_dir = args.out or "."
    kinds = list(train.LOSS_KINDS) if cfg["loss"] == "all" else [cfg["loss"]]
    for kind in kinds:
        if kind not in train.LOSS_KINDS:
            raise ValidationError(f"unknown loss kind {kind!r}")
    report: dict[str, dict[str, float]] = {}
    worst = 0.0
    batches = _gradcheck_batches(args.seed, cfg["batches"])
    for kind in kinds:
        report[kind] = {}
        for alpha_grad in ("full", "stop_gradient"):
            config = train.TrainConfig(loss_kind=kind, alpha_grad=alpha_grad, batch_size=2, epochs=0)
            provider = make_provider("pseudo", dim=10, seed=args.seed)
            errs = []
            for head, X, sb, texts in batches:
                errs.append(
                    train.finite_diff_check(
                        kind, head, (X, sb), config=config, provider=provider, texts=texts
                    )
                )
            err = max(errs)
            report[kind][alpha_grad] = err
            worst = max(worst, err)
            print(f"{kind:15s} {alpha_grad:13s} max_rel_err {err:.3e}")
    passed = worst < GRADCHECK_THRESHOLD
    _echo_config(out_dir, "gradcheck", cfg)
    write_json(
        os.path.join(out_dir, "gradcheck.json"),
        {"threshold": GRADCHECK_THRESHOLD, "passed": passed, "errors": report},
    )
    print(f"gradcheck {'PASS' if passed else 'FAIL'} (worst {worst:.3e})")
    return 0 if passed else 1


SIMMAP_DEFAULTS = {
    "checkpoint": "",
    "raster": "",
    "prompt": "",
    "provider": "pseudo",
    "format": "pgm",
}


def cmd_simmap(args) -> int:
    cfg = _merged_config(args, SIMMAP_DEFAULTS)
    cfg["seed"] = args.seed
    out_dir = args.out or "."
    raster = load_raster_embeddings(_require_file(cfg["raster"], "raster embeddings"))
    if not cfg["prompt"]:
        raise ValidationError("--prompt text is required")
    if cfg["checkpoint"]:
        with open(_require_file(cfg["checkpoint"], "checkpoint"), "rb") as fh:
            head = train.Checkpoint.from_bytes(fh.read()).head()
        cells = raster.cells.copy()
        projected, _ = train.forward_batch(head, cells[raster.present])
        cells[raster.present] = projected
        raster.cells = cells
    provider = make_provider(cfg["provider"], dim=raster.cells.shape[1], seed=args.seed)
    prompt_vec = provider.embed_texts([cfg["prompt"]])[0]
    scored = minmax_scale(grid_similarity(raster, prompt_vec))
    _echo_config(out_dir, "simmap", cfg)
    ext = "csv" if cfg["format"] == "csv" else "pgm"
    out_path = os.path.join(out_dir, f"simmap.{ext}")
    write_raster(scored, out_path, format=cfg["format"])
    print(f"similarity raster -> {out_path}")
    return 0


BUILD_DEFAULTS = {
    "gbif": "",
    "wiki": "",
    "eunis": "",
    "keywords": "",
    "merge_map": "",
    "text_type": "habitat",
    "min_count": 100,
    "cap": 10000,
    "lat0": 46.0,
    "lon0": 7.0,
    "block_size": 20000.0,
}


def cmd_build_dataset(args) -> int:
    cfg = _merged_config(args, BUILD_DEFAULTS)
    cfg["seed"] = args.seed
    out_dir = args.out or "."
    rng = np.random.default_rng(args.seed)

    keywords = sentences_mod.load_keywords(
        _require_file(cfg["keywords"], "keywords file") if cfg["keywords"] else None
    )

    # Parse articles into the four sentence sets.
    article_sets: dict[str, sentences_mod.SentenceSets] = {}
    pages = 0
    malformed_templates = 0
    for _, text in wiki_mod.read_wiki_pages(_require_file(cfg["wiki"], "wiki input")):
        pages += 1
        try:
            parsed = wiki_mod.parse_speciesbox(text)
        except WincelError:
            malformed_templates += 1
            continue
        if parsed is None:
            continue
        binomial, body = parsed
        article = wiki_mod.WikiArticle(
            binomial=binomial, sections=wiki_mod.split_sections(wiki_mod.strip_markup(body))
        )
        article_sets.setdefault(binomial, sentences_mod.extract_text_sets(article, keywords))

    records, malformed_rows = gbif_mod.read_gbif_tsv(_require_file(cfg["gbif"], "occurrence table"))
    kept, rejections = gbif_mod.filter_gbif(
        records,
        has_article=lambda sp: sp in article_sets and article_sets[sp].has_habitat,
    )

    projected = [
        (r.species, *tiles_mod.project_lonlat(r.lat, r.lon, cfg["lat0"], cfg["lon0"]))
        for r in kept
    ]
    tile_species = tiles_mod.assign_tiles(projected)

    labels_all = tiles_mod.read_labels_csv(_require_file(cfg["eunis"], "label table"))
    labeled = {tid: labels_all[tid] for tid in tile_species if tid in labels_all}
    unlabeled = len(tile_species) - len(labeled)

    merge_map = tiles_mod.read_merge_csv(cfg["merge_map"]) if cfg["merge_map"] else {}
    kept_labels, class_list, rebalance_stats = tiles_mod.rebalance_eunis(
        labeled, min_count=cfg["min_count"], cap=cfg["cap"], merge_map=merge_map, rng=rng
    )

    _echo_config(out_dir, "build-dataset", cfg)
    stats = {
        "gbif": {
            "parsed": len(records),
            "malformed_rows": len(malformed_rows),
            "kept": len(kept),
            "rejections": rejections,
        },
        "articles": {
            "pages": pages,
            "species_articles": len(article_sets),
            "malformed_templates": malformed_templates,
        },
        "tiles": {"with_species": len(tile_species), "unlabeled": unlabeled},
        "rebalance": rebalance_stats,
        "classes": class_list,
    }

    if not kept_labels:
        logger.warning("no labeled tiles survived filtering; writing empty outputs")
        manifest_mod.write_manifest([], os.path.join(out_dir, "manifest.jsonl"))
        manifest_mod.SentenceBank().save(os.path.join(out_dir, "bank.jsonl"))
        atomic_write_bytes(os.path.join(out_dir, "classes.txt"), b"")
        write_json(os.path.join(out_dir, "split.json"), {"blocks": {}})
        stats["sentences"] = {}
        stats["dropped_empty_tiles"] = 0
        write_json(os.path.join(out_dir, "stats.json"), stats)
        print("empty dataset: no tiles survived filtering")
        return 0

    centers = [
        (tid, *tiles_mod.tile_center(tid)) for tid in sorted(kept_labels)
    ]
    split_assign = tiles_mod.block_split(centers, block_size=cfg["block_size"], seed=args.seed)
    tile_records, bank, dropped_empty = manifest_mod.build_manifest(
        tile_species, kept_labels, class_list, split_assign, article_sets, cfg["text_type"]
    )

    manifest_mod.write_manifest(tile_records, os.path.join(out_dir, "manifest.jsonl"))
    bank.save(os.path.join(out_dir, "bank.jsonl"))
    atomic_write_bytes(os.path.join(out_dir, "classes.txt"), ("\n".join(class_list) + "\n").encode("utf-8"))
    write_json(
        os.path.join(out_dir, "split.json"),
        {
            "block_size_m": split_assign.block_size_m,
            "fractions": list(split_assign.fractions),
            "blocks": {f"{k[0]}_{k[1]}": v for k, v in sorted(split_assign.mapping.items())},
        },
    )
    final_tiles = [r.tile_id for r in tile_records]
    stats["sentences"] = manifest_mod.sentence_stats(tile_species, final_tiles, article_sets)
    stats["dropped_empty_tiles"] = dropped_empty
    stats["split_counts"] = {
        name: sum(1 for r in tile_records if r.split == name) for name in tiles_mod.SPLIT_NAMES
    }
    write_json(os.path.join(out_dir, "stats.json"), stats)
    print(
        f"manifest: {len(tile_records)} tiles, {len(bank)} sentences, "
        f"{len(class_list)} classes -> {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="random seed (all commands are deterministic given it)")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--out", help="output directory", default=".")
    parser.add_argument("--threads", type=int, help="worker thread cap for compiled kernels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wincel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="run the full dataset pipeline")
    _add_common(p)
    p.add_argument("--gbif", help="occurrence TSV (Darwin Core columns)")
    p.add_argument("--wiki", help="XML export file or directory of wikitext files")
    p.add_argument("--eunis", help="CSV tile_id,eunis_code")
    p.add_argument("--keywords", help="keyword list file (defaults to the packaged list)")
    p.add_argument("--merge-map", dest="merge_map", help="CSV from_code,to_code (REMOVE allowed)")
    p.add_argument("--text-type", dest="text_type", choices=sentences_mod.TEXT_TYPES)
    p.add_argument("--min-count", dest="min_count", type=int, help="minimum tiles per class")
    p.add_argument("--cap", type=int, help="maximum tiles per class before subsampling")
    p.add_argument("--lat0", type=float, help="projection reference latitude")
    p.add_argument("--lon0", type=float, help="projection reference longitude")
    p.add_argument("--block-size", dest="block_size", type=float, help="spatial split block size in meters")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    _add_common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--k", type=int, help="sentences per sample")
    p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--informative-fraction", dest="informative_fraction", type=float)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the projection head")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--features")
    p.add_argument("--sentences", help="sentence embeddings file")
    p.add_argument("--bank", help="sentence bank JSONL (needed for substring augmentation)")
    p.add_argument("--provider", help="pseudo or file:<path>")
    p.add_argument("--loss", choices=train.LOSS_KINDS)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--k", type=int, help="sentences per sample (zero-padded)")
    p.add_argument("--tau", type=float, help="temperature (defaults per loss kind)")
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--scheduler-step", dest="scheduler_step", type=int)
    p.add_argument("--scheduler-gamma", dest="scheduler_gamma", type=float)
    p.add_argument("--beta", type=float, help="bootstrap target mixing weight")
    p.add_argument("--pad-mode", dest="pad_mode", choices=losses.PAD_MODES)
    p.add_argument("--alpha-grad", dest="alpha_grad", choices=losses.ALPHA_GRAD_MODES)
    p.add_argument("--use-bias", dest="use_bias", action="store_const", const=True)
    p.add_argument(
        "--init-latents",
        dest="init_latents",
        help="warm-start the head from a noisy ridge fit onto these oracle embeddings",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained head (omit to use features as-is)")
    p.add_argument("--manifest")
    p.add_argument("--features")
    p.add_argument("--prompts", help="one class name (or class description) per line, in label order")
    p.add_argument("--template", help="prompt template with one {} placeholder")
    p.add_argument("--provider", help="pseudo or file:<path>")
    p.add_argument("--split", help="manifest split to evaluate (default test)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(p)
    p.add_argument("--loss", help="loss kind or 'all'")
    p.add_argument("--batches", type=int, help="number of random batches")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("simmap", help="prompt similarity raster")
    _add_common(p)
    p.add_argument("--checkpoint", help="project raster features through this head first")
    p.add_argument("--raster", help="cell embeddings (.eemb with .geom.json sidecar)")
    p.add_argument("--prompt", help="prompt text")
    p.add_argument("--provider", help="pseudo or file:<path>")
    p.add_argument("--format", choices=("csv", "pgm"))
    p.set_defaults(func=cmd_simmap)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WincelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
