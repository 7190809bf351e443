"""Command-line entry point tying the pipeline together.

Subcommands: ``parse`` (OBO to TSVs), ``split``, ``train``, ``eval``,
``analyze`` (stats or correlation), ``baseline``. Experiment definition
lives in a JSON config file (sections: data, model, train, loss_weights,
split, seed); flags carry only paths and overrides. Exit codes: 0 on
success, 1 on a validation/usage error, 2 on a runtime error. Logs go to
stderr, artifacts to ``--out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .analysis import dataset_stats, distance_similarity_correlation, string_baseline, write_correlation_csv
from .encoder import CHECKPOINT_VERSION, EncoderConfig, EncoderModel, build_vocab
from .graph import build_graph, load_dataset_tsvs
from .losses import LossWeights
from .obo import normalize_dataset, parse_obo, write_dataset_tsvs
from .scoring import EntityEmbeddingCache, SimilarityHead
from .splits import Fold, Setting, SplitSpec, make_few_shot_split, make_zero_shot_split
from .templates import RELATION_PHRASES, TEMPLATE_WORDS, extend_relation_phrases, load_phrase_overrides
from .trainer import ConfigInvalid, TrainConfig, final_evaluation, load_checkpoint, train

logger = logging.getLogger("ontonorm")

DEFAULT_CONFIG: dict = {
    "data": {"dir": "data", "phrase_table": None},
    "model": {"depth": 2, "d_model": 64, "n_heads": 2, "d_ff": 128, "max_len": 64, "dtype": "float64"},
    "train": {
        "mode": "zero_shot",
        "warmup_iters": 400,
        "epochs": 30,
        "lr_initial": 1e-3,
        "lr_final": 1e-4,
        "batch_size": 32,
        "cache_refresh_period": 200,
        "negatives": 20,
        "entity_names_visible": True,
        "eval_every": 1,
    },
    "loss_weights": {"lam_p": 1.0, "lam_c": 1.0, "lam_1": 1.0, "lam_2": 1.0, "lam_base": 0.0},
    "split": {"setting": "few_shot", "zero_shot_no_valid": False},
    "seed": 0,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        sys.exit(1)


def load_config(path: Optional[str]) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
        for section, value in user.items():
            if section not in config:
                raise ConfigInvalid(f"unknown config section {section!r}")
            if isinstance(value, dict):
                unknown = set(value) - set(config[section])
                if unknown:
                    raise ConfigInvalid(f"unknown keys in config section {section!r}: {sorted(unknown)}")
                config[section].update(value)
            else:
                config[section] = value
    return config


def _load_graph(data_dir):
    entities, pairs, triples = load_dataset_tsvs(data_dir)
    return build_graph(entities, pairs, triples)


def _training_vocab(graph, split, config: TrainConfig):
    """Entity names (per visibility), training synonyms, relation phrases,
    and the template connectives."""
    corpus = []
    if config.entity_names_visible or split.entity_folds is None:
        corpus.extend(e.phrase for e in graph.entities)
    else:
        corpus.extend(
            graph.entities[i].phrase for i, f in enumerate(split.entity_folds) if f in (0, 1)
        )
    corpus.extend(s for (e, s), f in zip(graph.pairs, split.pair_folds) if f == Fold.TRAIN)
    corpus.extend(RELATION_PHRASES.values())
    corpus.extend(TEMPLATE_WORDS)
    return build_vocab(corpus)


def cmd_parse(args) -> int:
    doc = parse_obo(Path(args.infile))
    dataset = normalize_dataset(doc)
    for w in dataset.warnings:
        logger.warning(w)
    write_dataset_tsvs(dataset, args.out)
    logger.info(
        "wrote %d entities, %d pairs, %d triples to %s",
        len(dataset.entities), len(dataset.pairs), len(dataset.triples), args.out,
    )
    return 0


def cmd_split(args) -> int:
    config = load_config(args.config)
    graph = _load_graph(args.indir)
    seed = int(config["seed"])
    if config["split"]["setting"] == "few_shot":
        split = make_few_shot_split(graph.pairs, seed=seed)
    else:
        split = make_zero_shot_split(graph, seed=seed, no_valid=bool(config["split"]["zero_shot_no_valid"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split.save_tsv(out / "split.tsv")
    logger.info("wrote %s split for %d pairs to %s", split.setting.value, len(graph.pairs), out / "split.tsv")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    if config["data"].get("phrase_table"):
        extend_relation_phrases(load_phrase_overrides(config["data"]["phrase_table"]))
    graph = _load_graph(args.indir)
    split = SplitSpec.load_tsv(args.split)

    weights = LossWeights(**config["loss_weights"])
    train_cfg = TrainConfig(weights=weights, seed=int(config["seed"]), **config["train"])
    expected_setting = Setting.ZERO_SHOT if train_cfg.mode == "zero_shot" else Setting.FEW_SHOT
    if split.setting != expected_setting:
        raise ConfigInvalid(f"split setting {split.setting.value} does not match train mode {train_cfg.mode}")
    if train_cfg.float32:
        config["model"]["dtype"] = "float32"

    vocab = _training_vocab(graph, split, train_cfg)
    model = EncoderModel(vocab, EncoderConfig(**config["model"]), seed=train_cfg.seed)
    head = SimilarityHead(dtype=model.config.np_dtype)
    cache = EntityEmbeddingCache.from_encoder(model, graph)

    state = train(model, head, cache, graph, split, train_cfg, out_dir=args.out)
    logger.info("finished %d steps; best validation Acc@1 %.4f", state.step, state.best_val_acc1)
    print(json.dumps({"best_val_acc1": state.best_val_acc1, "steps": state.step, "best_checkpoint": state.best_path}))
    return 0


def cmd_eval(args) -> int:
    model, head, cache, _config, _state = load_checkpoint(args.checkpoint)
    graph = _load_graph(args.indir)
    split = SplitSpec.load_tsv(args.split)
    report = final_evaluation(model, head, cache, graph, split, k_list=tuple(args.k))
    payload = report.to_json(None)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        ranks_path = str(Path(args.out).with_suffix(".ranks.txt"))
        Path(ranks_path).write_text("\n".join(map(str, report.ranks)) + "\n", encoding="utf-8")
        payload = report.to_json(ranks_path)
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def cmd_analyze(args) -> int:
    graph = _load_graph(args.indir)
    if args.what == "stats":
        stats = dataset_stats(graph)
        payload = json.dumps(dataclasses.asdict(stats), indent=2)
        if args.out:
            Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(payload)
        return 0
    buckets = distance_similarity_correlation(
        graph, max_distance=args.max_distance, sample_size=args.sample_size, seed=args.seed
    )
    if not args.out:
        raise ConfigInvalid("analyze correlation requires --out CSV path")
    write_correlation_csv(buckets, args.out)
    logger.info("wrote %d distance buckets to %s", len(buckets), args.out)
    return 0


def cmd_baseline(args) -> int:
    graph = _load_graph(args.indir)
    split = SplitSpec.load_tsv(args.split)
    report = string_baseline(graph, split, k_list=tuple(args.k))
    payload = report.to_json(None)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ontonorm", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"ontonorm {__version__} (checkpoint format v{CHECKPOINT_VERSION})")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker-parallelism bound (0 = all cores); execution is "
                             "currently single-threaded for reproducibility")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="OBO file -> entities/pairs/triples TSVs")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("split", help="dataset TSVs -> split.tsv")
    p.add_argument("--config", default=None)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model from config + split")
    p.add_argument("--config", default=None)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--k", type=int, nargs="+", default=[1, 10])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="dataset statistics or the distance/similarity table")
    p.add_argument("what", choices=["stats", "correlation"])
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--max-distance", type=int, default=5)
    p.add_argument("--sample-size", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("baseline", help="edit-distance ranking baseline on the test fold")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--k", type=int, nargs="+", default=[1, 10])
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (ConfigInvalid, FileNotFoundError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return 1
    except Exception as exc:  # runtime failure
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
