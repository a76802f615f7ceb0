"""Command-line pipeline: train-embedding, train-generator, distort, evaluate.

Exit codes are stable: 0 ok, 2 config, 3 data, 4 checkpoint, 5 shape,
6 missing artifact.
"""

from __future__ import annotations

import os

# Honor EMBEDSAFE_THREADS before numpy first loads its BLAS.
_threads = os.environ.get("EMBEDSAFE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import hashlib
import sys
from dataclasses import asdict

import numpy as np

from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    EmbedSafeError,
    InterpolationError,
    MissingArtifactError,
    ParameterError,
    ProtocolError,
    RankError,
    TrainingDivergedError,
    ValidationError,
)
from .evaluation import (
    build_auth_protocol,
    distance_table,
    mock_auth_eval,
    pca_project,
)
from .embedding import train_embedding
from .generator import margin_sweep, train_generator
from .mnist_data import (
    IMAGE_MAGIC,
    load_idx,
    quantize_to_bytes,
    read_idx_images,
    read_pgm,
    subsample,
    write_idx_images,
    write_pgm,
)
from .reports import write_csv, write_pca_svg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_SHAPE = 5
EXIT_MISSING = 6


def _load_split(cfg: RunConfig, split: str):
    paths = cfg.data
    if split == "train":
        images, labels = paths.images_path, paths.labels_path
    else:
        images, labels = paths.test_images_path, paths.test_labels_path
    try:
        return load_idx(images, labels, split=split)
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {exc.filename}") from exc


def _load_model(path: str | None, expected_kinds: tuple[str, ...]) -> LoadedCheckpoint:
    if path is None:
        raise MissingArtifactError(
            f"a {'/'.join(expected_kinds)} checkpoint is required for this command"
        )
    try:
        loaded = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise MissingArtifactError(f"checkpoint not found: {path}") from exc
    if loaded.manifest["model_kind"] not in expected_kinds:
        raise CheckpointError(
            f"{path}: model kind {loaded.manifest['model_kind']!r}, "
            f"expected one of {expected_kinds}"
        )
    return loaded


def _file_sha256(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def cmd_train_embedding(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    dataset = _load_split(cfg, "train")
    net, trace = train_embedding(dataset, cfg.embedding)
    save_checkpoint(net, args.out, config_echo=asdict(cfg.embedding))
    loss_csv = os.path.join(os.path.dirname(os.path.abspath(args.out)), "embedding_loss.csv")
    write_csv(loss_csv, ["epoch", "mean_triplet_loss"],
              [(i + 1, v) for i, v in enumerate(trace)])
    print(f"wrote {args.out} and {loss_csv}")


def cmd_train_generator(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    emb_hash = None
    if args.embedding and os.path.exists(args.embedding):
        emb_hash = _file_sha256(args.embedding)
    emb = _load_model(args.embedding, ("embedder",)).model
    dataset = _load_split(cfg, "train")
    gen, trace = train_generator(dataset, emb, cfg.generator)
    save_checkpoint(gen, args.out, config_echo=asdict(cfg.generator))
    if emb_hash is not None and _file_sha256(args.embedding) != emb_hash:
        raise CheckpointError("embedding checkpoint changed during generator training")
    loss_csv = os.path.join(os.path.dirname(os.path.abspath(args.out)), "generator_loss.csv")
    write_csv(loss_csv, ["epoch", "total", "l_img", "l_emb"],
              [(i + 1, s.total, s.l_img, s.l_emb) for i, s in enumerate(trace)])
    print(f"wrote {args.out} and {loss_csv}")


def _sniff_format(path: str) -> str:
    try:
        with open(path, "rb") as f:
            head = f.read(4)
    except FileNotFoundError as exc:
        raise DataError(f"input not found: {path}") from exc
    if head[:2] == b"P5":
        return "pgm"
    if len(head) == 4 and int.from_bytes(head, "big") == IMAGE_MAGIC:
        return "idx"
    raise DataError(f"{path}: neither an IDX images file nor a P5 PGM")


def cmd_distort(args) -> None:
    gen = _load_model(args.generator, ("generator", "identity")).model
    expect_hw = gen.arch.input_hw
    fmt = _sniff_format(args.in_path)
    if fmt == "pgm":
        img = read_pgm(args.in_path)
        if img.shape[:2] != expect_hw:
            raise DimensionError(f"input is {img.shape[0]}x{img.shape[1]}, "
                                 f"generator expects {expect_hw[0]}x{expect_hw[1]}")
        write_pgm(args.out, gen.distort(img))
    else:
        raw = read_idx_images(args.in_path)
        if raw.shape[1:] != expect_hw:
            raise DimensionError(f"input images are {raw.shape[1]}x{raw.shape[2]}, "
                                 f"generator expects {expect_hw[0]}x{expect_hw[1]}")
        images = (raw.astype(np.float32) / 255.0)[..., np.newaxis]
        distorted = gen.distort_batch(images)
        write_idx_images(args.out, quantize_to_bytes(distorted[..., 0]))
    print(f"wrote {args.out}")


def _eval_distances(args, cfg: RunConfig, out_dir: str) -> None:
    gen = _load_model(args.generator, ("generator", "identity")).model
    test = _load_split(cfg, "test")
    if cfg.eval.fraction < 1.0:
        test = subsample(test, cfg.eval.fraction, cfg.seed)
    classes = [int(c) for c in np.unique(test.labels)]
    rows = distance_table(test, gen, classes, cfg.eval.pairs_per_class, cfg.seed)
    write_csv(os.path.join(out_dir, "distances.csv"),
              ["class", "real_gen", "real_real", "gen_gen"],
              [(r.class_id, r.real_gen, r.real_real, r.gen_gen) for r in rows])


def _eval_pca(args, cfg: RunConfig, out_dir: str) -> None:
    emb = _load_model(args.embedding, ("embedder",)).model
    gen = _load_model(args.generator, ("generator", "identity")).model
    test = _load_split(cfg, "test")
    rng = np.random.default_rng(cfg.seed)
    blocks = []  # (class, kind, images)
    for cls in cfg.eval.stored_classes:
        idx = test.class_indices(int(cls))
        take = min(cfg.eval.pca_per_class, idx.size)
        chosen = rng.choice(idx, size=take, replace=False)
        real = test.images[chosen]
        blocks.append((int(cls), "real", real))
        blocks.append((int(cls), "generated", gen.distort_batch(real)))
    embeddings = np.concatenate([emb.embed_batch(imgs) for _, _, imgs in blocks])
    points, _ratios = pca_project(embeddings, k=3)
    rows = []
    at = 0
    for cls, kind, imgs in blocks:
        for j in range(imgs.shape[0]):
            x, y, z = points[at]
            rows.append((cls, kind, float(x), float(y), float(z)))
            at += 1
    write_csv(os.path.join(out_dir, "pca.csv"),
              ["class", "kind", "pc1", "pc2", "pc3"], rows)
    write_pca_svg(os.path.join(out_dir, "pca.svg"), rows)


def _eval_auth(args, cfg: RunConfig, out_dir: str) -> None:
    emb = _load_model(args.embedding, ("embedder",)).model
    gen = _load_model(args.generator, ("generator", "identity")).model
    test = _load_split(cfg, "test")
    enrollment, positives, negatives = build_auth_protocol(
        test, cfg.eval.stored_classes, cfg.eval.templates_per_class,
        cfg.eval.attempts, cfg.seed,
    )
    distorted, control = mock_auth_eval(
        cfg.eval.stored_classes, positives, negatives, gen, emb,
        enrollment=enrollment,
        sweep=(cfg.eval.threshold_min, cfg.eval.threshold_max, cfg.eval.threshold_count),
    )
    for name, report in (("distorted", distorted), ("control", control)):
        write_csv(
            os.path.join(out_dir, f"auth_sweep_{name}.csv"),
            ["tau", "tp", "fp", "fn", "tn", "precision", "recall", "f1"],
            [(p.tau, p.confusion.tp, p.confusion.fp, p.confusion.fn, p.confusion.tn,
              p.precision, p.recall, p.f1) for p in report.sweep],
        )
        write_csv(
            os.path.join(out_dir, f"auth_summary_{name}.csv"),
            ["best_tau", "precision", "recall", "f1", "eer"],
            [(report.best_threshold, report.precision, report.recall,
              report.f1, report.eer)],
        )


def _eval_margin_sweep(args, cfg: RunConfig, out_dir: str) -> None:
    emb = _load_model(args.embedding, ("embedder",)).model
    train = _load_split(cfg, "train")
    entries = margin_sweep(train, emb, cfg.eval.sweep_alphas, cfg.generator)
    rows = []
    for e in entries:
        status = "ok" if e.error is None else e.error.replace(",", ";")
        rows.append((e.alpha, e.mean_d_img, e.mean_d_emb, status))
        if e.samples is not None:
            for i in range(e.samples.shape[0]):
                write_pgm(os.path.join(out_dir, f"margin_alpha{e.alpha:g}_sample{i}.pgm"),
                          e.samples[i])
    write_csv(os.path.join(out_dir, "margin_sweep.csv"),
              ["alpha", "mean_d_img", "mean_d_emb", "status"], rows)


def cmd_evaluate(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    handler = {
        "distances": _eval_distances,
        "pca": _eval_pca,
        "auth": _eval_auth,
        "margin-sweep": _eval_margin_sweep,
    }[args.mode]
    handler(args, cfg, out_dir)
    print(f"wrote reports to {out_dir}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embedsafe",
        description="Train and evaluate the embedding-preserving image distorter",
    )
    sub = p.add_subparsers(dest="command", required=True)

    te = sub.add_parser("train-embedding", help="train the triplet embedder")
    te.add_argument("--config", required=True)
    te.add_argument("--out", required=True, help="checkpoint output path")
    te.add_argument("--seed", type=int, default=None, help="override the config seed")

    tg = sub.add_parser("train-generator", help="train the distortion generator")
    tg.add_argument("--config", required=True)
    tg.add_argument("--embedding", required=True, help="trained embedder checkpoint")
    tg.add_argument("--out", required=True)
    tg.add_argument("--seed", type=int, default=None)

    di = sub.add_parser("distort", help="distort an IDX or PGM file")
    di.add_argument("--generator", required=True)
    di.add_argument("--in", dest="in_path", required=True, help="IDX images or P5 PGM")
    di.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="emit CSV evaluation reports")
    ev.add_argument("mode", choices=["distances", "pca", "auth", "margin-sweep"])
    ev.add_argument("--config", required=True)
    ev.add_argument("--embedding", default=None)
    ev.add_argument("--generator", default=None)
    ev.add_argument("--out", required=True, help="report output directory")
    ev.add_argument("--seed", type=int, default=None)
    return p


_HANDLERS = {
    "train-embedding": cmd_train_embedding,
    "train-generator": cmd_train_generator,
    "distort": cmd_distort,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        _HANDLERS[args.command](args)
        return EXIT_OK
    except (ConfigError, ParameterError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RankError, InterpolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, ValidationError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except EmbedSafeError as exc:  # anything uncategorized
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
