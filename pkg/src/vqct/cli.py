"""Command-line entry point: ``vqct <command> [options]``.

Exit codes:
  0  success
  1  unexpected internal error
  2  usage error (unknown command or flag, bad flag value)
  3  missing input file
  4  configuration validation failure
  5  malformed input data (embeddings, lexicon, graph, images, checkpoint)
  6  training diverged (non-finite loss)

On failure a single line ``error: <category>: <message>`` goes to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (AnalysisError, pixel_metrics, reconstruct, similarity_drift,
                       snapshots_from_checkpoints, toy2d, utilization)
from .config import ConfigError, TrainConfig, load_config, parse_overrides
from .data import DatasetError, load_ppm_dir
from .graph import GraphError, build_from_corpus, export_edge_list, load_edge_list
from .io import atomic_write_text, fmt_float, write_csv
from .nn import CheckpointError, load_tensors, save_tensors
from .priors import PriorsError, build_plm_codebooks, load_embeddings, load_lexicon
from .tensor import ShapeError
from .train import (TrainingDiverged, build_model, load_dataset, load_resources,
                    train)

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = range(7)

log = logging.getLogger("vqct")


class CliError(Exception):
    def __init__(self, code: int, category: str, message: str):
        super().__init__(message)
        self.code, self.category = code, category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _require_files(*paths) -> None:
    for p in paths:
        if p and not Path(p).is_file():
            raise CliError(EXIT_MISSING, "missing-file", f"{p} does not exist")


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        _require_files(args.config)
        cfg = load_config(args.config, cfg)
    overrides = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(TrainConfig)
                 if getattr(args, f"cfg_{f.name}", None) is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = parse_overrides({k: str(v) for k, v in overrides.items()}, cfg)
    _require_files(cfg.embeddings, cfg.lexicon, cfg.corpus, cfg.edges)
    if cfg.dataset != "synthetic" and not Path(cfg.dataset).is_dir():
        raise CliError(EXIT_MISSING, "missing-file", f"dataset directory {cfg.dataset} not found")
    return cfg.validate()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, argv: list[str], cfg: TrainConfig | None,
                    seed, artifacts: list[Path]) -> None:
    lines = [f"version={__version__}", f"command={command}",
             "argv=" + " ".join(argv), f"seed={seed}"]
    if cfg is not None:
        lines += [f"config.{f.name}={getattr(cfg, f.name)}" for f in fields(cfg)]
    for p in sorted(set(artifacts)):
        lines.append(f"artifact.{p.relative_to(out).as_posix()}={_sha256(p)}")
    atomic_write_text(out / f"manifest_{command}.txt", "\n".join(lines) + "\n")


def _load_model(cfg: TrainConfig, out: Path, checkpoint):
    _require_files(checkpoint)
    resources = load_resources(cfg, out) if cfg.variant == "vqct" else None
    model = build_model(cfg, resources)
    model.params.load_state_dict(load_tensors(checkpoint))
    return model


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args, out: Path) -> tuple[list[Path], TrainConfig | None]:
    _require_files(args.embeddings, args.lexicon, args.corpus, args.edges)
    if not args.corpus and not args.edges:
        raise CliError(EXIT_USAGE, "usage", "ingest needs --corpus or --edges")
    emb = load_embeddings(args.embeddings)
    lex = load_lexicon(args.lexicon)
    cb = build_plm_codebooks(emb, lex, args.k_adj, args.k_noun)
    graph = load_edge_list(args.edges, cb) if args.edges else build_from_corpus(args.corpus, lex, cb)
    if graph.empty_corpus:
        log.warning("corpus is empty; graph has no edges")
    if graph.skipped:
        log.warning("skipped %d edge-list lines with unknown words", graph.skipped)
    paths = [out / "plm_codebooks.bin", out / "adj_words.txt", out / "noun_words.txt",
             out / "graph.tsv"]
    save_tensors(paths[0], {"r_adj": cb.r_adj, "r_noun": cb.r_noun})
    atomic_write_text(paths[1], "".join(w + "\n" for w in cb.adj_words))
    atomic_write_text(paths[2], "".join(w + "\n" for w in cb.noun_words))
    export_edge_list(graph, paths[3])
    print(f"k_adj={cb.k_adj} k_noun={cb.k_noun} edges={len(graph.edges)} skipped={graph.skipped}")
    return paths, None


def cmd_train(args, out: Path):
    cfg = _resolve_config(args)
    atomic_write_text(out / "config.cfg", cfg.to_text())
    report = train(cfg, out_dir=out)
    images = load_dataset(cfg)
    util = utilization(report.model, images)
    util_path = out / "utilization.csv"
    util.write_csv(util_path)
    last = report.metrics[-1]
    print(f"epochs={len(report.metrics)} l_rec={last.l_rec:.6f} psnr={last.psnr:.3f} "
          f"used_fraction={util.overall_used_fraction:.4f}")
    return [out / "config.cfg", report.metrics_path, util_path, *report.checkpoints], cfg


def cmd_eval(args, out: Path):
    cfg = _resolve_config(args)
    model = _load_model(cfg, out, args.checkpoint)
    if args.images:
        if not Path(args.images).is_dir():
            raise CliError(EXIT_MISSING, "missing-file", f"{args.images} is not a directory")
        paths, images = load_ppm_dir(args.images)
        names = [p.name for p in paths]
    else:
        images = load_dataset(cfg)
        names = [f"synthetic_{i:05d}" for i in range(len(images))]
    recon = reconstruct(model, images)
    rows = []
    for name, x, xh in zip(names, images, recon):
        m = pixel_metrics(x, np.clip(xh, 0.0, 1.0))
        rows.append([name, fmt_float(m.psnr), fmt_float(m.l1), fmt_float(m.l2)])
    total = pixel_metrics(images, np.clip(recon, 0.0, 1.0))
    rows.append(["ALL", fmt_float(total.psnr), fmt_float(total.l1), fmt_float(total.l2)])
    written = [out / "eval.csv"]
    write_csv(written[0], ["image", "psnr", "l1", "l2"], rows)
    if args.export_tokens:
        written += export_tokens(model, images, names, out / "tokens")
    print(f"psnr={total.psnr:.4f} l1={total.l1:.6f} l2={total.l2:.6f}")
    return written, cfg


def export_tokens(model, images, names, directory: Path) -> list[Path]:
    """One CSV per image: header names the codebook sizes, then one row per grid row."""
    written = []
    sizes = model.codebook_sizes()
    for start in range(0, len(images), 64):
        grids = model.quantize_indices(images[start:start + 64])
        for k in range(grids[0].shape[0]):
            name = Path(names[start + k]).stem
            if len(sizes) == 2:
                header = f"# k_adj={sizes[0]} k_noun={sizes[1]}"
                blocks = [("adj", grids[0][k]), ("noun", grids[1][k])]
            else:
                header = f"# k={sizes[0]}"
                blocks = [("codes", grids[0][k])]
            lines = [header]
            for label, grid in blocks:
                lines += [f"{label}," + ",".join(str(int(v)) for v in row) for row in grid]
            path = directory / f"{name}.csv"
            atomic_write_text(path, "\n".join(lines) + "\n")
            written.append(path)
    return written


def cmd_analyze(args, out: Path):
    cfg = _resolve_config(args)
    ckpts = args.checkpoint
    _require_files(*ckpts)
    model = _load_model(cfg, out, ckpts[-1])
    images = load_dataset(cfg)
    util = utilization(model, images)
    written = [out / "utilization.csv", out / "utilization_summary.csv"]
    util.write_csv(written[0])
    write_csv(written[1], ["codebook", "used_fraction", "perplexity"],
              [[n, fmt_float(u), fmt_float(p)]
               for n, u, p in zip(util.names, util.used_fraction, util.perplexity)]
              + [["all", fmt_float(util.overall_used_fraction), ""]])
    msg = f"used_fraction={util.overall_used_fraction:.4f}"
    if len(ckpts) >= 2:
        snaps = snapshots_from_checkpoints(model, ckpts)
        drift = similarity_drift(snaps, n_probe=args.n_probe, seed=args.probe_seed)
        written.append(out / "drift.csv")
        drift.write_csv(written[-1])
        msg += f" final_drift={drift.final:.6f}"
    print(msg)
    return written, cfg


def cmd_toy2d(args, out: Path):
    run = toy2d(steps=args.steps, seed=args.seed if args.seed is not None else 0,
                k=args.k, lr=args.lr)
    path = out / "trajectory.csv"
    run.write_csv(path)
    print(f"rows={len(run.rows())}")
    return [path], None


def cmd_export_codebook(args, out: Path):
    cfg = _resolve_config(args)
    model = _load_model(cfg, out, args.checkpoint)
    written = []
    if cfg.variant == "vqct":
        codes = model.generate()
        save_tensors(out / "codebook.bin", {"c_adj": codes.c_adj.data, "c_noun": codes.c_noun.data})
        written.append(out / "codebook.bin")
        for label, words, mat in [("adj", model.plm.adj_words, codes.c_adj.data),
                                  ("noun", model.plm.noun_words, codes.c_noun.data)]:
            path = out / f"codebook_{label}.tsv"
            atomic_write_text(path, "".join(
                w + "\t" + "\t".join(fmt_float(v) for v in row) + "\n"
                for w, row in zip(words, mat)))
            written.append(path)
    else:
        mat = model.codebook_snapshot()
        save_tensors(out / "codebook.bin", {"codebook": mat})
        path = out / "codebook.tsv"
        atomic_write_text(path, "".join(
            f"{i}\t" + "\t".join(fmt_float(v) for v in row) + "\n" for i, row in enumerate(mat)))
        written += [out / "codebook.bin", path]
    return written, cfg


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (win over --config)")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        kind = {"int": int, "float": float}.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind,
                       default=None, metavar=kind.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default="out", help="all outputs are written here")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="vqct", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="build PLM codebooks and modifying graph")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--corpus")
    p.add_argument("--edges")
    p.add_argument("--k-adj", type=int, default=32)
    p.add_argument("--k-noun", type=int, default=32)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train a baseline or vqct model")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="reconstruction metrics")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", help="directory of .ppm images (default: configured dataset)")
    p.add_argument("--export-tokens", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", parents=[common], help="utilization and similarity drift")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, nargs="+",
                   help="checkpoints in training order; the last one is used for utilization")
    p.add_argument("--n-probe", type=int, default=10)
    p.add_argument("--probe-seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("toy2d", parents=[common], help="2-D direct vs transfer code updates")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.1)
    p.set_defaults(func=cmd_toy2d)

    p = sub.add_parser("export-codebook", parents=[common], help="write code vectors")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_codebook)
    return parser


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if not args.command:
            raise CliError(EXIT_USAGE, "usage", "no command given (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out_dir)
        written, cfg = args.func(args, out)
        seed = cfg.seed if cfg is not None else args.seed
        _write_manifest(out, args.command, argv, cfg, seed, [p for p in written if p])
        return EXIT_OK
    except CliError as exc:
        code, category, msg = exc.code, exc.category, str(exc)
    except FileNotFoundError as exc:
        code, category, msg = EXIT_MISSING, "missing-file", str(exc)
    except ConfigError as exc:
        code, category, msg = EXIT_CONFIG, "config", str(exc)
    except (PriorsError, GraphError, DatasetError, CheckpointError, AnalysisError,
            ShapeError) as exc:
        code, category, msg = EXIT_DATA, "data", str(exc)
    except TrainingDiverged as exc:
        code, category, msg = EXIT_DIVERGED, "diverged", str(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort categorization
        code, category, msg = EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}"
    print(f"error: {category}: {msg}".replace("\n", " "), file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
