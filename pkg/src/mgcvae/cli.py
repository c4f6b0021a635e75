"""Command-line entry point: ``mgcvae prepare|train|generate|evaluate|props``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from mgcvae.cvae import Model, ModelConfig, load_checkpoint, sample, train
from mgcvae.dataset import DatasetManifest, IngestConfig, ingest
from mgcvae.errors import (
    ConditionError,
    DataError,
    InvalidProperty,
    MGCVAEError,
    NonFiniteGradient,
    SmilesError,
    TableError,
)
from mgcvae.evalkit import ConditionTable, condition_table, emit_report, metrics, morgan_fp, pca2
from mgcvae.molgraph import Schema, validate
from mgcvae.props import CONDITION_DIM, LOGP_GRID, MR_GRID, ConditionVector, properties
from mgcvae.smiles import parse_smiles, write_smiles

log = logging.getLogger("mgcvae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- run configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything reusable across subcommands; flags override individual fields.

    Relative paths are resolved against the directory holding the config file.
    """

    schema: dict = field(default_factory=lambda: {"S": 16, "A": 12, "B": 4})
    data_dir: str = "data"
    kind: str = "mgcvae"
    model: dict = field(default_factory=dict)
    grid: list = field(default_factory=lambda: [[c1, c2] for c2 in MR_GRID for c1 in LOGP_GRID])
    n_per_condition: int = 1000
    split_seed: int = 0
    generate_seed: int = 0
    skip_bad_lines: bool = False
    output_dir: str = "runs"
    pca_per_source: int = 1000
    base: Path = field(default=Path("."), repr=False)

    @classmethod
    def load(cls, path: str | None) -> RunConfig:
        if path is None:
            return cls()
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        names = {f.name for f in fields(cls)} - {"base"}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise UsageError(f"{path}: unknown config keys {unknown}")
        cfg = cls(**raw, base=p.parent)
        if cfg.kind not in ("mgvae", "mgcvae"):
            raise UsageError(f"kind must be 'mgvae' or 'mgcvae', got {cfg.kind!r}")
        return cfg

    def path(self, value: str | Path) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def model_config(self, kind: str | None = None, **overrides) -> ModelConfig:
        kind = kind or self.kind
        params = dict(self.model)
        params.update({k: v for k, v in overrides.items() if v is not None})
        params["condition_dim"] = CONDITION_DIM if kind == "mgcvae" else 0
        params["schema"] = Schema(**self.schema)
        try:
            return ModelConfig.from_dict(params)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad model settings: {exc}") from None


# -- argument parsing ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgcvae", description="Graph-matrix (C)VAE molecule generation pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="filter, tensorize and split a SMILES file")
    p.add_argument("input", help="text file with SMILES[<TAB>logP<TAB>MR] per line")
    p.add_argument("-c", "--config", help="run config JSON")
    p.add_argument("--out", help="dataset directory (overrides data_dir)")
    p.add_argument("--split-seed", type=int, help="train/test split seed (overrides split_seed)")
    p.add_argument("--skip-bad-lines", action="store_true", help="count malformed lines instead of failing")

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("-c", "--config", help="run config JSON")
    p.add_argument("--data", help="dataset directory holding manifest.json (overrides data_dir)")
    p.add_argument("--kind", choices=("mgvae", "mgcvae"), help="model kind (overrides kind)")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")

    p = sub.add_parser("generate", help="sample molecules from a checkpoint")
    p.add_argument("-m", "--model", required=True, help="checkpoint (.mgcv)")
    p.add_argument("-c", "--config", help="run config JSON (supplies the condition grid)")
    p.add_argument("--logp", type=int, help="logP condition; with --mr generates a single condition")
    p.add_argument("--mr", type=int, help="MR condition; with --logp generates a single condition")
    p.add_argument("-n", type=int, help="molecules per condition (overrides n_per_condition)")
    p.add_argument("--seed", type=int, help="sampling seed (overrides generate_seed)")
    p.add_argument("-o", "--out", default="-",
                   help="output file for a single condition ('-' = stdout) or directory for the grid")

    p = sub.add_parser("evaluate", help="metrics, condition table, PCA and histograms")
    p.add_argument("-c", "--config", help="run config JSON")
    p.add_argument("--generated", required=True, help="directory of generated *.tsv files")
    p.add_argument("--train-cache", required=True, help="dataset directory (or its manifest.json)")
    p.add_argument("--out", help="report directory (default: <output_dir>/report)")

    p = sub.add_parser("props", help="logP and MR for each SMILES in a file (smiles<TAB>logp<TAB>mr rows)")
    p.add_argument("smiles_file", help="one SMILES per line ('-' = stdin)")
    p.add_argument("-o", "--out", default="-", help="output TSV ('-' = stdout)")
    return parser


# -- subcommands --------------------------------------------------------------------


def _open_out(path: str):
    return nullcontext(sys.stdout) if path == "-" else open(path, "w", encoding="utf-8", newline="")


def cmd_prepare(args, cfg: RunConfig) -> int:
    out = Path(args.out) if args.out else cfg.path(cfg.data_dir)
    icfg = IngestConfig(schema=Schema(**cfg.schema),
                        split_seed=args.split_seed if args.split_seed is not None else cfg.split_seed,
                        skip_bad_lines=args.skip_bad_lines or cfg.skip_bad_lines)
    manifest = ingest(args.input, out, icfg)
    c = manifest.counts
    print(f"accepted {c['accepted']} of {c['total']}; train {len(manifest.train_indices)}, "
          f"test {len(manifest.test_indices)}; rejected {c['rejected']}")
    return EXIT_OK


def _load_manifest(where: str | Path) -> DatasetManifest:
    p = Path(where)
    return DatasetManifest.load(p / "manifest.json" if p.is_dir() else p)


def cmd_train(args, cfg: RunConfig) -> int:
    kind = args.kind or cfg.kind
    mcfg = cfg.model_config(kind, epochs=args.epochs, seed=args.seed)
    manifest = _load_manifest(args.data if args.data else cfg.path(cfg.data_dir))
    out = Path(args.out) if args.out else cfg.path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def report(row):
        log.info("epoch %d recon %.4f kl %.4f total %.4f", row.epoch, row.recon, row.kl, row.total)

    result = train(mcfg, manifest, log_path=out / f"{kind}_loss.csv", checkpoint_path=out / f"{kind}.mgcv",
                   on_epoch=report)
    last = result.history[-1] if result.history else None
    print(f"wrote {out / (kind + '.mgcv')}" + (f"; final total loss {last.total:.4f}" if last else ""))
    return EXIT_OK


def write_generated(path_or_dash: str, model: Model, cond: ConditionVector | None, n: int, seed: int) -> None:
    graphs = sample(model, cond, n, seed)
    with _open_out(path_or_dash) as fh:
        for g in graphs:
            lp, mr = properties(g)
            c1 = "NA" if cond is None else str(cond.logp_bin)
            c2 = "NA" if cond is None else str(cond.mr_bin)
            fh.write(f"{write_smiles(g)}\t{lp:.6f}\t{mr:.6f}\t{c1}\t{c2}\n")


def cmd_generate(args, cfg: RunConfig) -> int:
    model = load_checkpoint(args.model)
    n = args.n if args.n is not None else cfg.n_per_condition
    seed = args.seed if args.seed is not None else cfg.generate_seed
    if n <= 0:
        raise UsageError("-n must be positive")
    single = args.logp is not None or args.mr is not None
    if single and (args.logp is None or args.mr is None):
        raise UsageError("--logp and --mr must be given together")
    if not model.config.conditional:
        if single:
            log.warning("unconditional model: ignoring --logp/--mr")
        out = args.out
        if out != "-" and Path(out).is_dir():
            out = str(Path(out) / "mgvae.tsv")
        write_generated(out, model, None, n, seed)
        return EXIT_OK
    if single:
        try:
            cond = ConditionVector(args.logp, args.mr)
        except InvalidProperty as exc:
            raise UsageError(str(exc)) from None
        write_generated(args.out, model, cond, n, seed)
        return EXIT_OK
    if args.out == "-":
        raise UsageError("grid generation needs -o DIRECTORY")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for c1, c2 in cfg.grid:
        write_generated(str(out / f"mgcvae_logp{c1}_mr{c2}.tsv"), model, ConditionVector(c1, c2), n, seed)
    return EXIT_OK


def read_generated(path: Path) -> list[tuple[str, float, float, str, str]]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 columns")
        try:
            rows.append((cols[0], float(cols[1]), float(cols[2]), cols[3], cols[4]))
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric property") from None
    return rows


def _graph_or_none(smi: str):
    try:
        g = parse_smiles(smi)
    except SmilesError:
        return None
    return g if validate(g).valid else None


def _subsample(items: list, k: int) -> list:
    if len(items) <= k:
        return items
    idx = np.linspace(0, len(items) - 1, k).round().astype(int)
    return [items[i] for i in idx]


def cmd_evaluate(args, cfg: RunConfig) -> int:
    manifest = _load_manifest(args.train_cache)
    cache = manifest.open_cache()
    training = {cache.smiles[i] for i in manifest.train_indices}
    files = sorted(Path(args.generated).glob("*.tsv"))
    if not files:
        raise DataError(f"no generated *.tsv files in {args.generated}")
    baseline: list = []
    conditioned: dict[tuple[int, int], list] = {}
    for f in files:
        for smi, lp, mr, c1, c2 in read_generated(f):
            if c1 == "NA":
                baseline.append((smi, lp, mr))
            else:
                conditioned.setdefault((int(c1), int(c2)), []).append((smi, lp, mr))

    results = {}
    if baseline:
        results["mgvae"] = metrics([_graph_or_none(s) for s, _, _ in baseline], training)
    pooled = [row for key in sorted(conditioned) for row in conditioned[key]]
    if pooled:
        results["mgcvae"] = metrics([_graph_or_none(s) for s, _, _ in pooled], training)

    if conditioned and baseline:
        table = condition_table({k: [(lp, mr) for _, lp, mr in v] for k, v in conditioned.items()},
                                [(lp, mr) for _, lp, mr in baseline])
    else:
        table = ConditionTable()

    dataset_rows = [(cache.smiles[i], float(cache.logp[i]), float(cache.mr[i])) for i in manifest.train_indices]
    sources = {"dataset": dataset_rows}
    if baseline:
        sources["mgvae"] = baseline
    if pooled:
        sources["mgcvae"] = pooled
    hist = {name: [(lp, mr) for _, lp, mr in rows] for name, rows in sources.items()}

    fps, labels = [], []
    for name, rows in sources.items():
        for smi, _, _ in _subsample(rows, cfg.pca_per_source):
            g = _graph_or_none(smi)
            if g is not None:
                fps.append(morgan_fp(g).bits)
                labels.append(name)
    projection = (pca2(np.array(fps, dtype=float)), labels) if len(fps) >= 3 else None

    out = Path(args.out) if args.out else cfg.path(cfg.output_dir) / "report"
    for path in emit_report(results, table, projection, hist, out):
        print(path)
    return EXIT_OK


def cmd_props(args, cfg: RunConfig) -> int:
    text = sys.stdin.read() if args.smiles_file == "-" else Path(args.smiles_file).read_text(encoding="utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        smi = line.split("\t")[0].strip()
        if not smi or smi.startswith("#"):
            continue
        try:
            g = parse_smiles(smi)
        except SmilesError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        report = validate(g, max(g.n_atoms, 1))
        if not report.valid:
            raise DataError(f"line {lineno}: invalid molecule ({report.violations[0].message})")
        lp, mr = properties(g)
        rows.append(f"{smi}\t{lp:.6f}\t{mr:.6f}\n")
    with _open_out(args.out) as fh:
        fh.writelines(rows)
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "props": cmd_props}


def _thread_limit():
    raw = os.environ.get("MGCVAE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MGCVAE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("MGCVAE_THREADS must be >= 0")
    if n == 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(getattr(args, "config", None))
        with _thread_limit():
            return COMMANDS[args.command](args, cfg)
    except (UsageError, ConditionError) as exc:
        print(f"mgcvae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteGradient, FloatingPointError) as exc:
        print(f"mgcvae: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TableError, MGCVAEError, OSError) as exc:
        print(f"mgcvae: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
