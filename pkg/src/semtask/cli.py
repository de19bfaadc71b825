"""Command-line interface.

    semtask distances TAXONOMY --out distances.csv
    semtask sample TAXONOMY CATALOG --out testbed.jsonl [--strategy semantic ...]
    semtask stats TESTBED DISTANCES --out-dir stats/
    semtask eval TESTBED EMBEDDINGS --method protonet --out-dir report/
    semtask synth {tiered,df20} --out-dir fixture/

Every output file gets a ``<name>.manifest.json`` sidecar. Exit status is 0 on
success, 2 on invalid input and 3 on degenerate data.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidConfig, InvalidTaxonomy, SemTaskError
from .evalkit import ClassifierSpec, evaluate_testbed, load_embeddings
from .evalkit.embeddings import encode_binary
from .evalkit.report import DEFAULT_WINDOW, TaskResult, quartiles
from .sampler import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_OVERSAMPLE,
    DEFAULT_QUERIES,
    DEFAULT_TASKS,
    SamplerConfig,
    generate_testbed,
    load_catalog,
    load_testbed,
    participation,
)
from .semantics import coarsity, distance_csv, distance_matrix, read_distance_csv
from .taxonomy import dump_taxonomy, load_taxonomy

log = logging.getLogger("semtask")

THREADS_ENV = "SEMTASK_THREADS"
DEFAULT_BIN_WIDTH = 2.0


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects provenance for one command and writes manifests beside outputs."""

    def __init__(self, argv: list[str], command: str):
        self.argv = argv
        self.command = command
        self.started = datetime.now(timezone.utc).isoformat()
        self.inputs: dict[str, str] = {}
        self.config: dict = {}
        self.seed = None
        self.warnings: list[str] = []

    def add_input(self, path: str | Path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = sha256_file(path)
        return path

    def write(self, path: str | Path, content: str | bytes) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content, encoding="utf-8")
        manifest = {
            "command": ["semtask", *self.argv],
            "subcommand": self.command,
            "tool_version": __version__,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "output": {str(path): sha256_file(path)},
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "warnings": self.warnings,
        }
        manifest_path = path.with_name(path.name + ".manifest.json")
        manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def _locate(text: str, node_id: str) -> int | None:
    m = re.search(r'"id"\s*:\s*' + re.escape(json.dumps(node_id)), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def read_taxonomy(path: Path):
    text = path.read_text(encoding="utf-8")
    try:
        return load_taxonomy(text)
    except InvalidTaxonomy as exc:
        culprit = next(
            (getattr(exc, a) for a in ("node", "leaf") if isinstance(getattr(exc, a, None), str)),
            None,
        )
        if culprit is None and getattr(exc, "nodes", None):
            culprit = exc.nodes[0]
        if culprit is None and getattr(exc, "roots", None):
            culprit = exc.roots[0]
        line = _locate(text, culprit) if culprit else None
        where = f"{path}:{line}" if line else str(path)
        raise _with_context(exc, where)


def _with_context(exc: SemTaskError, where: str) -> SemTaskError:
    exc.args = (f"{where}: {exc.args[0] if exc.args else exc}",)
    return exc


def cmd_distances(args, run: Run) -> None:
    g = read_taxonomy(run.add_input(args.taxonomy))
    dm = distance_matrix(g)
    run.config = {"classes": len(dm)}
    run.write(args.out, distance_csv(dm))


def cmd_sample(args, run: Run) -> None:
    g = read_taxonomy(run.add_input(args.taxonomy))
    catalog = load_catalog(run.add_input(args.catalog))
    config = SamplerConfig(
        ways=args.ways,
        shots=args.shots,
        queries_per_class=args.queries,
        num_tasks=args.tasks,
        oversample_factor=args.oversample,
        alpha=args.alpha,
        beta=args.beta,
        strategy=args.strategy,
        seed=args.seed,
    )
    run.config = config.to_dict()
    run.seed = config.seed
    dm = distance_matrix(g)
    testbed = generate_testbed(g, dm, catalog, config)
    run.warnings.extend(testbed.warnings)
    run.write(args.out, testbed.to_jsonl())
    log.info("wrote %d tasks (%d unique of %d candidates)", len(testbed.tasks),
             testbed.unique_candidates, testbed.candidates_drawn)


def histogram(values, bin_width: float) -> list[tuple[float, float, int]]:
    values = np.asarray(values, dtype=np.float64)
    top = int(np.floor(values.max() / bin_width)) + 1
    counts = np.bincount(np.floor(values / bin_width).astype(np.int64), minlength=top)
    return [(k * bin_width, (k + 1) * bin_width, int(n)) for k, n in enumerate(counts)]


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_stats(args, run: Run) -> None:
    testbed = load_testbed(run.add_input(args.testbed))
    dm = read_distance_csv(run.add_input(args.distances))
    if args.bin_width <= 0:
        raise InvalidConfig("--bin-width must be positive")
    run.config = {"bin_width": args.bin_width}
    values = [coarsity(dm, t.class_ids) for t in testbed.tasks]
    out = Path(args.out_dir)

    run.write(out / "coarsity_histogram.csv",
              _csv(histogram(values, args.bin_width), ["bin_start", "bin_end", "tasks"]))

    share = participation(testbed, dm.class_ids)
    counts = np.rint(share * len(testbed.tasks)).astype(int)
    run.write(out / "class_participation.csv",
              _csv(((c, int(k), repr(float(s))) for c, k, s in zip(dm.class_ids, counts, share)),
                   ["class_id", "tasks", "proportion"]))

    by_coarsity = [TaskResult(t.task_id, v, 0.0) for t, v in zip(testbed.tasks, values)]
    rows = [(q["bucket"], q["size"], repr(q["coarsity_min"]), repr(q["coarsity_max"]))
            for q in quartiles(by_coarsity)]
    run.write(out / "coarsity_quartiles.csv", _csv(rows, ["quartile", "tasks", "coarsity_min", "coarsity_max"]))


def cmd_eval(args, run: Run) -> None:
    testbed = load_testbed(run.add_input(args.testbed))
    store = load_embeddings(run.add_input(args.embeddings))
    params = {
        "protonet": {},
        "finetune": {"steps": args.steps, "learning_rate": args.lr},
        "bdcspn": {"temperature": args.temperature, "shift_weight": args.shift_weight},
    }[args.method]
    spec = ClassifierSpec(args.method, params)
    workers = args.threads or int(os.environ.get(THREADS_ENV, "1"))
    run.config = {"method": spec.method, **spec.hyperparameters, "window": args.window, "threads": workers}
    report = evaluate_testbed(store, testbed, spec, window=args.window, workers=workers)
    out = Path(args.out_dir)
    run.write(out / "report.json", report.to_json())
    run.write(out / "tasks.csv", report.tasks_csv())
    run.write(out / "rolling.csv", report.rolling_csv())
    log.info("%s: top-1 %.2f%% +- %.2f", spec.method, 100 * report.mean_top1, 100 * report.ci95_top1)


def cmd_synth(args, run: Run) -> None:
    from . import fixtures

    if args.kind == "tiered":
        g = fixtures.tiered_like_taxonomy(seed=args.seed)
    else:
        g = fixtures.df20_like_taxonomy(num_species=args.classes or 1604, seed=args.seed)
    catalog = fixtures.synthetic_catalog(g, args.per_class)
    store = fixtures.hierarchical_embeddings(
        g, catalog, dim=args.dim, step_scale=args.step_scale, noise_scale=args.noise_scale, seed=args.seed
    )
    run.config = vars(args).copy()
    run.config.pop("func", None)
    run.seed = args.seed
    out = Path(args.out_dir)
    run.write(out / "taxonomy.json", dump_taxonomy(g))
    run.write(out / "catalog.csv", catalog.to_csv())
    run.write(out / "embeddings.emb", encode_binary(store))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semtask", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distances", help="export the pairwise class distance matrix")
    p.add_argument("taxonomy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("sample", help="generate a testbed of few-shot tasks")
    p.add_argument("taxonomy")
    p.add_argument("catalog")
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=("uniform", "semantic"), default="semantic")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--queries", type=int, default=DEFAULT_QUERIES)
    p.add_argument("--tasks", type=int, default=DEFAULT_TASKS)
    p.add_argument("--oversample", type=int, default=DEFAULT_OVERSAMPLE,
                   help="candidates drawn per kept task before de-duplication")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("stats", help="coarsity histogram, class participation, quartiles")
    p.add_argument("testbed")
    p.add_argument("distances")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="evaluate a classifier on a testbed")
    p.add_argument("testbed")
    p.add_argument("embeddings")
    p.add_argument("--method", choices=("protonet", "finetune", "bdcspn"), default="protonet")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--shift-weight", type=float, default=0.5)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--threads", type=int, default=None, help=f"defaults to ${THREADS_ENV} or 1")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic taxonomy, catalog and embeddings")
    p.add_argument("kind", choices=("tiered", "df20"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", type=int, default=None, help="species count (df20 only)")
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--step-scale", type=float, default=0.5)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    run = Run(argv, args.command)
    try:
        args.func(args, run)
    except SemTaskError as exc:
        print(f"semtask {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"semtask {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
