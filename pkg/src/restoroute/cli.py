"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration, 2 file I/O, 3 malformed
data, 4 restoration finished with a warning (route exhausted or iteration cap).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .context import ClipContext
from .degrade import DatasetManifest, generate_dataset
from .errors import ClipIOError, ConfigurationError, RestorationError
from .identify import HeuristicIdentifier, OracleIdentifier, ThresholdTable, default_thresholds
from .media import MANIFEST_NAME, load_clip, save_clip
from .quality import RatingMatrix, assess_nr, compute_mos, conform, psnr, reject_outliers, ssim, MIN_SCREEN_SUBJECTS
from .router import STRATEGIES, KnowledgeBase, simulate_strategy, t_full, t_ours, t_tree
from .toolbox import default_toolbox, load_toolbox

log = logging.getLogger("restoroute")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_WARNING = 0, 1, 2, 3, 4
BENCH_STRATEGIES = ("full", "tree", "ours")

# flags each subcommand cannot do without, checked after merging --config
REQUIRED = {
    "synth": ("gt", "out"),
    "identify": ("clip",),
    "restore": ("clip", "out"),
    "bench-routing": ("out",),
    "eval": ("test", "ref", "out"),
    "mos": ("ratings", "out"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def provenance(seed) -> str:
    return f"restoroute-{__version__}, seed={seed}"


def write_csv(path, header, rows, seed) -> Path:
    buf = io.StringIO()
    buf.write(f"# {provenance(seed)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _clip_dirs(root: Path) -> dict:
    """A single clip directory, or every clip directory directly beneath ``root``."""
    if (root / MANIFEST_NAME).is_file():
        return {root.name: root}
    if not root.is_dir():
        raise ClipIOError(f"{root} is not a directory")
    found = {p.name: p for p in sorted(root.iterdir()) if (p / MANIFEST_NAME).is_file()}
    if not found:
        raise ClipIOError(f"no clips under {root}")
    return found


def _load_thresholds(args) -> ThresholdTable:
    return ThresholdTable.load(args.thresholds) if args.thresholds else default_thresholds()


def _context(args, clip, manifest: DatasetManifest | None, with_reference: bool):
    """Nominal geometry from the dataset manifest, explicit flags, or the clip itself."""
    label = gt_entry = None
    if manifest is not None:
        try:
            label = manifest.label_for(clip.id)
            gt_entry = manifest.gt_entry(label.gt_clip_id)
        except KeyError:
            try:
                gt_entry = manifest.gt_entry(clip.id)
            except KeyError:
                raise ConfigurationError(f"clip {clip.id!r} is not listed in the manifest") from None
    reference = None
    if with_reference:
        if args.reference:
            reference = load_clip(args.reference)
        elif gt_entry is not None:
            reference = manifest.load_clip(gt_entry["id"])
        else:
            raise ConfigurationError("psnr assessment needs --reference or --manifest")
    if gt_entry is not None:
        return ClipContext.from_gt_entry(gt_entry, reference), label
    if args.nominal:
        try:
            w, h = (int(v) for v in args.nominal.lower().split("x"))
        except ValueError:
            raise UsageError(f"--nominal must look like 320x180, got {args.nominal!r}") from None
        return ClipContext(w, h, args.nominal_fps or clip.fps, None, reference), label
    if reference is not None:
        return ClipContext.from_clip(reference, with_reference=True), label
    return ClipContext(nominal_fps=args.nominal_fps), label


def _identifier(args, label, thresholds):
    if args.identifier == "oracle":
        if label is None:
            raise ConfigurationError("the oracle identifier needs --manifest listing this clip")
        return OracleIdentifier(label)
    if args.identifier == "external":
        from .adapters import external_identifier_with_fallback

        return external_identifier_with_fallback(args.service_url)
    return HeuristicIdentifier(thresholds)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    recipe = None
    if args.recipe:
        text = Path(args.recipe).read_text() if Path(args.recipe).is_file() else args.recipe
        try:
            recipe = json.loads(text)
        except ValueError as exc:
            raise ValueError(f"bad recipe JSON: {exc}") from exc
    gts = [load_clip(p) for p in _clip_dirs(Path(args.gt)).values()]
    manifest = generate_dataset(gts, args.out, recipe, args.seed)
    print(json.dumps({"dataset": str(Path(args.out) / DatasetManifest.FILENAME), "clips": len(manifest.clips)}))
    return EXIT_OK


def cmd_identify(args) -> int:
    clip = load_clip(args.clip)
    manifest = DatasetManifest.load(args.manifest) if args.manifest else None
    context, label = _context(args, clip, manifest, with_reference=False)
    profile = _identifier(args, label, _load_thresholds(args)).identify(clip, context)
    print(json.dumps({"clip": clip.id, **profile.to_json()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_restore(args) -> int:
    from .orchestrator import RestoreConfig, restore

    clip = load_clip(args.clip)
    manifest = DatasetManifest.load(args.manifest) if args.manifest else None
    context, label = _context(args, clip, manifest, with_reference=args.assessor == "psnr")
    thresholds = _load_thresholds(args)
    toolbox = load_toolbox(args.toolbox) if args.toolbox else default_toolbox()
    kb = KnowledgeBase.load(args.kb) if args.kb else KnowledgeBase()
    config = RestoreConfig(strategy=args.strategy, assessor=args.assessor, seed=args.seed,
                           threads=args.threads, max_iterations=args.max_iterations)
    run = restore(clip, toolbox, _identifier(args, label, thresholds), context, config, kb)
    save_clip(run.output, args.out)
    if args.trace:
        run.write_trace(args.trace)
    if args.kb:
        kb.save(args.kb)
    print(json.dumps({"clip": clip.id, "status": run.status, "iterations": run.iterations,
                      "invocations": run.invocations, "path": run.path,
                      "final_active": sorted(k.value for k in run.final_active)}, sort_keys=True))
    return EXIT_OK if run.status == "done" else EXIT_WARNING


def cmd_bench_routing(args) -> int:
    if not 1 <= args.n_min <= args.n_max <= 6:
        raise UsageError("need 1 <= n-min <= n-max <= 6")
    rows = []
    for n in range(args.n_min, args.n_max + 1):
        formulas = (t_full(n), t_tree(n), t_ours(n, args.p))
        for strategy in BENCH_STRATEGIES:
            st = simulate_strategy(n, strategy, args.p, args.trials, args.seed + n)
            rows.append([n, strategy, args.p, args.trials, f"{st.mean:.4f}", st.min, st.max, f"{st.runtime:.4f}",
                         formulas[0], formulas[1], f"{formulas[2]:.4f}"])
    header = ["n", "strategy", "p", "trials", "mean_invocations", "min_invocations", "max_invocations",
              "runtime", "t_full", "t_tree", "t_ours"]
    write_csv(args.out, header, rows, args.seed)
    return EXIT_OK


def cmd_eval(args) -> int:
    tests, refs = _clip_dirs(Path(args.test)), _clip_dirs(Path(args.ref))
    if len(tests) == 1 and len(refs) == 1:
        pairs = [(next(iter(tests)), next(iter(tests.values())), next(iter(refs.values())))]
    else:
        missing = sorted(set(tests) - set(refs))
        if missing:
            raise ClipIOError(f"no reference clip for {', '.join(missing)}")
        pairs = [(name, tests[name], refs[name]) for name in tests]
    thresholds = _load_thresholds(args)
    rows = []
    for name, tpath, rpath in pairs:
        test, ref = load_clip(tpath), load_clip(rpath)
        ctx = ClipContext.from_clip(ref)
        fitted = conform(test, ref)
        rows.append([name, _fmt(psnr(fitted, ref)), _fmt(ssim(fitted, ref)), _fmt(assess_nr(test, ctx, thresholds))])
    write_csv(args.out, ["clip", "psnr_db", "ssim", "nr_score"], rows, args.seed)
    return EXIT_OK


def cmd_mos(args) -> int:
    matrix = RatingMatrix.read_csv(args.ratings)
    if not args.no_screen and len(matrix.subjects) >= MIN_SCREEN_SUBJECTS:
        matrix = reject_outliers(matrix)
    result = compute_mos(matrix)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_csv(provenance(args.seed)))
    for video in result.flagged:
        log.warning("video %s has fewer than 3 raters", video)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "identify": cmd_identify,
    "restore": cmd_restore,
    "bench-routing": cmd_bench_routing,
    "eval": cmd_eval,
    "mos": cmd_mos,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file supplying any flag; explicit flags win")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    common.add_argument("--log-level", default="WARNING")

    parser = _Parser(prog="restoroute", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"restoroute {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a labelled degraded dataset")
    p.add_argument("--gt", help="ground-truth clip directory, or a directory of them")
    p.add_argument("--out")
    p.add_argument("--recipe", help='JSON (inline or file) mapping arity to clips per GT, e.g. {"1": 8, "2": 4}')

    def clip_inputs(p):
        p.add_argument("--clip")
        p.add_argument("--identifier", choices=("oracle", "heuristic", "external"), default="heuristic")
        p.add_argument("--manifest", help="dataset.json giving labels and nominal geometry")
        p.add_argument("--nominal", help="nominal WxH when no manifest is given")
        p.add_argument("--nominal-fps", type=float)
        p.add_argument("--thresholds", help="threshold table JSON (default: shipped table)")
        p.add_argument("--service-url", help="external adapter base URL (else RESTOROUTE_SERVICE_URL)")
        p.add_argument("--reference", help="ground-truth clip for psnr assessment")

    p = sub.add_parser("identify", parents=[common], help="print a degradation profile")
    clip_inputs(p)

    p = sub.add_parser("restore", parents=[common], help="run the closed restoration loop")
    clip_inputs(p)
    p.add_argument("--out")
    p.add_argument("--strategy", choices=STRATEGIES, default="ours")
    p.add_argument("--assessor", choices=("nr", "psnr"), default="nr")
    p.add_argument("--kb", help="experience.json to read and update")
    p.add_argument("--trace", help="JSON-lines trace output")
    p.add_argument("--toolbox", help="toolbox config JSON")
    p.add_argument("--max-iterations", type=int)

    p = sub.add_parser("bench-routing", parents=[common], help="routing invocation benchmark table")
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--out")

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM/no-reference table")
    p.add_argument("--test")
    p.add_argument("--ref")
    p.add_argument("--out")
    p.add_argument("--thresholds")

    p = sub.add_parser("mos", parents=[common], help="outlier screening and MOS")
    p.add_argument("--ratings")
    p.add_argument("--out")
    p.add_argument("--no-screen", action="store_true", help="skip subject screening")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ClipIOError(f"cannot read config {args.config}: {exc}") from exc
        except ValueError as exc:
            raise ConfigurationError(f"bad config JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise ConfigurationError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = {k.replace("-", "_") for k in config} - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    missing = [f"--{name}" for name in REQUIRED[args.command] if getattr(args, name, None) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing {', '.join(missing)}")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"restoroute: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"restoroute: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"restoroute: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"restoroute: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"restoroute: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RestorationError, ValueError, KeyError) as exc:
        print(f"restoroute: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
