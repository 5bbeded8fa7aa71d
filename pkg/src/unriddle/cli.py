"""Command-line interface: ``unriddle solve | eval | inspect``.

Exit codes: 0 success, 1 fatal (bad inputs or nothing solved), 2 partial
(some riddles failed; see the log and the manifest).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

from . import __version__
from .errors import UnriddleError
from .evaluation import dataset_accuracy, score_riddle, write_report
from .kgraph import KnowledgeStore
from .pipeline import (STAGES, VARIANTS, RiddleTrace, bur_scores, ingest_riddle, read_answers,
                       solve_riddle, write_answers)
from .rules import ThetaConfig

log = logging.getLogger("unriddle")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
INSPECT_STAGES = ("reweight", "retrieve", "stage1", "stage2")
INSPECT_ROWS = 20
KB_FILES = {"cn": "cn.txt", "w2v": "w2v.txt", "assertions": "assertions.tsv",
            "concreteness": "concreteness.tsv", "centrality": "centrality.tsv"}


class UsageError(Exception):
    pass


def _toy_dir() -> Path:
    return Path(str(resources.files("unriddle") / "data" / "toy"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def kb_paths(args) -> dict:
    """Resolve knowledge-base file paths from ``--kb`` and per-file overrides."""
    base = None
    if args.kb:
        base = _toy_dir() if args.kb == "toy" else Path(args.kb)
        if not base.is_dir():
            raise UsageError(f"--kb {args.kb}: not a directory")
    paths = {}
    for key, fname in KB_FILES.items():
        override = getattr(args, key)
        if override:
            paths[key] = Path(override)
        elif base is not None and (base / fname).exists():
            paths[key] = base / fname
    for key in ("cn", "w2v"):
        if key not in paths:
            raise UsageError(f"no {key} embedding file (use --kb or --{key})")
    for key, p in paths.items():
        if not p.is_file():
            raise UsageError(f"{key} file {p} does not exist")
    return paths


def riddle_files(args) -> list[Path]:
    src = args.riddles
    if src is None:
        if args.kb is None:
            raise UsageError("no --riddles given")
        src = (_toy_dir() if args.kb == "toy" else Path(args.kb)) / "riddles"
    src = Path(src)
    if src.is_dir():
        files = sorted(src.glob("*.json"))
    elif src.is_file():
        files = [src]
    else:
        raise UsageError(f"riddle path {src} does not exist")
    if not files:
        raise UsageError(f"no riddle files under {src}")
    return files


def theta_from(args) -> ThetaConfig:
    overrides = {}
    for item in args.theta or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--theta expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    try:
        return ThetaConfig().with_overrides(overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def load_store(paths) -> KnowledgeStore:
    return KnowledgeStore.load(paths["cn"], paths["w2v"], paths.get("assertions"),
                               paths.get("concreteness"), paths.get("centrality"))


def _safe_name(rid: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in rid) or "riddle"


# solve

def cmd_solve(args) -> int:
    paths = kb_paths(args)
    files = riddle_files(args)
    theta = theta_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    store = load_store(paths)
    load_time = time.perf_counter() - t0

    def run(path: Path):
        start = time.perf_counter()
        rec = {"file": str(path), "sha256": _sha256(path)}
        try:
            riddle = ingest_riddle(path, store)
            answers = solve_riddle(riddle, store, theta, args.variant, args.stage)
        except (UnriddleError, ValueError, OSError) as exc:
            log.error("%s: %s", path, exc)
            rec.update(status="error", error=str(exc))
            return rec, None, time.perf_counter() - start
        rec.update(id=riddle.id, status="ok", warnings=list(riddle.warnings))
        return rec, (riddle, answers), time.perf_counter() - start

    jobs = max(1, args.jobs)
    if jobs == 1:
        results = [run(p) for p in files]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, files))

    records, timings, used = [], {}, set()
    for rec, solved, seconds in results:
        if solved is not None:
            riddle, answers = solved
            name = _safe_name(riddle.id)
            if name in used:
                log.error("%s: duplicate riddle id %r", rec["file"], riddle.id)
                rec.update(status="error", error=f"duplicate riddle id {riddle.id!r}")
                del rec["warnings"]
            else:
                used.add(name)
                write_answers(out / f"{name}.tsv", answers, store)
                rec["output"] = f"{name}.tsv"
        records.append(rec)
        timings[rec["file"]] = round(seconds, 6)

    manifest = {
        "version": __version__,
        "command": "solve",
        "variant": args.variant,
        "stage": args.stage,
        "theta": theta.as_dict(),
        "knowledge": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in sorted(paths.items())},
        "riddles": records,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    timing = {"load_seconds": round(load_time, 6), "riddle_seconds": timings,
              "total_seconds": round(time.perf_counter() - t0, 6), "jobs": jobs}
    (out / "timings.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    n_ok = sum(r["status"] == "ok" for r in records)
    print(f"solved {n_ok}/{len(records)} riddles -> {out}")
    if n_ok == len(records):
        return EXIT_OK
    return EXIT_PARTIAL if n_ok else EXIT_FATAL


# eval

def cmd_eval(args) -> int:
    paths = kb_paths(args)
    files = riddle_files(args)
    out = Path(args.out)
    answers_dir = Path(args.answers) if args.answers else out
    store = load_store(paths)
    scores, missing = [], 0
    for path in files:
        try:
            riddle = ingest_riddle(path, store)
        except (UnriddleError, ValueError, OSError) as exc:
            log.error("%s: %s", path, exc)
            missing += 1
            continue
        ans_path = answers_dir / f"{_safe_name(riddle.id)}.tsv"
        if not riddle.groundtruth or not ans_path.is_file():
            what = "groundtruth" if not riddle.groundtruth else f"answers {ans_path}"
            log.warning("%s: no %s, excluded", riddle.id, what)
            missing += 1
            continue
        tokens = [tok for tok, _ in read_answers(ans_path)]
        if not tokens:
            log.warning("%s: empty answer file, excluded", riddle.id)
            missing += 1
            continue
        scores.append(score_riddle(tokens, riddle.groundtruth, store, riddle.id))
    excluded = missing + sum(s.excluded for s in scores)
    try:
        accuracy = dataset_accuracy(scores)
    except ValueError:
        log.error("no riddle could be scored")
        return EXIT_FATAL
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.tsv", scores, accuracy)
    from .plotting import score_histogram
    score_histogram(out / "histogram.png", scores, accuracy)
    n_scored = sum(not s.excluded for s in scores)
    print(f"accuracy: {accuracy:.1f} ({n_scored} scored, {excluded} excluded)")
    return EXIT_OK


# inspect

def _block(title, rows):
    lines = [title]
    lines += [f"  {tok}\t{score:.6f}" for tok, score in rows]
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    if args.stage not in INSPECT_STAGES:
        raise UsageError(f"unknown stage {args.stage!r}; expected one of {', '.join(INSPECT_STAGES)}")
    paths = kb_paths(args)
    files = riddle_files(args)
    theta = theta_from(args)
    store = load_store(paths)
    riddle = None
    for path in files:
        candidate = ingest_riddle(path, store)
        if args.riddle_id is None or candidate.id == args.riddle_id:
            riddle = candidate
            break
    if riddle is None:
        raise UsageError(f"riddle {args.riddle_id!r} not found")

    trace = RiddleTrace()
    stage = "All" if args.stage in ("stage1", "stage2") else "RR"
    if args.stage == "reweight":
        stage = "VB"
    solve_riddle(riddle, store, theta, args.variant, stage, trace)
    print(f"riddle {riddle.id}  variant {args.variant}  stage {args.stage}")
    for k, ss in enumerate(trace.reweighted):
        raw = riddle.images[k]
        if args.stage == "reweight":
            rows = [(store.token(c), w) for c, w in ss.seeds]
            extra = ""
            if args.variant == "BUR":
                cs = bur_scores(raw, store).cs
                extra = "  CS " + " ".join(f"{store.token(c)}={v:.3f}" for c, v in zip(raw.concepts, cs))
            print(_block(f"image {k} ({raw.tag}) reweighted seeds{extra}", rows))
        elif args.stage == "retrieve":
            cands = trace.candidates[k]
            rows = [(store.token(t), s) for t, s in zip(cands.targets, cands.scores)][:INSPECT_ROWS]
            print(_block(f"image {k} top targets", rows))
        elif args.stage == "stage1":
            model = trace.stage1_models[k]
            if model is None:
                print(f"image {k}: no candidate targets")
                continue
            p = model.problem
            print(f"image {k}: variables {p.num_vars} (seeds {len(p.evidence)}, targets "
                  f"{len(model.target_vars)}), seed-target terms {model.seed_target_terms}, "
                  f"target-target terms {model.pair_terms}, constraints {len(p.constraints)}")
            top = sorted(trace.stage1_scores[k].items(), key=lambda ts: (-ts[1], ts[0]))
            print(_block("  top Stage I targets", [(store.token(t), s) for t, s in top[:INSPECT_ROWS]]))
    if args.stage == "stage2":
        model = trace.stage2_model
        p = model.problem
        print(f"Stage II: variables {p.num_vars} (seeds {len(p.evidence)}, targets "
              f"{len(model.target_vars)}), seed-target terms {model.seed_target_terms}, "
              f"constraints {len(p.constraints)}")
        top = sorted(trace.stage2_scores.items(), key=lambda ts: (-ts[1], ts[0]))
        print(_block("top answers", [(store.token(t), s) for t, s in top[:INSPECT_ROWS]]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unriddle", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        g = p.add_argument_group("knowledge base")
        g.add_argument("--kb", help="directory with cn.txt, w2v.txt and optional assertions.tsv, "
                                    "concreteness.tsv, centrality.tsv; 'toy' for the bundled example")
        for key, fname in KB_FILES.items():
            g.add_argument(f"--{key}", help=f"override {fname}")
        p.add_argument("--riddles", help="riddle JSON file or directory (default: <kb>/riddles)")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--theta", action="append", metavar="KEY=VALUE",
                       help="override a model parameter (repeatable)")

    s = sub.add_parser("solve", help="answer riddles")
    common(s)
    s.add_argument("--variant", choices=VARIANTS, default="GUR")
    s.add_argument("--stage", choices=STAGES, default="All")
    s.add_argument("--jobs", type=int, default=1, help="riddles solved in parallel")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="score answer files against groundtruths")
    common(e)
    e.add_argument("--answers", help="directory of answer TSVs (default: --out)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="print intermediate results for one riddle")
    common(i, out=False)
    i.add_argument("--riddle-id", help="riddle to inspect (default: the first)")
    i.add_argument("--stage", required=True, help=f"one of {', '.join(INSPECT_STAGES)}")
    i.add_argument("--variant", choices=VARIANTS, default="GUR")
    i.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("unriddle: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_FATAL
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"unriddle: error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (UnriddleError, ValueError, OSError) as exc:
        print(f"unriddle: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
