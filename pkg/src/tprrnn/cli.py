"""Command line entry point: ``tprrnn {train,eval,gradcheck,augment,analyze}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, checkpoint, gradcheck, kernels
from . import data_babi as db
from .model import AblationConfig
from .trainer import (DATA_ENV, TrainConfig, TrainingDivergedError, VocabMismatchError,
                      check_vocab, evaluate, resolve_data_dir, train)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5
EXIT_GRADCHECK = 6

log = logging.getLogger("tprrnn")


def _add_task_selection(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--task", type=int, metavar="N", help="single bAbI task 1-20")
    g.add_argument("--all-tasks", action="store_true", help="train on all 20 tasks jointly")
    g.add_argument("--systematic", action="store_true",
                   help="tasks 1,6,7,8,9,11,12,13 plus new-entity augmentation")


def _mode(args) -> str:
    if getattr(args, "all_tasks", False):
        return "all"
    if getattr(args, "systematic", False):
        return "systematic"
    return "single"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tprrnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_task_selection(p)
    p.add_argument("--data", help=f"bAbI en-valid-10k directory (or ${DATA_ENV})")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, help="batch size (preset: 128 single, 32 all)")
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--ablation", default="wmb", help="memory operations: w, wm, wb or wmb")
    p.add_argument("--max-steps", type=int, default=50_000)
    p.add_argument("--eval-every", type=int, default=1000)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--max-seconds", type=float)
    p.add_argument("--hidden", type=int, help="override dim(V_Hidden)")
    p.add_argument("--entity", type=int, help="override dim(V_Entity)")
    p.add_argument("--relation", type=int, help="override dim(V_Relation)")
    p.add_argument("--augment-seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    _add_task_selection(p, required=False)
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("augment", help="write the systematic-generalisation splits")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="clustered similarity of learned representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--rep", default="e1", choices=sorted(analysis.REPS))
    p.add_argument("--data")
    p.add_argument("--split", default="valid", choices=("train", "valid", "test"))
    p.add_argument("--out", required=True)
    return parser


def cmd_train(args) -> int:
    cfg = TrainConfig(
        mode=_mode(args), task=args.task, data_dir=args.data, out_dir=args.out,
        dim_hidden=args.hidden, dim_entity=args.entity, dim_relation=args.relation,
        lr=args.lr, beta1=args.beta1, beta2=args.beta2, batch_size=args.batch,
        max_steps=args.max_steps, eval_every=args.eval_every, patience=args.patience,
        seed=args.seed, ablation=args.ablation, max_seconds=args.max_seconds,
        augment_seed=args.augment_seed)
    AblationConfig.parse(cfg.ablation)
    metrics, _, _ = train(cfg)
    print(metrics.summary())
    if metrics.test_per_task and len(metrics.test_per_task) > 1:
        for task, err in metrics.test_per_task.items():
            print(f"task {task:2d} test_error {err:.2f}")
    if metrics.systematic_grid:
        for (ent, task), acc in metrics.systematic_grid.items():
            print(f"{ent:8s} task {task:2d} accuracy {acc:.2f}")
    return EXIT_OK


def _tasks_for_eval(args, saved: dict) -> tuple[str, tuple[int, ...]]:
    if args.task or args.all_tasks or args.systematic:
        return _mode(args), TrainConfig(mode=_mode(args), task=args.task).tasks()
    t = saved.get("train", {})
    cfg = TrainConfig(mode=t.get("mode", "single"), task=t.get("task"))
    return cfg.mode, cfg.tasks()


def cmd_eval(args) -> int:
    params, vocab, saved = checkpoint.load(args.checkpoint)
    _, tasks = _tasks_for_eval(args, saved)
    data_dir = resolve_data_dir(args.data or saved.get("train", {}).get("data_dir"))
    samples = [s for t in tasks for s in db.load_task(data_dir, t, args.split)]
    check_vocab(samples, vocab, params.config.k)
    ablation = AblationConfig.parse(saved.get("train", {}).get("ablation", "wmb"))
    res = evaluate(params, db.encode_samples(samples, vocab, params.config.k), ablation)
    print(f"{args.split} loss {res.loss:.6f} error {res.error:.2f}%")
    if len(res.per_task) > 1:
        for task, err in res.per_task.items():
            print(f"task {task:2d} error {err:.2f}")
        print(f"failures(>5%) {res.failures}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    print(f"kernel backend: {kernels.BACKEND}")
    ok = True
    for name, err in gradcheck.check_primitives(args.eps, args.seed).items():
        passed = err < gradcheck.PRIMITIVE_TOL
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:24s} max_rel_err {err:.3e}")
    for fused in (True, False):
        err = gradcheck.check_model(args.eps, args.seed, fused=fused)
        passed = err < gradcheck.MODEL_TOL
        ok &= passed
        label = "model (fused step)" if fused else "model (composed step)"
        print(f"{'PASS' if passed else 'FAIL'} {label:24s} max_rel_err {err:.3e}")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_augment(args) -> int:
    data_dir = resolve_data_dir(args.data)
    spec = db.AugmentSpec(seed=args.seed)
    train_by_task = {t: db.load_task(data_dir, t, "train") for t in spec.task_pool}
    test_by_task = {t: db.load_task(data_dir, t, "test") for t in spec.task_pool}
    extra_train, extra_test = db.augment_systematic(train_by_task, spec, test_by_task)
    out = Path(args.out)
    db.write_babi_file(extra_train, out / "systematic_train.txt")
    cells: dict = {}
    for s in extra_test:
        cells.setdefault((s.entity, s.task_id), []).append(s)
    for (ent, task), samples in cells.items():
        db.write_babi_file(samples, out / f"systematic_test_{ent}_qa{task}.txt")
    subsets = db.draw_train_subsets(spec)
    (out / "train_subsets.json").write_text(json.dumps(subsets, indent=2) + "\n")
    print(f"extra_train {len(extra_train)} samples, extra_test {len(extra_test)} samples "
          f"in {len(cells)} cells -> {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    params, vocab, saved = checkpoint.load(args.checkpoint)
    data_dir = resolve_data_dir(args.data or saved.get("train", {}).get("data_dir"))
    samples = db.load_task(data_dir, args.task, args.split)
    check_vocab(samples, vocab, params.config.k)
    reps = analysis.collect_reps(params, vocab, samples, args.rep)
    sim = analysis.cosine_matrix(reps)
    dendro, ordered = analysis.hcluster(sim)
    paths = analysis.export(ordered, dendro, reps.sentences, args.out, stem=args.rep)
    n, contrast = analysis.best_cut(sim, dendro)
    print(f"{args.rep}: {len(reps.sentences)} unique sentences, best cut {n} clusters, "
          f"within-between similarity {contrast:.3f}")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "augment": cmd_augment, "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (db.DatasetMissingError, db.BabiFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (checkpoint.CheckpointFormatError, VocabMismatchError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
