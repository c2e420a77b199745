"""Command-line entry point: ``tttlab <subcommand> [options]``.

Global options (accepted before or after the subcommand): ``--seed``,
``--data-dir`` (default ``$TTTLAB_DATA_DIR``, else ``./data``),
``--checkpoint`` and ``--out-csv``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import theory
from .core import SgdConfig
from .corruptions import KINDS, CorruptionSpec, corrupt_dataset, interpolated_params
from .errors import TTTLabError
from .harness import reports
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.data import Dataset, default_data_dir, gen_synthetic, load_cifar10, read_cifar_file, write_cifar_file
from .harness.evaluate import MODES, correlate, error_rate, evaluate, sliding_window_accuracy
from .harness.experiments import DeskSetup, correlation_study, default_settings, gradual_dataset
from .harness.train import TrainConfig, train_joint
from .ttt import EXTRACTOR_AND_SSL, EXTRACTOR_ONLY, TTTConfig
from .ymodel import PRESETS, build_model

log = logging.getLogger("tttlab")

SYNTH_TRAIN_FILE = "synthetic_train.bin"
SYNTH_TEST_FILE = "synthetic_test.bin"
EVAL_MODES = {"baseline": "baseline", "joint": "joint_fixed", "ttt": "ttt", "ttt-online": "ttt_online"}
GLOBALS = {"seed": 0, "data_dir": None, "checkpoint": "model.ckpt", "out_csv": None}


def _global_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flag appear on both the root and the subcommand parser
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (default 0)")
    p.add_argument("--data-dir", default=argparse.SUPPRESS, help="data directory (overrides $TTTLAB_DATA_DIR)")
    p.add_argument("--checkpoint", default=argparse.SUPPRESS, help="checkpoint path (default model.ckpt)")
    p.add_argument("--out-csv", default=argparse.SUPPRESS, help="write results as CSV here")
    return p


def _dataset_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=("synthetic", "cifar10"), default="synthetic")
    p.add_argument("--n-train", type=int, default=DeskSetup.n_train)
    p.add_argument("--n-test", type=int, default=DeskSetup.n_test)


def _ttt_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=None, help="TTT steps (default 10 standard, 1 online)")
    p.add_argument("--lr", type=float, default=0.001, help="TTT learning rate")
    p.add_argument("--copies", type=int, default=4, help="augmented copies per test batch (x4 rotations)")
    p.add_argument("--scope", choices=(EXTRACTOR_ONLY, EXTRACTOR_AND_SSL), default=EXTRACTOR_ONLY)
    p.add_argument("--threshold", type=float, default=None, help="skip TTT when the rotation loss is below this")


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    root = argparse.ArgumentParser(prog="tttlab", description="Test-time training lab.", parents=[common])
    root.add_argument("-v", "--verbose", action="store_true")
    sub = root.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset as CIFAR-format files")
    g.add_argument("--n-train", type=int, default=DeskSetup.n_train)
    g.add_argument("--n-test", type=int, default=DeskSetup.n_test)

    t = sub.add_parser("train", parents=[common], help="joint (or main-task-only) training")
    _dataset_options(t)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--arch", choices=sorted(PRESETS), default="desk")
    t.add_argument("--main-only", action="store_true", help="object recognition only (the baseline model)")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    _dataset_options(e)
    e.add_argument("--mode", choices=sorted(EVAL_MODES), required=True)
    e.add_argument("--kind", choices=KINDS, default=None, help="corrupt the test set with this kind")
    e.add_argument("--level", type=int, default=5)
    e.add_argument("--test-file", default=None, help="CIFAR-format file to evaluate instead")
    e.add_argument("--limit", type=int, default=None, help="evaluate only the first N samples")
    e.add_argument("--window", type=int, default=100, help="sliding-window size for the accuracy curve")
    _ttt_options(e)

    c = sub.add_parser("corrupt", parents=[common], help="write a corrupted copy of the test set")
    _dataset_options(c)
    c.add_argument("--kind", choices=KINDS, required=True)
    lv = c.add_mutually_exclusive_group(required=True)
    lv.add_argument("--level", type=int)
    lv.add_argument("--gradual", type=int, metavar="N", help="stream of N samples from level 1 to 5")
    c.add_argument("--output", default=None, help="output file (default <data-dir>/<kind>_<level>.bin)")

    th = sub.add_parser("theory", parents=[common], help="convex-case checks and the correlation study")
    th.add_argument("check", choices=("toy", "lemma1", "lemma2", "theorem1", "correlate"))
    th.add_argument("--trials", type=int, default=None)
    th.add_argument("--eps", type=float, default=0.1)
    _dataset_options(th)
    th.add_argument("--limit", type=int, default=300, help="test samples per corruption setting")
    th.add_argument("--levels", type=int, nargs="+", default=[3, 4, 5])
    _ttt_options(th)
    return root


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    for k, v in GLOBALS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    args.data_dir = default_data_dir(args.data_dir)
    return args


def _load_data(args) -> tuple:
    if args.dataset == "cifar10":
        return load_cifar10(args.data_dir)
    tr, te = args.data_dir / SYNTH_TRAIN_FILE, args.data_dir / SYNTH_TEST_FILE
    setup = DeskSetup()
    if tr.exists() and te.exists():
        names = gen_synthetic(0, 10).class_names
        return (Dataset(*read_cifar_file(tr, None), names, "synthetic"),
                Dataset(*read_cifar_file(te, None), names, "synthetic"))
    return gen_synthetic(setup.train_seed, args.n_train), gen_synthetic(setup.test_seed, args.n_test)


def _ttt_config(args) -> TTTConfig:
    return TTTConfig(steps=args.steps, learning_rate=args.lr, copies=args.copies, update_scope=args.scope,
                     threshold=args.threshold)


def cmd_gen_data(args) -> int:
    setup = DeskSetup()
    for name, seed, n in ((SYNTH_TRAIN_FILE, setup.train_seed, args.n_train),
                          (SYNTH_TEST_FILE, setup.test_seed, args.n_test)):
        ds = gen_synthetic(seed, n)
        write_cifar_file(args.data_dir / name, ds.images, ds.labels)
        print(f"wrote {n} images to {args.data_dir / name}")
    return 0


def cmd_train(args) -> int:
    train, _ = _load_data(args)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      sgd=SgdConfig(args.lr, momentum=0.9, weight_decay=5e-4), main_only=args.main_only)
    model = build_model(PRESETS[args.arch], args.seed)
    model, history = train_joint(model, train, cfg, args.seed)
    meta = {"epochs": args.epochs, "final_lr": cfg.final_lr, "seed": args.seed, "main_only": args.main_only,
            "dataset": args.dataset}
    save_checkpoint(args.checkpoint, model, meta)
    if args.out_csv:
        reports.write_rows(args.out_csv, reports.HISTORY_COLUMNS, history)
    last = history[-1] if history else {}
    print(f"saved {args.checkpoint}  params={model.num_parameters()}  final train acc={last.get('train_acc', float('nan')):.4f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    if args.test_file:
        test = Dataset(*read_cifar_file(args.test_file, None), gen_synthetic(0, 10).class_names, args.test_file)
    else:
        test = _load_data(args)[1]
    if args.limit:
        test = test.subset(np.arange(min(args.limit, len(test))))
    if args.kind:
        test = test.with_images(corrupt_dataset(test.images, CorruptionSpec(args.kind, args.level, seed=args.seed)))
    mode = EVAL_MODES[args.mode]
    records = evaluate(model, test, mode, _ttt_config(args), args.seed)
    if args.out_csv:
        reports.write_records(args.out_csv, records)
    curve = sliding_window_accuracy(records, args.window)
    print(f"mode={mode} n={len(records)} error={error_rate(records):.4f} "
          f"window_acc first={curve[0]:.4f} last={curve[-1]:.4f}")
    return 0


def cmd_corrupt(args) -> int:
    test = _load_data(args)[1]
    if args.gradual:
        data = gradual_dataset(test, args.kind, args.gradual, args.seed)
        tag = f"gradual{args.gradual}"
        params = interpolated_params(args.kind, args.gradual)
        detail = f"params {params[0]:g} -> {params[-1]:g}"
    else:
        spec = CorruptionSpec(args.kind, args.level, seed=args.seed)
        data = test.with_images(corrupt_dataset(test.images, spec))
        tag, detail = f"{args.level}", f"param {spec.value:g}"
    out = Path(args.output) if args.output else args.data_dir / f"{args.kind}_{tag}.bin"
    write_cifar_file(out, data.images, data.labels)
    print(f"wrote {len(data)} images to {out} ({args.kind}, {detail})")
    return 0


def _theory_toy() -> int:
    inst = theory.ToyInstance(np.zeros((2, 2)), [1.0, 0.0], [1.0, 0.0], [1.0, 0.0], 1.0, 1.0)
    es = theory.eta_star(inst)
    print(f"l_m, l_s = {theory.toy_losses(inst)}")
    print(f"eta* = {es:g}")
    print(f"l_m after one step at eta*: {theory.toy_losses(theory.toy_step(inst, es))[0]:g}")
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        r = theory.random_toy(rng)
        try:
            lm = theory.toy_losses(theory.toy_step(r, theory.eta_star(r)))[0]
        except TTTLabError:
            continue
        worst = max(worst, lm / max(1.0, theory.toy_losses(r)[0]))
    print(f"random instances: worst relative l_m after eta* step = {worst:.3g}")
    return 0


def _theory_lemma(args, which: str) -> int:
    rng = np.random.default_rng(args.seed)
    trials = args.trials or (10_000 if which == "lemma2" else 1_000)
    ok = checked = drawn = 0
    while checked < trials and drawn < 100 * trials:
        drawn += 1
        inst = theory.random_toy(rng)
        res = theory.check_sign_lemma(inst) if which == "lemma2" else theory.check_lemma1(inst, args.eps)
        if res is theory.INCONCLUSIVE:
            continue
        checked += 1
        ok += bool(res)
    print(f"{which}: {ok}/{checked} hold ({drawn - checked} inconclusive draws)")
    return 0 if ok == checked else 1


def _theory_correlate(args) -> int:
    model = load_checkpoint(args.checkpoint).model()
    test = _load_data(args)[1]
    test = test.subset(np.arange(min(args.limit, len(test))))
    rows = correlation_study(model, test, default_settings(args.levels), _ttt_config(args), args.seed)
    if args.out_csv:
        reports.write_rows(args.out_csv, reports.POINT_COLUMNS, rows)
    for r in rows:
        print(f"{r['kind']:>15} {r['level']}  inner={r['inner_product']:.4g}  gain={r['improvement']:+.4f}")
    fit = correlate([(r["inner_product"], r["improvement"]) for r in rows])
    print(f"slope={fit.slope:.4g} intercept={fit.intercept:.4g} r={fit.r:.4f}")
    return 0


def cmd_theory(args) -> int:
    if args.check == "toy":
        return _theory_toy()
    if args.check in ("lemma1", "lemma2"):
        return _theory_lemma(args, args.check)
    if args.check == "theorem1":
        report = theory.certify_theorem1(trials=args.trials or 10_000, eps=args.eps, seed=args.seed)
        if args.out_csv:
            report.write_csv(args.out_csv)
        print(report.summary())
        return 0 if report.certified else 1
    return _theory_correlate(args)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "corrupt": cmd_corrupt,
            "theory": cmd_theory}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _resolve(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except TTTLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
