"""Command-line interface: train / eval / inspect-weights / occlude / sweep /
gradcheck / synth-data.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure (non-finite loss or a finite-difference check above tolerance).
"""

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _configure_threads(argv):
    """Apply --threads / LNLATTEN_THREADS before the numeric stack loads."""
    n = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif a.startswith("--threads="):
            n = a.split("=", 1)[1]
    n = n or os.environ.get("LNLATTEN_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _build_parser():
    p = argparse.ArgumentParser(prog="lnlatten",
                                description="Local/non-local joint attention classifier")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--data", help="dataset tree (class subdirs of rasters)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--variant",
                        choices=["full", "model_s", "model_local", "model_nonlocal"])
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--patches", type=int, help="number of local regions M")
        sp.add_argument("--overlap-pixels", type=int)
        sp.add_argument("--profile", choices=["paper", "tiny"])
        sp.add_argument("--threads", type=int)

    sp = sub.add_parser("train", help="train a model, write checkpoint + record CSV")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--test-data", help="held-out tree for per-epoch accuracy")

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("inspect-weights",
                        help="per-image attention heatmaps and gate CSV")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--limit", type=int, default=8)

    sp = sub.add_parser("occlude", help="before/after gates with one patch zeroed")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--patch-index", type=int, required=True)
    sp.add_argument("--image-index", type=int, default=0)

    sp = sub.add_parser("sweep", help="train across a parameter grid")
    common(sp)
    sp.add_argument("--parameter", required=True,
                    choices=["alpha", "m", "overlap_pixels"])
    sp.add_argument("--values", required=True,
                    help="comma-separated values, e.g. 0,0.3,0.7,1")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--per-class", type=int, default=60)

    sp = sub.add_parser("gradcheck", help="finite-difference suite over every op")
    common(sp)

    sp = sub.add_parser("synth-data", help="materialize a synthetic dataset tree")
    common(sp)
    sp.add_argument("--classes", type=int, default=5)
    sp.add_argument("--per-class", type=int, default=60)
    return p


def _overrides(args):
    keys = {"seed": args.seed, "variant": args.variant, "alpha": args.alpha,
            "m": args.patches, "profile": args.profile}
    if getattr(args, "epochs", None) is not None:
        keys["epochs"] = args.epochs
    return {k: v for k, v in keys.items() if v is not None}


def _configs(args):
    from .config import ModelConfig, TrainConfig, load_config
    over = _overrides(args)
    if args.config:
        return load_config(args.config, over)
    epochs = over.pop("epochs", None)
    model_cfg = ModelConfig(**over)
    train_cfg = TrainConfig(**({"epochs": epochs} if epochs is not None else {}))
    train_cfg.validate()
    return model_cfg, train_cfg


def _layout(model_cfg, args):
    from .local_ensemble import plan_patches
    if args.overlap_pixels is not None:
        return plan_patches(model_cfg.image_extent, model_cfg.m,
                            overlap_pixels=args.overlap_pixels)
    return plan_patches(model_cfg.image_extent, model_cfg.m,
                        overlap_ratio=model_cfg.overlap_ratio)


def _dataset(path, model_cfg, layout, seed, per_class=60):
    from .data import load_dataset_tree, synth_dataset
    if path:
        return load_dataset_tree(path, model_cfg.image_extent,
                                 model_cfg.input_channels)
    return synth_dataset(model_cfg.class_count, per_class, seed=seed,
                         layout=layout, channels=model_cfg.input_channels)


def _model_from_checkpoint(path):
    import numpy as np
    from .checkpoint import load_checkpoint, read_checkpoint
    from .model import LNLAttenNet
    cfg, _ = read_checkpoint(path)
    model = LNLAttenNet(cfg, dtype=np.float32)
    load_checkpoint(path, model)
    return model


def _cmd_train(args):
    import numpy as np
    from .artifacts import write_confusion_csv, write_record_csv
    from .checkpoint import save_checkpoint
    from .train import train
    model_cfg, train_cfg = _configs(args)
    layout = _layout(model_cfg, args)
    train_ds = _dataset(args.data, model_cfg, layout, model_cfg.seed)
    test_ds = None
    if args.test_data:
        test_ds = _dataset(args.test_data, model_cfg, layout, model_cfg.seed)
    model, record = train(model_cfg, train_cfg, train_ds, test_dataset=test_ds,
                          dtype=np.float32, overlap_pixels=args.overlap_pixels,
                          log=print)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "model.ckpt"), model)
    write_record_csv(os.path.join(args.out, "train_record.csv"), record)
    if record.epochs:
        write_confusion_csv(os.path.join(args.out, "confusion.csv"),
                            record.epochs[-1]["confusion"])
        print(f"final test accuracy: {record.epochs[-1]['test_acc']:.4f}")
    print(f"trained {len(record.iterations)} iterations; "
          f"wrote {args.out}/model.ckpt")
    return 0


def _cmd_eval(args):
    from .artifacts import atomic_write_text, write_confusion_csv
    from .train import evaluate
    model = _model_from_checkpoint(args.checkpoint)
    layout = model.layout
    ds = _dataset(args.data, model.cfg, layout, model.cfg.seed + 10_000)
    acc, confusion = evaluate(model, ds)
    os.makedirs(args.out, exist_ok=True)
    write_confusion_csv(os.path.join(args.out, "confusion.csv"), confusion)
    atomic_write_text(os.path.join(args.out, "accuracy.txt"), f"{acc!r}\n")
    print(f"accuracy: {acc:.4f}")
    return 0


def _cmd_inspect_weights(args):
    import numpy as np
    from .artifacts import write_gates_csv, write_heatmap
    from .tensor import no_grad
    model = _model_from_checkpoint(args.checkpoint)
    ds = _dataset(args.data, model.cfg, model.layout, model.cfg.seed + 10_000)
    count = min(args.limit, len(ds))
    os.makedirs(args.out, exist_ok=True)
    columns = {}
    with no_grad():
        for i in range(count):
            out = model.forward(ds.images[i].astype(np.float32))
            write_heatmap(os.path.join(args.out, f"heatmap_{i:05d}.txt"),
                          out["wg"].data)
            columns[f"image_{i:05d}"] = out["gates"].data[:, 0]
    write_gates_csv(os.path.join(args.out, "gates.csv"), columns)
    print(f"wrote {count} heatmaps and gates.csv to {args.out}")
    return 0


def _cmd_occlude(args):
    import numpy as np
    from .artifacts import write_gates_csv
    from .errors import ConfigurationError
    from .train import occlusion_experiment
    model = _model_from_checkpoint(args.checkpoint)
    if not 0 <= args.patch_index < model.layout.m:
        raise ConfigurationError(
            f"patch_index must be in [0, {model.layout.m}), got {args.patch_index}")
    ds = _dataset(args.data, model.cfg, model.layout, model.cfg.seed + 10_000)
    image = ds.images[args.image_index].astype(np.float32)
    before, after, info = occlusion_experiment(model, image, args.patch_index)
    os.makedirs(args.out, exist_ok=True)
    write_gates_csv(os.path.join(args.out, "occlusion_gates.csv"),
                    {"before": before, "after": after, "delta": info["delta"]})
    print(f"patch {args.patch_index}: gate {before[args.patch_index]:.4f} -> "
          f"{after[args.patch_index]:.4f}; "
          f"changed neighbors: {info['changed_neighbors']}")
    return 0


def _cmd_sweep(args):
    from .artifacts import write_sweep_csv
    from .train import sweep
    model_cfg, train_cfg = _configs(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    typed = [float(v) if args.parameter == "alpha" else int(v) for v in values]
    rows = sweep(args.parameter, typed, model_cfg, train_cfg,
                 samples_per_class=args.per_class, log=print)
    os.makedirs(args.out, exist_ok=True)
    write_sweep_csv(os.path.join(args.out, "sweep.csv"), rows)
    print(f"wrote {args.out}/sweep.csv ({len(rows)} rows)")
    return 0


def _gradcheck_cases(seed):
    """Small randomized instances of every differentiable primitive."""
    import numpy as np
    from . import ops, tensor as T
    rng = np.random.default_rng(seed)

    def rt(*shape):
        return rng.standard_normal(shape)

    kernel3 = T.Tensor(rng.standard_normal((3, 3, 2, 3)) * 0.5)
    kernel1 = T.Tensor(rng.standard_normal((1, 1, 2, 3)) * 0.5)
    other = T.Tensor(rt(4, 5))
    matk = T.Tensor(rt(5, 3))
    labels = np.array([1, 0, 2])
    # keep every coordinate at least 0.5 from the |x| kink
    away = rt(4, 5)
    away += np.sign(away) * 0.5
    cases = [
        ("add", lambda x: T.summation(T.add(x, other)), rt(4, 5)),
        ("mul", lambda x: T.summation(T.mul(x, other)), rt(4, 5)),
        ("matmul", lambda x: T.summation(T.matmul(x, matk)), rt(4, 5)),
        ("relu", lambda x: T.summation(T.relu(x)), rt(4, 5) + 0.3),
        ("sigmoid", lambda x: T.summation(T.sigmoid(x)), rt(4, 5)),
        ("softmax", lambda x: T.summation(T.mul(T.softmax(x), other)), rt(4, 5)),
        ("l1_normalize_rows",
         lambda x: T.summation(T.mul(T.l1_normalize_rows(x), other)),
         away),
        ("conv2d_same",
         lambda x: T.summation(ops.conv2d(x, kernel3, padding="same")),
         rt(6, 6, 2)),
        ("conv2d_none",
         lambda x: T.summation(ops.conv2d(x, kernel1, padding="none")),
         rt(6, 6, 2)),
        ("maxpool2d", lambda x: T.summation(ops.maxpool2d(x)), rt(6, 6, 2)),
        ("adaptive_maxpool",
         lambda x: T.summation(ops.adaptive_maxpool(x, 3)), rt(7, 7, 2)),
        ("upsample2x", lambda x: T.summation(ops.upsample2x(x)), rt(3, 3, 2)),
        ("crop", lambda x: T.summation(T.crop(x, (slice(1, 4), slice(0, 3)))),
         rt(5, 5)),
        ("concat",
         lambda x: T.summation(T.concat([x, other], axis=-1)), rt(4, 2)),
        ("sum_squares", T.sum_squares, rt(4, 5)),
        ("nll_loss",
         lambda x: ops.nll_loss(T.softmax(x), labels)[0], rt(3, 4)),
    ]
    return cases


def _cmd_gradcheck(args):
    import numpy as np
    from .config import ModelConfig
    from .data import synth_dataset
    from .gradcheck import finite_diff_check
    from .head import classification_loss
    from .config import LossConfig
    from .model import LNLAttenNet
    seed = args.seed if args.seed is not None else 0
    tol = 1e-4
    worst_name, worst = None, 0.0
    failed = False
    for name, f, point in _gradcheck_cases(seed):
        err = finite_diff_check(f, point)
        status = "ok" if err < tol else "FAIL"
        if err >= tol:
            failed = True
        print(f"{name:<20s} max_rel_err {err:.3e}  {status}")
        if err > worst:
            worst_name, worst = name, err

    profile = args.profile or "tiny"
    cfg = ModelConfig(profile=profile, seed=seed, class_count=3)
    model = LNLAttenNet(cfg, dtype=np.float64)
    ds = synth_dataset(3, 1, seed=seed, layout=model.layout,
                       channels=cfg.input_channels)
    weights = model.store.weights()
    loss_cfg = LossConfig.from_model(cfg)

    def full_model(x):
        out = model.forward(x)
        return classification_loss(out["probs"], ds.labels[:2], weights,
                                   loss_cfg)[0]

    err = finite_diff_check(full_model, ds.images[:2].astype(np.float64),
                            max_coords=24, rng=np.random.default_rng(seed))
    status = "ok" if err < tol else "FAIL"
    if err >= tol:
        failed = True
    print(f"{'full_model_input':<20s} max_rel_err {err:.3e}  {status}")
    if err > worst:
        worst_name, worst = "full_model_input", err
    print(f"worst: {worst_name} at {worst:.3e} (tolerance {tol})")
    if failed:
        print("gradcheck FAILED", file=sys.stderr)
        return 3
    return 0


def _cmd_synth_data(args):
    from .config import ModelConfig
    from .data import synth_dataset, write_dataset_tree
    over = _overrides(args)
    over.pop("epochs", None)
    over["class_count"] = args.classes
    model_cfg = ModelConfig(**over)
    layout = _layout(model_cfg, args)
    ds = synth_dataset(args.classes, args.per_class, seed=model_cfg.seed,
                       layout=layout, channels=model_cfg.input_channels)
    write_dataset_tree(ds, args.out)
    print(f"wrote {len(ds)} images ({args.classes} classes) to {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "inspect-weights": _cmd_inspect_weights,
    "occlude": _cmd_occlude,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "synth-data": _cmd_synth_data,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_threads(argv)
    args = _build_parser().parse_args(argv)
    from .errors import ConfigurationError, DataError, NumericalError
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
