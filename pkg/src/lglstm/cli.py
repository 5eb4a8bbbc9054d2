"""Command-line interface.

    lglstm <synth|train|eval|infer|gradcheck> --config <path> [--override key=value ...]

Exit codes: 0 success, 1 gradient-check failure (or other runtime fault),
2 bad configuration, 3 missing file.  LGLSTM_THREADS caps the BLAS worker
count; it must be applied before numpy loads, so the heavy imports below
live inside main().
"""

import argparse
import json
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("LGLSTM_THREADS")
    if not cap:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = cap


def build_parser():
    parser = argparse.ArgumentParser(prog="lglstm",
                                     description="local-global LSTM segmentation engine")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("synth", "generate a synthetic dataset on disk"),
                      ("train", "train a model, writing checkpoint + loss CSV"),
                      ("eval", "evaluate checkpoint(s), printing metrics"),
                      ("infer", "write predicted label maps for a dataset"),
                      ("gradcheck", "finite-difference check of all gradients")):
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("--config", required=True, help="JSON run configuration")
        cmd.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE", help="dotted config override")
    return parser


def main(argv=None):
    _apply_thread_cap()
    args = build_parser().parse_args(argv)

    from .errors import ConfigError
    from . import config as cfgmod

    try:
        merged, raw = cfgmod.load_run_config(args.config, args.override)
        handler = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
                   "infer": cmd_infer, "gradcheck": cmd_gradcheck}[args.command]
        return handler(merged, raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _load_samples(merged):
    from . import dataio
    from .errors import ConfigError

    data = merged["data"]
    if data["dir"] is not None:
        samples, _ = dataio.load_dataset(data["dir"])
        return samples
    synth = data["synth"]
    if synth is None:
        raise ConfigError("no dataset: set data.dir or data.synth")
    return dataio.synth_generate(synth["seed"], synth["count"],
                                 synth["height"], synth["width"])


def _report_dir(merged):
    out = merged["io"]["report_dir"] or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_synth(merged, raw):
    from . import dataio
    from .errors import ConfigError

    out_dir = merged["data"]["dir"]
    if out_dir is None:
        raise ConfigError("synth needs data.dir as the output directory")
    synth = merged["data"]["synth"]
    if synth is None:
        raise ConfigError("synth needs data.synth generation parameters")
    samples = dataio.synth_generate(synth["seed"], synth["count"],
                                    synth["height"], synth["width"])
    manifest = dataio.save_dataset(samples, out_dir, seed=synth["seed"])
    print(f"wrote {manifest['count']} samples "
          f"({manifest['height']}x{manifest['width']}, {manifest['classes']} classes) "
          f"to {out_dir}")
    return 0


def _build_model(merged):
    from . import checkpoint, config as cfgmod, network

    model_config = cfgmod.model_config_from(merged)
    path = merged["io"]["checkpoint_in"]
    if path is None:
        return network.init_model(model_config, merged["train"]["seed"])
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return checkpoint.load_model(path, model_config)


def cmd_train(merged, raw):
    from . import checkpoint, config as cfgmod, report, training

    samples = _load_samples(merged)
    model = _build_model(merged)
    opt = cfgmod.opt_state_from(merged)
    section = merged["train"]
    result = training.train(model, samples, opt, epochs=section["epochs"],
                            seed=section["seed"], eval_every=section["eval_every"])

    out_dir = _report_dir(merged)
    csv_path = os.path.join(out_dir, "loss.csv")
    with open(csv_path, "w") as fh:
        fh.write("step,loss\n")
        for step, loss in result.loss_trace:
            fh.write(f"{step},{loss:.17g}\n")
    curve_path = os.path.join(out_dir, "loss_curve.png")
    if result.loss_trace:
        report.save_loss_curve(result.loss_trace, result.metric_trace, curve_path)

    ckpt_path = merged["io"]["checkpoint_out"]
    if ckpt_path is not None:
        parent = os.path.dirname(ckpt_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        checkpoint.save_checkpoint(model.named_parameters(), ckpt_path)
        print(f"checkpoint: {ckpt_path}")
    final_loss = result.loss_trace[-1][1] if result.loss_trace else float("nan")
    print(f"trained {result.steps} steps on {len(samples)} samples; "
          f"final loss {final_loss:.6f}")
    print(f"loss trace: {csv_path}")
    return 0


def _checkpoint_variants(merged):
    from .errors import ConfigError

    raw_in = merged["io"]["checkpoint_in"]
    if raw_in is None:
        raise ConfigError("eval/infer needs io.checkpoint_in")
    if isinstance(raw_in, str):
        return {"model": raw_in}
    if isinstance(raw_in, dict) and all(isinstance(v, str) for v in raw_in.values()):
        return dict(raw_in)
    raise ConfigError("io.checkpoint_in must be a path or a {name: path} object")


def _format_report(name, rep):
    def fmt(v):
        return "   n/a" if v is None else f"{v:6.4f}"

    lines = [f"variant: {name}",
             f"  pixel accuracy {fmt(rep.pixel_acc)}   foreground accuracy {fmt(rep.fg_acc)}",
             "  class        precision   recall       f1      iou"]
    for c in range(len(rep.iou)):
        tag = f"{c}" + (" (bg)" if c == 0 else "")
        lines.append(f"  {tag:<10}      {fmt(rep.precision[c])}   {fmt(rep.recall[c])}"
                     f"   {fmt(rep.f1[c])}   {fmt(rep.iou[c])}")
    lines.append(f"  averages over foreground classes: precision {fmt(rep.avg_precision)}"
                 f"  recall {fmt(rep.avg_recall)}  f1 {fmt(rep.avg_f1)}")
    lines.append(f"  mean IoU {fmt(rep.mean_iou)}   foreground IoU {fmt(rep.fg_iou)}")
    return "\n".join(lines)


def cmd_eval(merged, raw):
    from . import checkpoint, config as cfgmod, dataio, network, report

    samples = _load_samples(merged)
    model_config = cfgmod.model_config_from(merged)
    gts = [s.labels for s in samples]
    reports = {}
    for name, path in _checkpoint_variants(merged).items():
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        model = checkpoint.load_model(path, model_config)
        preds = [network.predict(model, s.image) for s in samples]
        reports[name] = dataio.evaluate(preds, gts, model_config.classes)

    for name, rep in reports.items():
        print(_format_report(name, rep))
        print()
    payload = {name: rep.to_json_dict() for name, rep in reports.items()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)

    out_dir = _report_dir(merged)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        fh.write(text)
        fh.write("\n")
    report.save_metrics_chart(reports, os.path.join(out_dir, "metrics.png"))
    return 0


def cmd_infer(merged, raw):
    from . import checkpoint, config as cfgmod, dataio, network
    from .errors import ConfigError

    pred_dir = merged["io"]["pred_dir"]
    if pred_dir is None:
        raise ConfigError("infer needs io.pred_dir")
    samples = _load_samples(merged)
    model_config = cfgmod.model_config_from(merged)
    variants = _checkpoint_variants(merged)
    if len(variants) != 1:
        raise ConfigError("infer expects a single checkpoint")
    path = next(iter(variants.values()))
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    model = checkpoint.load_model(path, model_config)
    os.makedirs(pred_dir, exist_ok=True)
    for i, sample in enumerate(samples):
        pred = network.predict(model, sample.image)
        dataio.write_label_pgm(os.path.join(pred_dir, f"pred_{i:04d}.pgm"), pred)
        dataio.write_color_ppm(os.path.join(pred_dir, f"pred_{i:04d}.ppm"), pred)
    print(f"wrote {len(samples)} predictions to {pred_dir}")
    return 0


def cmd_gradcheck(merged, raw):
    from . import training

    explicit = raw.get("model", {}) if isinstance(raw, dict) else {}
    overrides = {k: v for k, v in explicit.items()
                 if k in ("d", "layers", "classes", "directions", "use_global",
                          "h_update", "biases", "stem_channels", "precision")}
    if "stem_channels" in overrides:
        overrides["stem_channels"] = tuple(overrides["stem_channels"])
    section = merged["gradcheck"]

    modes = [overrides["h_update"]] if "h_update" in overrides \
        else ["strict_paper", "standard"]
    globals_ = [overrides["use_global"]] if "use_global" in overrides \
        else [True, False]
    worst = 0.0
    failed = False
    for mode in modes:
        for use_global in globals_:
            combo = dict(overrides)
            combo["h_update"] = mode
            combo["use_global"] = use_global
            config = training.tiny_gradcheck_config(**combo)
            rep = training.grad_check(config, seed=section["seed"],
                                      n_coords=section["n_coords"],
                                      eps=section["eps"], tol=section["tol"],
                                      height=section["height"], width=section["width"])
            status = "ok" if rep.passed else "FAIL"
            print(f"h_update={mode:<12} use_global={str(use_global):<5} "
                  f"max_rel_err={rep.max_rel_err:.3e} "
                  f"(worst {rep.worst_name}[{rep.worst_index}]) {status}")
            worst = max(worst, rep.max_rel_err)
            failed = failed or not rep.passed
    print(f"max relative error {worst:.3e} over {section['n_coords']} coordinates "
          f"per combination (tolerance {section['tol']:.1e}, absolute agreement "
          f"floor {rep.abs_floor:.1e})")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
