"""Command-line entry point: reproducible data generation, training,
evaluation, and probing runs driven by a config file and one seed.

Every writing task records the fully resolved config (with the toolkit
version) in its output directory, and a (config, seed) pair determines
every output byte.  Exit codes: 0 success, 1 contract/numerical
violation, 2 I/O, parse, or usage failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, render_config
from .data import (
    CLASS_ANOMALY_A,
    CLASS_ANOMALY_B,
    CLASS_NORMAL,
    filter_windows,
    gen_booster_series,
    gen_pulses,
    load_pulses,
    load_series,
    make_pairs,
    make_windows,
    save_pulses,
    save_series,
)
from .diffcore import RngStream, load_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    DataFormatError,
    FactorizationError,
    StochasticForwardError,
)
from .evalkit import build_report, roc_curve, roc_with_smearing, uncertainty_ratio
from .gradsuite import run_gradient_suite
from .serialize import (
    checkpoint_kind,
    load_siamese,
    load_surrogate,
    save_siamese,
    save_surrogate,
)
from .siamese import SiameseConfig, predict_pairs, train_siamese
from .surrogate import SurrogateConfig, mape, predict, ramp_probe, train_surrogate


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    env_seed = os.environ.get("DGPA_SEED")
    if env_seed is not None:
        try:
            cfg.common.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"DGPA_SEED must be an integer, got {env_seed!r}") from None
    if getattr(args, "seed", None) is not None:
        cfg.common.seed = args.seed
    return cfg


def _prepare_out(args, cfg: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(f"# dgpa {__version__}\n" + render_config(cfg))
    return out


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(header)] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def cmd_gen_data(args) -> None:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    rng = RngStream(cfg.seed)
    train = gen_pulses({CLASS_NORMAL: cfg.data.pulses_normal,
                        CLASS_ANOMALY_A: cfg.data.pulses_anomaly_a}, rng.split())
    test = gen_pulses({CLASS_NORMAL: cfg.data.test_normal,
                       CLASS_ANOMALY_A: cfg.data.test_anomaly_a,
                       CLASS_ANOMALY_B: cfg.data.test_anomaly_b}, rng.split())
    series = gen_booster_series(cfg.data.series_length,
                                [(cfg.data.ood_start, cfg.data.ood_end)],
                                rng.split(), output_channel=cfg.data.output_channel)
    save_pulses(out / "pulses_train.csv", train)
    save_pulses(out / "pulses_test.csv", test)
    save_series(out / "booster.csv", series)
    print(f"wrote {len(train)} training pulses, {len(test)} test pulses, "
          f"series of length {cfg.data.series_length} to {out}")


def cmd_train_siamese(args) -> None:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    rng = RngStream(cfg.seed)
    pulses = load_pulses(Path(args.data) / "pulses_train.csv")
    pairs = make_pairs(pulses, cfg.siamese.pairs_per_label, True, rng.split())
    s = cfg.siamese
    model = train_siamese(pairs, SiameseConfig(
        epochs=s.epochs, batch_size=s.batch_size, lr=s.lr, alpha=s.alpha,
        margin=s.margin, rff_dim=s.rff_dim, length_scale=s.length_scale,
        ridge=s.ridge, spectral_bound=s.spectral_bound,
        power_iterations=s.power_iterations), rng.split())
    save_siamese(out / "siamese.ckpt", model)
    _write_csv(out / "training_log.csv", ["epoch", "mean_loss"],
               [[str(i), _fmt(v)] for i, v in enumerate(model.loss_history)])
    final = model.loss_history[-1] if model.loss_history else float("nan")
    print(f"trained siamese model on {len(pairs)} pairs; final epoch loss {final:.4f}")


def cmd_train_surrogate(args) -> None:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    rng = RngStream(cfg.seed)
    series = load_series(Path(args.data) / "booster.csv")
    windows = make_windows(series, cfg.data.output_channel)
    kept = filter_windows(windows, cfg.surrogate.gate_threshold)
    g = cfg.surrogate
    model = train_surrogate(kept, SurrogateConfig(
        epochs=g.epochs, batch_size=g.batch_size, lr=g.lr, rff_dim=g.rff_dim,
        length_scale=g.length_scale, noise_var=g.noise_var, lambda_bl=g.lambda_bl,
        l1=g.l1, l2=g.l2, pairs_per_batch=g.pairs_per_batch,
        output_channel=cfg.data.output_channel), rng.split())
    save_surrogate(out / "surrogate.ckpt", model)
    _write_csv(out / "training_log.csv", ["epoch", "mean_loss"],
               [[str(i), _fmt(v)] for i, v in enumerate(model.loss_history)])
    print(f"trained surrogate on {len(kept)} of {len(windows)} windows "
          f"(gate filter {g.gate_threshold})")


def _evaluate_siamese(args, cfg: RunConfig, out: Path) -> None:
    rng = RngStream(cfg.seed)
    model = load_siamese(args.checkpoint)
    pulses = load_pulses(Path(args.data) / "pulses_test.csv")
    n_pairs = cfg.evaluate.test_pairs_per_label
    seen_set = [p for p in pulses if p.label in (CLASS_NORMAL, CLASS_ANOMALY_A)]
    unseen_set = [p for p in pulses if p.label in (CLASS_NORMAL, CLASS_ANOMALY_B)]
    seen_pairs = make_pairs(seen_set, n_pairs, True, rng.split())
    unseen_pairs = [p for p in make_pairs(unseen_set, n_pairs, False, rng.split())
                    if p.label == 1]

    def batch_predict(pairs):
        if not pairs:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        a = np.stack([p.trace_a for p in pairs])
        b = np.stack([p.trace_b for p in pairs])
        return predict_pairs(model, a, b)

    prob_s, std_s, logit_s = batch_predict(seen_pairs)
    prob_u, std_u, logit_u = batch_predict(unseen_pairs)
    labels_s = np.array([p.label for p in seen_pairs])

    rows = []
    for i, p in enumerate(seen_pairs):
        kind = "nn" if p.label == 0 else "seen"
        rows.append([str(i), str(p.label), kind, _fmt(prob_s[i]), _fmt(std_s[i]),
                     _fmt(logit_s[i])])
    for i, p in enumerate(unseen_pairs):
        rows.append([str(len(seen_pairs) + i), "1", "unseen", _fmt(prob_u[i]),
                     _fmt(std_u[i]), _fmt(logit_u[i])])
    _write_csv(out / "predictions.csv",
               ["pair_id", "label", "kind", "probability", "uncertainty", "logit"], rows)

    curve = roc_curve(logit_s, labels_s)
    band = roc_with_smearing(logit_s, std_s, labels_s, trials=cfg.evaluate.trials,
                             rng=rng.split(), grid_size=cfg.evaluate.grid_size)
    uncertainty = {
        "mean_std_normal_normal": float(std_s[labels_s == 0].mean()),
        "mean_std_seen_anomaly": float(std_s[labels_s == 1].mean()),
        "mean_std_unseen_anomaly": float(std_u.mean()) if std_u.size else None,
        "auc_seen": curve.auc,
    }
    report = build_report({"task": "evaluate-siamese", "trials": cfg.evaluate.trials},
                          cfg.seed, roc=curve, band=band, uncertainty=uncertainty)
    report.save(out / "report.json")
    print(f"siamese evaluation: AUC {curve.auc:.3f}; "
          f"std nn/seen/unseen = {uncertainty['mean_std_normal_normal']:.4f}/"
          f"{uncertainty['mean_std_seen_anomaly']:.4f}/"
          f"{(uncertainty['mean_std_unseen_anomaly'] or float('nan')):.4f}")


def _evaluate_surrogate(args, cfg: RunConfig, out: Path) -> None:
    model = load_surrogate(args.checkpoint)
    series = load_series(Path(args.data) / "booster.csv")
    windows = make_windows(series, model.config.output_channel)
    inputs = np.stack([w.inputs for w in windows])
    targets = np.array([w.target for w in windows])
    flags = np.array([w.ood_flag for w in windows])
    means, stds = predict(model, inputs)
    rows = [[str(w.window_id), _fmt(w.target), _fmt(means[i]), _fmt(stds[i]),
             str(int(w.ood_flag))] for i, w in enumerate(windows)]
    _write_csv(out / "predictions.csv",
               ["window_id", "target", "mean", "std", "ood"], rows)
    ratio = uncertainty_ratio(stds, flags)
    uncertainty = {
        "ratio_ood_over_id": ratio,
        "mean_std_ood": float(stds[flags].mean()),
        "mean_std_id": float(stds[~flags].mean()),
        "mape_in_distribution": mape(means[~flags], targets[~flags]),
    }
    report = build_report({"task": "evaluate-surrogate"}, cfg.seed,
                          uncertainty=uncertainty)
    report.save(out / "report.json")
    print(f"surrogate evaluation: OOD/ID uncertainty ratio {ratio:.2f}, "
          f"ID MAPE {uncertainty['mape_in_distribution']:.2f}%")


def cmd_evaluate(args) -> None:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    kind = checkpoint_kind(load_checkpoint(args.checkpoint))
    if kind == "siamese":
        _evaluate_siamese(args, cfg, out)
    else:
        _evaluate_surrogate(args, cfg, out)


def cmd_probe_ood(args) -> None:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    model = load_surrogate(args.checkpoint)
    series = load_series(Path(args.data) / "booster.csv")
    windows = make_windows(series, model.config.output_channel)
    base_id = cfg.probe.base_window
    if not 0 <= base_id < len(windows):
        raise ContractViolation(f"base_window {base_id} out of range [0, {len(windows)})")
    base = windows[base_id]
    if base.gate_value > cfg.surrogate.gate_threshold:
        raise ContractViolation(
            f"base window {base_id} is gated out (gate {base.gate_value:.4f}); "
            f"choose an in-distribution window")
    increments = np.linspace(0.0, cfg.probe.increment_max, cfg.probe.increment_count)
    table = ramp_probe(model, base, cfg.probe.channel, increments)
    _write_csv(out / "probe.csv", ["increment", "mean", "std"],
               [[_fmt(i), _fmt(m), _fmt(s)] for i, m, s in table])
    print(f"ramp probe on window {base_id}: std {table[0][2]:.4f} -> {table[-1][2]:.4f}")


def cmd_gradcheck(args) -> None:
    cfg = _resolve_config(args)
    results = run_gradient_suite(cfg.seed)
    rows = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status}  {r.name}: max rel error {r.max_error:.3e}")
        rows.append([r.name, _fmt(r.max_error), status])
    if args.out:
        out = _prepare_out(args, cfg)
        _write_csv(out / "gradcheck.csv", ["check", "max_rel_error", "status"], rows)
    if not all(r.passed for r in results):
        raise ContractViolation("gradient checks failed")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgpa",
        description="Distance-aware uncertainty toolkit: synthetic benchmarks, "
                    "classifier/surrogate training, and evaluation.")
    parser.add_argument("--version", action="version", version=f"dgpa {__version__}")
    sub = parser.add_subparsers(dest="task", required=True)

    def common(p, needs_data=False, needs_ckpt=False, needs_out=True):
        p.add_argument("--config", help="config file (documented key-value format)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if needs_data:
            p.add_argument("--data", required=True, help="directory from gen-data")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=True, help="model checkpoint path")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate the seeded synthetic datasets")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-siamese", help="train the pair-similarity classifier")
    common(p, needs_data=True)
    p.set_defaults(func=cmd_train_siamese)

    p = sub.add_parser("train-surrogate", help="train the next-step regression surrogate")
    common(p, needs_data=True)
    p.set_defaults(func=cmd_train_surrogate)

    p = sub.add_parser("evaluate", help="evaluate a trained checkpoint")
    common(p, needs_data=True, needs_ckpt=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("probe-ood", help="ramp one input channel into unfamiliar territory")
    common(p, needs_data=True, needs_ckpt=True)
    p.set_defaults(func=cmd_probe_ood)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient battery")
    p.add_argument("--config", help="config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="optional output directory for the report")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ContractViolation, FactorizationError, StochasticForwardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
