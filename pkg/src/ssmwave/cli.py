"""Command-line surface.

Commands: ``hippo verify``, ``stability report``, ``train``, ``generate``,
``eval``. Exit codes: 0 success, 1 usage/config error, 2 runtime error,
3 numerical divergence. Delimited reports always get a rendered figure
written alongside them. All randomness flows from one seed, split
deterministically per consumer (data, init, sampling).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import hippo, reporting, ssm
from .checkpoint import CheckpointError, load_model, save_model
from .model import ModelConfig, build_model
from .sampling import generate
from .tensor import NonFiniteError, Rng, derive_seed
from .training import (QuantSpec, TrainConfig, Trainer, encode_array,
                       decode_array, evaluate_nll, fit, make_synthetic)
from .wavio import read_wav, write_wav

__all__ = ["main", "entrypoint", "ConfigError", "parse_config"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIVERGED = 3

# seed-split tags per consumer
_SEED_DATA = 1
_SEED_INIT = 2
_SEED_SAMPLING = 3
_SEED_BATCH = 4


class ConfigError(ValueError):
    """Bad key or value in a run configuration file."""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage to 1
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# config files: line-oriented "key = value", '#' comment lines, unknown keys
# are errors


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(part) for part in s.split(","))


_SCHEMA: dict[str, tuple[Callable[[str], object], object]] = {
    "seed": (int, 0),
    "steps": (int, 200),
    "batch": (int, 1),
    "seq_len": (int, 256),
    "lr": (float, 0.001),
    "optimizer": (str, "adam"),
    "trainable": (str, "all"),
    "log_every": (int, 50),
    "width": (int, 8),
    "n_tiers": (int, 3),
    "n_blocks": (int, 1),
    "state_size": (int, 8),
    "pool_p": (int, 4),
    "pool_q": (int, 2),
    "ffn_expand": (int, 2),
    "nonlinearity": (str, "gelu"),
    "ssm_mode": (str, "tied_exp"),
    "conj_pairs": (_bool, True),
    "causal": (_bool, True),
    "lambda_tying": (str, "layer"),
    "init_family": (str, "legs"),
    "quant": (str, "mulaw"),
    "dataset": (str, "sawtooth"),
    "dataset_length": (int, 4096),
    "period": (int, 64),
    "amplitude": (float, 0.9),
    "phi": (float, 0.9),
    "noise_scale": (float, 0.04),
    "periods": (_floats, (64.0,)),
    "amps": (_floats, (0.5,)),
}


def parse_config(path) -> dict:
    out = {key: default for key, (_, default) in _SCHEMA.items()}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        conv, _ = _SCHEMA[key]
        try:
            out[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return out


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig(
            width=cfg["width"], n_tiers=cfg["n_tiers"], n_blocks=cfg["n_blocks"],
            state_size=cfg["state_size"], pool_p=cfg["pool_p"], pool_q=cfg["pool_q"],
            ffn_expand=cfg["ffn_expand"], nonlinearity=cfg["nonlinearity"],
            ssm_mode=cfg["ssm_mode"], conj_pairs=cfg["conj_pairs"],
            causal=cfg["causal"], lambda_tying=cfg["lambda_tying"],
            init_family=cfg["init_family"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr=cfg["lr"], optimizer=cfg["optimizer"], steps=cfg["steps"],
            batch=cfg["batch"], seq_len=cfg["seq_len"], trainable=cfg["trainable"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _dataset(cfg: dict, rng: Rng) -> np.ndarray:
    kind = cfg["dataset"]
    try:
        return make_synthetic(
            kind, cfg["dataset_length"], rng, periods=cfg["periods"],
            amps=cfg["amps"], period=cfg["period"], amplitude=cfg["amplitude"],
            phi=cfg["phi"], scale=cfg["noise_scale"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# commands


def cmd_hippo_verify(args) -> int:
    family = args.family.lower()
    if family not in hippo.FAMILIES:
        raise _UsageError(f"unknown family {args.family!r}")
    if args.n < 1:
        raise _UsageError("--n must be >= 1")
    beta = args.beta
    try:
        spec = hippo.HippoSpec(family, args.n,
                               beta=beta if family == "lagt" else None)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    report = hippo.verify_decomposition(spec)
    print(f"family {family}")
    print(f"n {args.n}")
    if family == "lagt":
        print(f"beta {_fmt(spec.beta)}")
    print(f"rank {report.rank}")
    print(f"reconstruction_err {_fmt(report.reconstruction_err)}")
    print(f"unitarity_err {_fmt(report.unitarity_err)}")
    print(f"re_lambda_err {_fmt(report.re_lambda_err)}")
    ok = report.ok(1e-8)
    print(f"status {'ok' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_stability_report(args) -> int:
    model, _ = load_model(args.checkpoint)
    rows = []
    for layer in model.s4_layers():
        tier = layer.name.split(".")[0]
        for ch in range(layer.h):
            rep = ssm.stability_report(layer.channel_params(model, ch))
            rows.append({
                "tier": tier,
                "layer": layer.name,
                "channel_group": ch,
                "spectral_radius": rep.spectral_radius_abar,
                "max_re_lambda": rep.max_re_lambda,
                "hurwitz_by_construction": rep.hurwitz_by_construction,
            })
    out = Path(args.out)
    with open(out, "w", newline="") as f:
        f.write("tier,layer,channel_group,spectral_radius,max_re_lambda,"
                "hurwitz_by_construction\n")
        for r in rows:
            f.write(
                f"{r['tier']},{r['layer']},{r['channel_group']},"
                f"{_fmt(r['spectral_radius'])},{_fmt(r['max_re_lambda'])},"
                f"{'true' if r['hurwitz_by_construction'] else 'false'}\n"
            )
    fig = reporting.figure_path_for(out)
    reporting.save_stability_figure(rows, fig)
    worst = max(r["spectral_radius"] for r in rows)
    print(f"wrote {len(rows)} rows to {out} (figure {fig}); "
          f"max spectral radius {worst:.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    seed = cfg["seed"]
    model = build_model(_model_config(cfg), Rng(derive_seed(seed, _SEED_INIT)))
    quant = QuantSpec(scheme=cfg["quant"])
    wave = _dataset(cfg, Rng(derive_seed(seed, _SEED_DATA)))
    data = encode_array(wave, quant)
    try:
        trainer = Trainer(model, _train_config(cfg), quant)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    losses = fit(trainer, data, Rng(derive_seed(seed, _SEED_BATCH)),
                 log_every=cfg["log_every"])
    save_model(model, args.out, quant)
    print(f"saved checkpoint to {args.out} "
          f"({model.num_params()} parameters, final loss {losses[-1]:.6f})")
    if args.loss_out:
        loss_path = Path(args.loss_out)
        with open(loss_path, "w", newline="") as f:
            f.write("step,loss_bits\n")
            for i, v in enumerate(losses):
                f.write(f"{i},{_fmt(v)}\n")
        reporting.save_loss_figure(losses, reporting.figure_path_for(loss_path))
    return EXIT_OK


def cmd_generate(args) -> int:
    model, quant = load_model(args.checkpoint)
    if args.length < 1:
        raise _UsageError("--length must be >= 1")
    prime = np.zeros(0, dtype=np.uint8)
    if args.prime_wav:
        floats, _ = read_wav(args.prime_wav)
        prime = encode_array(floats, quant)
    rng = Rng(derive_seed(args.seed, _SEED_SAMPLING))
    result = generate(model, prime, args.length, rng, quant)
    write_wav(args.out_wav, decode_array(result.tokens, quant))
    print(f"wrote {args.length} samples to {args.out_wav}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, quant = load_model(args.checkpoint)
    floats, _ = read_wav(args.data_wav)
    data = encode_array(floats, quant)
    nll = evaluate_nll(model, data, args.chunk_len, quant)
    print(f"nll_bits {nll:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="ssmwave", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_hippo = sub.add_parser("hippo", help="state-matrix construction checks")
    hippo_sub = p_hippo.add_subparsers(dest="subcommand", required=True)
    p_verify = hippo_sub.add_parser("verify", help="verify the DPLR decomposition")
    p_verify.add_argument("--family", required=True)
    p_verify.add_argument("--n", type=int, required=True)
    p_verify.add_argument("--beta", type=float, default=0.0)
    p_verify.set_defaults(func=cmd_hippo_verify)

    p_stab = sub.add_parser("stability", help="stability analyses")
    stab_sub = p_stab.add_subparsers(dest="subcommand", required=True)
    p_rep = stab_sub.add_parser("report", help="per-SSM spectral radius report")
    p_rep.add_argument("--checkpoint", required=True)
    p_rep.add_argument("--out", required=True, help="CSV path (figure rendered alongside)")
    p_rep.set_defaults(func=cmd_stability_report)

    p_train = sub.add_parser("train", help="train on a synthetic dataset")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--loss-out", default=None,
                         help="optional loss CSV (figure rendered alongside)")
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample a waveform from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--prime-wav", default=None)
    p_gen.add_argument("--length", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out-wav", required=True)
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("eval", help="chunked NLL of a waveform")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data-wav", required=True)
    p_eval.add_argument("--chunk-len", type=int, required=True)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (_UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ssm.DivergenceError, NonFiniteError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
