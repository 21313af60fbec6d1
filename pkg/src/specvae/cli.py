"""Command-line experiment harness.

Subcommands: ``generate`` (synthetic scene), ``train`` (one model across
seeds), ``eval`` (F1 tables + disentanglement report), ``infer`` (prediction
CSV), ``report`` (figures), ``ablate`` (gradient-stopping on/off grid).

Config files are flat ``key = value`` text with an ``include PATH`` directive
(paths relative to the including file). Keys prefixed ``scene.`` and
``train.`` feed the scene and training configurations; top-level keys are
``seeds`` (comma-separated), ``model``, ``rule``, ``samples`` and ``n_a``.

Exit codes: 0 ok, 2 config error, 3 training divergence, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import MODEL_NAMES, build_model, load_checkpoint, save_checkpoint
from .core import InvalidConfigError, default_grid, synth_irradiance
from .datagen import (
    CLASS_NAMES,
    SceneConfig,
    build_material_library,
    generate_dataset,
    load_container,
    load_irradiance,
    save_container,
    save_irradiance,
)
from .inference import DEFAULT_SAMPLES, predict_argmax_py, predict_qy, predictions_to_csv
from .io import ContainerError
from .metrics import DEFAULT_BINS, FactorCodeTable, f1_per_class, jemmig
from .models import DEFAULT_N_A
from .training import Priors, TrainConfig, TrainingDivergedError, train, trace_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_MISSING = 4

RULES = ("qy", "argmax")
FACTOR_LABELS = ("direct_irradiance", "diffuse_irradiance", "alpha", "eta")


class MissingArtifactError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# Config parsing


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_config(path: str | Path) -> dict:
    """Flat key-value config with ``include PATH`` (later keys win)."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigError(f"config file not found: {path}")
    out: dict = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include"):
            target = line.split("=", 1)[1] if "=" in line else line[len("include"):]
            out.update(read_config(path.parent / target.strip()))
            continue
        if "=" not in line:
            raise InvalidConfigError(f"malformed config line in {path}: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidConfigError(f"empty key in {path}: {raw!r}")
        out[key] = value
    return out


def _subconfig(cfg: dict, prefix: str, cls, **overrides):
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in cfg.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in fields:
            raise InvalidConfigError(f"unknown key {key!r} for {cls.__name__}")
        kwargs[name] = _parse_scalar(value)
    kwargs.update(overrides)
    return cls(**kwargs)


def _seeds(cfg: dict, args) -> list[int]:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    raw = str(cfg.get("seeds", "0,1,2"))
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError as exc:
        raise InvalidConfigError(f"bad seeds list {raw!r}") from exc
    if not seeds:
        raise InvalidConfigError("seeds list is empty")
    return seeds


def _model_name(cfg: dict, args) -> str:
    name = args.model or str(cfg.get("model", "p3vae"))
    if name not in MODEL_NAMES:
        raise InvalidConfigError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    return name


def _rule(cfg: dict, args) -> str:
    rule = args.rule or str(cfg.get("rule", "argmax"))
    if rule not in RULES:
        raise InvalidConfigError(f"unknown rule {rule!r}; choose from {RULES}")
    return rule


def _samples(cfg: dict, args) -> int:
    n = args.samples if args.samples is not None else int(cfg.get("samples", DEFAULT_SAMPLES))
    if n < 1:
        raise InvalidConfigError("samples must be >= 1")
    return n


def _scene_dir(out: Path, seed: int) -> Path:
    return out / "data" / f"seed{seed}"


def _model_dir(out: Path, name: str, seed: int) -> Path:
    return out / "models" / f"{name}_seed{seed}"


def _load_split(out: Path, seed: int, split: str):
    path = _scene_dir(out, seed) / split
    if not path.is_dir():
        raise MissingArtifactError(f"dataset split not found: {path} (run generate first)")
    return load_container(path)


def _load_model(out: Path, name: str, seed: int, grid, irr):
    path = _model_dir(out, name, seed) / "checkpoint"
    if not path.is_dir():
        raise MissingArtifactError(f"checkpoint not found: {path} (run train first)")
    return load_checkpoint(path, grid, irr)


def _load_irr(out: Path, seed: int):
    path = _scene_dir(out, seed) / "irradiance"
    if not path.is_dir():
        raise MissingArtifactError(f"irradiance not found: {path} (run generate first)")
    return load_irradiance(path)


# ---------------------------------------------------------------------------
# Commands


def cmd_generate(cfg: dict, args) -> int:
    out = Path(args.out)
    for seed in _seeds(cfg, args):
        scene = _subconfig(cfg, "scene.", SceneConfig, seed=seed)
        grid = default_grid()
        irr = synth_irradiance(grid, scene.theta_o_deg)
        lib = build_material_library(grid, seed)
        splits = generate_dataset(scene, lib, irr, grid)
        base = _scene_dir(out, seed)
        for split, container in splits.items():
            save_container(container, base / split)
        save_irradiance(irr, base / "irradiance")
        print(f"generate: seed {seed} -> {base} "
              f"({', '.join(f'{k}={v.n_rows}' for k, v in splits.items())})")
    return EXIT_OK


def _train_one(cfg: dict, args, out: Path, name: str, seed: int,
               gradient_stopping: bool) -> Path:
    ds = _load_split(out, seed, "train")
    irr = _load_irr(out, seed)
    tc = _subconfig(cfg, "train.", TrainConfig, seed=seed,
                    gradient_stopping=gradient_stopping)
    n_a = int(cfg.get("n_a", DEFAULT_N_A))
    torch.manual_seed(seed)  # weight init must not depend on prior RNG use
    model = build_model(name, ds.grid, irr, len(CLASS_NAMES), n_a)
    priors = Priors(len(CLASS_NAMES), n_a, irr.cos_theta_o)
    trace = train(model, ds.spectra, ds.labels, tc, priors)
    mdir = _model_dir(out, name, seed)
    save_checkpoint(model, mdir / "checkpoint")
    (mdir / "trace.csv").write_text(trace_to_csv(trace))
    return mdir


def cmd_train(cfg: dict, args) -> int:
    out = Path(args.out)
    name = _model_name(cfg, args)
    stopping = not args.no_gradient_stopping
    for seed in _seeds(cfg, args):
        try:
            mdir = _train_one(cfg, args, out, name, seed, stopping)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"model {name}, seed {seed}: {exc}") from exc
        print(f"train: {name} seed {seed} -> {mdir}")
    return EXIT_OK


def _predict(model, name: str, rule: str, x, irr, samples: int, seed: int,
             cfg: dict):
    if rule == "argmax" and name != "cnn":
        n_a = int(cfg.get("n_a", DEFAULT_N_A))
        priors = Priors(len(CLASS_NAMES), n_a, irr.cos_theta_o)
        tc = _subconfig(cfg, "train.", TrainConfig, seed=seed)
        return predict_argmax_py(model, x, n_samples=samples, priors=priors,
                                 cfg=tc, seed=seed)
    return predict_qy(model, torch.as_tensor(x, dtype=torch.float32))


def _f1_csv(f1: np.ndarray, avg: float) -> str:
    lines = ["class,f1"]
    for i, name in enumerate(CLASS_NAMES):
        lines.append(f"{name},{f1[i]:.6f}")
    lines.append(f"average,{avg:.6f}")
    return "\n".join(lines) + "\n"


def _read_f1_csv(path: Path) -> np.ndarray:
    rows = path.read_text().splitlines()[1:]
    return np.array([float(r.split(",")[1]) for r in rows])


def _latent_codes(model, name: str, x: np.ndarray, y_hat: np.ndarray):
    """Posterior-mean latent code per row, conditioned on the predicted class."""
    xt = torch.as_tensor(x, dtype=torch.float32)
    yt = torch.as_tensor(y_hat, dtype=torch.long)
    with torch.no_grad():
        if name == "gaussian_vae":
            mean, _ = model.encode(xt, yt)
            return mean.numpy()
        (a, b), gamma = model.encode(xt, yt)
        z_p = (a / (a + b))[:, None]
        z_a = gamma / gamma.sum(-1, keepdim=True)
        return torch.cat([z_p, z_a], dim=-1).numpy()


def _factor_table(container, codes: np.ndarray) -> FactorCodeTable:
    f = container.factors
    eta_lo = np.minimum(f[:, 6], f[:, 7])
    eta_hi = np.maximum(f[:, 6], f[:, 7])
    eta_pair = f[:, 0] * 100 + eta_lo * 10 + eta_hi
    factors = np.column_stack([f[:, 1] * f[:, 2], f[:, 3] * f[:, 4], f[:, 5], eta_pair])
    return FactorCodeTable(
        factors=factors,
        codes=codes,
        factor_names=FACTOR_LABELS,
        categorical=(False, False, False, True),
    )


def cmd_eval(cfg: dict, args) -> int:
    out = Path(args.out)
    name = _model_name(cfg, args)
    rule = _rule(cfg, args)
    samples = _samples(cfg, args)
    edir = out / "eval"
    edir.mkdir(parents=True, exist_ok=True)
    per_seed_paths = []
    for seed in _seeds(cfg, args):
        test = _load_split(out, seed, "test")
        irr = _load_irr(out, seed)
        model = _load_model(out, name, seed, test.grid, irr)
        preds = _predict(model, name, rule, test.spectra, irr, samples, seed, cfg)
        f1, avg = f1_per_class(preds.class_index, test.labels, len(CLASS_NAMES))
        path = edir / f"f1_{name}_{rule}_seed{seed}.csv"
        path.write_text(_f1_csv(f1, avg))
        per_seed_paths.append(path)
        if name != "cnn":
            codes = _latent_codes(model, name, test.spectra, preds.class_index)
            table = _factor_table(test, codes)
            bins = int(cfg.get("bins", DEFAULT_BINS))
            lines = ["factor,jemmig,mig,joint_entropy,normalized,best_code"]
            for i, label in enumerate(FACTOR_LABELS):
                r = jemmig(table, i, bins=bins)
                lines.append(f"{label},{r['jemmig']:.6f},{r['mig']:.6f},"
                             f"{r['joint_entropy']:.6f},{r['normalized']:.6f},{r['best_code']}")
            (edir / f"jemmig_{name}_seed{seed}.csv").write_text("\n".join(lines) + "\n")
        print(f"eval: {name}/{rule} seed {seed} average F1 {avg:.4f}")
    stacked = np.stack([_read_f1_csv(p) for p in per_seed_paths])
    mean = stacked.mean(axis=0)
    lines = ["class,f1"]
    for i, cname in enumerate(CLASS_NAMES):
        lines.append(f"{cname},{mean[i]:.6f}")
    lines.append(f"average,{mean[-1]:.6f}")
    (edir / f"f1_{name}_{rule}_mean.csv").write_text("\n".join(lines) + "\n")
    print(f"eval: {name}/{rule} mean average F1 {mean[-1]:.4f}")
    return EXIT_OK


def cmd_infer(cfg: dict, args) -> int:
    out = Path(args.out)
    name = _model_name(cfg, args)
    rule = _rule(cfg, args)
    samples = _samples(cfg, args)
    idir = out / "infer"
    idir.mkdir(parents=True, exist_ok=True)
    for seed in _seeds(cfg, args):
        test = _load_split(out, seed, "test")
        irr = _load_irr(out, seed)
        model = _load_model(out, name, seed, test.grid, irr)
        preds = _predict(model, name, rule, test.spectra, irr, samples, seed, cfg)
        path = idir / f"predictions_{name}_{rule}_seed{seed}.csv"
        path.write_text(predictions_to_csv(preds, rule))
        print(f"infer: {name}/{rule} seed {seed} -> {path}")
    return EXIT_OK


def _save_fig(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, bbox_inches="tight")


def cmd_report(cfg: dict, args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    name = _model_name(cfg, args)
    if name == "cnn":
        raise InvalidConfigError("report requires a generative model")
    samples = _samples(cfg, args)
    rdir = out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    seed = _seeds(cfg, args)[0]
    test = _load_split(out, seed, "test")
    irr = _load_irr(out, seed)
    model = _load_model(out, name, seed, test.grid, irr)

    # (a) inferred z_P against true direct irradiance; marker size tracks the
    # sampled z_P spread.
    preds = _predict(model, name, "argmax", test.spectra, irr, samples, seed, cfg)
    truth = test.factors[:, 1] * test.factors[:, 2]
    fig, ax = plt.subplots(figsize=(6, 5))
    hybrid = not np.all(np.isnan(preds.z_p_mean))
    if hybrid:
        size = 8.0 * np.exp(np.nan_to_num(preds.z_p_std))
        for ci, cname in enumerate(CLASS_NAMES):
            m = preds.class_index == ci
            ax.scatter(truth[m], preds.z_p_mean[m], s=size[m], alpha=0.4, label=cname)
        ax.plot([0, 1], [0, 1], "k--", lw=1)
        ax.set_xlabel("true direct irradiance factor")
        ax.set_ylabel("inferred z_P mean")
        ax.legend(fontsize=7)
        _save_fig(fig, rdir / f"zp_scatter_{name}_seed{seed}.png")
        np.savetxt(rdir / f"zp_scatter_{name}_seed{seed}.csv",
                   np.column_stack([truth, preds.z_p_mean, preds.z_p_std,
                                    preds.class_index]),
                   delimiter=",", header="truth,z_p_mean,z_p_std,predicted_class",
                   comments="", fmt="%.6f")
    plt.close(fig)

    if name == "gaussian_vae":
        print(f"report: {rdir} (latent grid and basis overlays need the hybrid decoder)")
        return EXIT_OK

    # (b) decoder maximum-likelihood spectra on a z_P × z_A interpolation grid.
    w = test.grid.wavelengths
    z_p_values = np.linspace(0.1, 0.9, 5)
    t_values = np.linspace(0.0, 1.0, 5)
    fig, axes = plt.subplots(len(z_p_values), len(CLASS_NAMES),
                             figsize=(3 * len(CLASS_NAMES), 2 * len(z_p_values)),
                             sharex=True, sharey=True)
    rows = []
    with torch.no_grad():
        for ci in range(len(CLASS_NAMES)):
            for ri, zp in enumerate(z_p_values):
                ax = axes[ri][ci]
                for t in t_values:
                    z_a = torch.zeros(1, model.n_a)
                    z_a[0, 0], z_a[0, 1] = 1.0 - t, t
                    y = torch.tensor([ci])
                    mu = model.decode(y, z_a, torch.tensor([zp], dtype=torch.float32))
                    ax.plot(w, mu[0].numpy(), lw=0.6)
                    rows.append(np.concatenate([[ci, zp, t], mu[0].numpy()]))
                if ri == 0:
                    ax.set_title(CLASS_NAMES[ci], fontsize=8)
                if ci == 0:
                    ax.set_ylabel(f"z_P={zp:.1f}", fontsize=7)
    _save_fig(fig, rdir / f"ml_grid_{name}_seed{seed}.png")
    np.savetxt(rdir / f"ml_grid_{name}_seed{seed}.csv", np.array(rows), delimiter=",",
               header="class,z_p,t," + ",".join(f"b{i}" for i in range(len(w))),
               comments="", fmt="%.6f")
    plt.close(fig)

    # (c) learned reflectance basis against the true material library.
    lib = build_material_library(test.grid, seed)
    with torch.no_grad():
        basis = model.decoder.basis_table().numpy()  # (C, B, n_A)
    fig, axes = plt.subplots(1, len(CLASS_NAMES), figsize=(3 * len(CLASS_NAMES), 2.5),
                             sharey=True)
    for ci, cname in enumerate(CLASS_NAMES):
        ax = axes[ci]
        for k in range(basis.shape[-1]):
            ax.plot(w, basis[ci, :, k], lw=0.7)
        for rho in lib.rho[ci]:
            ax.plot(w, rho, "k--", lw=0.8)
        ax.set_title(cname, fontsize=8)
    _save_fig(fig, rdir / f"basis_{name}_seed{seed}.png")
    np.savetxt(rdir / f"basis_{name}_seed{seed}.csv",
               basis.reshape(len(CLASS_NAMES) * basis.shape[-1], -1).T,
               delimiter=",", fmt="%.6f")
    plt.close(fig)
    print(f"report: figures written to {rdir}")
    return EXIT_OK


def cmd_ablate(cfg: dict, args) -> int:
    out = Path(args.out)
    name = "p3vae"
    samples = _samples(cfg, args)
    seeds = _seeds(cfg, args)
    adir = out / "ablate"
    adir.mkdir(parents=True, exist_ok=True)
    results = {}
    for stopping in (True, False):
        tag = "on" if stopping else "off"
        averages = {rule: [] for rule in RULES}
        for seed in seeds:
            test = _load_split(out, seed, "test")
            irr = _load_irr(out, seed)
            mdir = out / "ablate" / f"{name}_stop_{tag}_seed{seed}"
            ds = _load_split(out, seed, "train")
            tc = _subconfig(cfg, "train.", TrainConfig, seed=seed,
                            gradient_stopping=stopping)
            n_a = int(cfg.get("n_a", DEFAULT_N_A))
            torch.manual_seed(seed)
            model = build_model(name, ds.grid, irr, len(CLASS_NAMES), n_a)
            priors = Priors(len(CLASS_NAMES), n_a, irr.cos_theta_o)
            trace = train(model, ds.spectra, ds.labels, tc, priors)
            save_checkpoint(model, mdir / "checkpoint")
            (mdir / "trace.csv").write_text(trace_to_csv(trace))
            for rule in RULES:
                preds = _predict(model, name, rule, test.spectra, irr, samples,
                                 seed, cfg)
                _, avg = f1_per_class(preds.class_index, test.labels,
                                      len(CLASS_NAMES))
                averages[rule].append(avg)
            print(f"ablate: stopping {tag} seed {seed} done")
        for rule in RULES:
            results[(tag, rule)] = float(np.mean(averages[rule]))
    lines = ["gradient_stopping,rule,average_f1"]
    for (tag, rule), value in sorted(results.items()):
        lines.append(f"{tag},{rule},{value:.6f}")
    (adir / "ablation.csv").write_text("\n".join(lines) + "\n")
    print(f"ablate: -> {adir / 'ablation.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specvae",
                                     description="Hybrid physics/ML VAE experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="flat key-value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="run a single seed instead of the configured list")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--model", default=None, choices=MODEL_NAMES)
        p.add_argument("--rule", default=None, choices=RULES)
        p.add_argument("--samples", type=int, default=None,
                       help="importance samples for the argmax rule")
        p.add_argument("--no-gradient-stopping", action="store_true",
                       help="disable gradient stopping during training")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "report": cmd_report,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = read_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingArtifactError, ContainerError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
