"""Command-line surface: train, generate, reconstruct, superres, complete,
maps, eval, synth.

Every subcommand is reproducible: one root seed fans out into named
streams, outputs land under the io output directory (flag beats the
FUNCMIX_OUTPUT_DIR environment variable, which beats the config), and
files are written atomically. Exit codes: 0 success, 1 runtime failure,
2 bad configuration or usage.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .config import ConfigError, load_config
from .data import (
    DatasetContainer,
    SYNTHESIZERS,
    check_likelihood_domain,
    load_container,
    save_container,
    split_dataset,
    synthesize_toy_dataset,
    to_clouds,
)
from .metrics import evaluate_testset
from .model import build_model
from .pointcloud import GridSpec
from .render import render_grid
from .rng import make_generator
from .tasks import complete, entropy_map, generate, reconstruct, segmentation_map, super_resolve
from .training import TrainConfig, train_loop

__all__ = ["main"]


def _resolve_container(config: dict) -> DatasetContainer:
    data = config["data"]
    if "path" in data:
        container = load_container(data["path"])
    else:
        container = synthesize_toy_dataset(
            data["synthesizer"], data["n_samples"], tuple(data["grid_shape"]),
            config["train"]["seed"],
        )
    check_likelihood_domain(container, config["model"]["likelihood"])
    return container


def _splits(config: dict, container: DatasetContainer):
    clouds = to_clouds(container)
    return split_dataset(clouds, config["data"]["split"], config["train"]["seed"])


def _output_dir(config: dict, flag_value) -> Path:
    out = flag_value or os.environ.get("FUNCMIX_OUTPUT_DIR") or config["io"]["output_dir"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_jsonl_line(path: Path, record: dict):
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _save_feature_container(path, coords: torch.Tensor, features: torch.Tensor,
                            grid_shape, feature_range=(0.0, 1.0)):
    n = features.shape[0]
    save_container(
        path,
        DatasetContainer(
            coords=np.tile(coords.numpy(), (n, 1, 1)),
            features=features.numpy(),
            grid_shape=grid_shape,
            feature_range=feature_range,
        ),
    )


def _grids(features: torch.Tensor, spec: GridSpec):
    return [features[i].reshape(*spec.shape, features.shape[-1]).numpy()
            for i in range(features.shape[0])]


def cmd_synth(args) -> int:
    container = synthesize_toy_dataset(args.name, args.n, tuple(args.grid), args.seed)
    save_container(args.out, container)
    print(f"wrote {args.out}: {container.n_samples} samples on grid {container.grid_shape}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.override)
    try:
        container = _resolve_container(config)
    except ValueError as exc:
        raise ConfigError(str(exc))
    train_clouds, _ = _splits(config, container)
    model = build_model(config, container.coords.shape[-1], container.features.shape[-1])
    tc = TrainConfig(
        epochs=config["train"]["epochs"],
        batch_size=config["train"]["bs"],
        learning_rate=config["train"]["lr"],
        warmup_epochs=config["flow"]["warmup_epochs"],
        dropout_alpha=config["train"]["alpha"],
        mc_samples=config["train"]["mc_samples"],
        seed=config["train"]["seed"],
        gradient_clip_norm=config["train"]["gradient_clip_norm"],
    )
    out = _output_dir(config, args.out_dir)
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")
    rng_states: dict = {}
    interval = config["io"]["checkpoint_interval"]

    def on_epoch_end(epoch: int, model, record: dict):
        _write_jsonl_line(metrics_path, record)
        if interval > 0 and (epoch + 1) % interval == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch + 1:04d}.pt", model, config,
                            epoch + 1, rng_states)

    log = train_loop(train_clouds, model, tc, on_epoch_end=on_epoch_end, rng_out=rng_states)
    save_checkpoint(out / "checkpoint.pt", model, config, tc.epochs, rng_states)
    final = log[-1]["elbo"] if log else float("nan")
    print(f"trained {tc.epochs} epochs on {len(train_clouds)} clouds; "
          f"final objective {final:.3f}; checkpoint at {out / 'checkpoint.pt'}")
    return 0


def _load_model_and_data(args):
    payload = load_checkpoint(args.ckpt)
    model = restore_model(payload)
    config = payload["config"]
    container = _resolve_container(config)
    return model, config, container


def cmd_generate(args) -> int:
    model, config, container = _load_model_and_data(args)
    spec = GridSpec(container.grid_shape).scaled(args.scale)
    coords = spec.cell_centers()
    gen = make_generator(args.seed, "prior")
    feats = generate(model, coords, args.n, gen, mode=args.mode)
    out = _output_dir(config, args.out_dir)
    _save_feature_container(out / "generated.npz", coords, feats, spec.shape)
    render_grid(_grids(feats, spec), out / "generated.png", cell_size=args.cell_size)
    print(f"wrote {out / 'generated.npz'} and {out / 'generated.png'}")
    return 0


def cmd_reconstruct(args) -> int:
    model, config, container = _load_model_and_data(args)
    _, test = _splits(config, container)
    clouds = test[: args.n]
    spec = GridSpec(container.grid_shape)
    preds = torch.stack([reconstruct(c, c.coords, model, mode=args.mode) for c in clouds])
    truth = torch.stack([c.features for c in clouds])
    out = _output_dir(config, args.out_dir)
    _save_feature_container(out / "reconstructed.npz", clouds[0].coords, preds, spec.shape)
    render_grid(_grids(truth, spec) + _grids(preds, spec), out / "reconstructed.png",
                layout=(2, len(clouds)), cell_size=args.cell_size)
    print(f"wrote {out / 'reconstructed.npz'} and {out / 'reconstructed.png'}")
    return 0


def cmd_superres(args) -> int:
    model, config, container = _load_model_and_data(args)
    _, test = _splits(config, container)
    clouds = test[: args.n]
    fine = GridSpec(container.grid_shape).scaled(args.scale)
    preds = torch.stack([super_resolve(c, args.scale, model, mode=args.mode) for c in clouds])
    out = _output_dir(config, args.out_dir)
    _save_feature_container(out / "superres.npz", fine.cell_centers(), preds, fine.shape)
    render_grid(_grids(preds, fine), out / "superres.png", cell_size=args.cell_size)
    print(f"wrote {out / 'superres.npz'} and {out / 'superres.png'}")
    return 0


def _observation_mask(cloud, pattern: str, frac: float, generator) -> torch.Tensor:
    if pattern == "half":
        return cloud.coords[:, 0] < 0
    if pattern == "patch":
        return (cloud.coords.abs().max(dim=1).values > frac)
    if pattern == "random":
        return torch.rand(cloud.num_points, generator=generator) >= frac
    raise ConfigError(f"unknown missingness pattern {pattern!r}")


def cmd_complete(args) -> int:
    model, config, container = _load_model_and_data(args)
    _, test = _splits(config, container)
    clouds = test[: args.n]
    spec = GridSpec(container.grid_shape)
    gen = make_generator(args.seed, "completion")
    shown, preds = [], []
    for cloud in clouds:
        mask = _observation_mask(cloud, args.pattern, args.frac, gen)
        if int(mask.sum()) < model.min_points:
            raise ValueError(
                f"pattern {args.pattern!r} leaves {int(mask.sum())} points, below "
                f"the encoder floor {model.min_points}"
            )
        observed = cloud.subset(mask.nonzero(as_tuple=True)[0])
        preds.append(complete(observed, cloud.coords, model, mode=args.mode))
        shown.append(cloud.features * mask.unsqueeze(-1))
    preds = torch.stack(preds)
    shown = torch.stack(shown)
    out = _output_dir(config, args.out_dir)
    _save_feature_container(out / "completed.npz", clouds[0].coords, preds, spec.shape)
    render_grid(_grids(shown, spec) + _grids(preds, spec), out / "completed.png",
                layout=(2, len(clouds)), cell_size=args.cell_size)
    print(f"wrote {out / 'completed.npz'} and {out / 'completed.png'}")
    return 0


def cmd_maps(args) -> int:
    model, config, container = _load_model_and_data(args)
    _, test = _splits(config, container)
    clouds = test[: args.n]
    spec = GridSpec(container.grid_shape)
    k = model.num_components
    entropies = torch.stack([entropy_map(c, model) for c in clouds])
    segments = torch.stack([segmentation_map(c, model) for c in clouds])
    out = _output_dir(config, args.out_dir)
    _save_feature_container(out / "entropy.npz", clouds[0].coords,
                            entropies.unsqueeze(-1), spec.shape,
                            feature_range=(0.0, max(float(np.log(max(k, 2))), 1e-12)))
    _save_feature_container(out / "segmentation.npz", clouds[0].coords,
                            segments.unsqueeze(-1).double(), spec.shape,
                            feature_range=(1.0, float(k)))
    render_grid([entropies[i].reshape(spec.shape).numpy() for i in range(len(clouds))],
                out / "entropy.png", kind="entropy", num_components=k,
                cell_size=args.cell_size)
    render_grid([segments[i].reshape(spec.shape).numpy() for i in range(len(clouds))],
                out / "segmentation.png", kind="segmentation", num_components=k,
                cell_size=args.cell_size)
    print(f"wrote entropy/segmentation maps under {out}")
    return 0


def cmd_eval(args) -> int:
    model, config, container = _load_model_and_data(args)
    _, test = _splits(config, container)
    report = evaluate_testset(test, model, task=args.task, config=config)
    out = _output_dir(config, args.out_dir)
    path = out / f"report_{args.task}.txt"
    report.write(path)
    print(f"{args.task}: mean PSNR {report.mean:.3f} dB over {len(report.psnr_values)} "
          f"samples; report at {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funcmix",
        description="Mixture-of-function-generators model: training and inference tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset container")
    p.add_argument("--name", required=True, choices=SYNTHESIZERS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--grid", type=int, nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", default=[],
                   metavar="SECTION.KEY=VALUE")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_train)

    def task_parser(name, help_text, scale=False, pattern=False):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--ckpt", required=True)
        q.add_argument("--n", type=int, default=8)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--mode", choices=("expectation", "sample"), default="expectation")
        q.add_argument("--out-dir", default=None)
        q.add_argument("--cell-size", type=int, default=1)
        if scale:
            q.add_argument("--scale", type=int, default=2)
        if pattern:
            q.add_argument("--pattern", choices=("half", "patch", "random"), default="half")
            q.add_argument("--frac", type=float, default=0.5)
        return q

    task_parser("generate", "sample the prior and decode", scale=True).set_defaults(func=cmd_generate)
    task_parser("reconstruct", "encode and decode test samples").set_defaults(func=cmd_reconstruct)
    task_parser("superres", "reconstruct on a finer grid", scale=True).set_defaults(func=cmd_superres)
    task_parser("complete", "infer features from partial clouds", pattern=True).set_defaults(func=cmd_complete)
    task_parser("maps", "component entropy and segmentation maps").set_defaults(func=cmd_maps)

    p = sub.add_parser("eval", help="PSNR report over the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", choices=("reconstruct", "complete"), default="reconstruct")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    flat = " ".join(str(message).split())
    print(f"error: {kind}: {flat}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), 2)
    except FileNotFoundError as exc:
        return _fail("missing-file", str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - single-line CLI error contract
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
