"""Command-line driver.

Commands: prepare, train, eval, predict, reprogram, gradcheck, dataset-stats.
Every setting is a flat key=value: read from ``--config FILE`` (one pair per
line, ``#`` comments), overridden by ``--key value`` flags. Unknown keys are
rejected. ``--deterministic`` pins the numeric libraries to one thread (set
before they load, which is why the heavy imports live inside the handlers).

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (non-finite loss or a failed gradient check).
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

COMMANDS = ("prepare", "train", "eval", "predict", "reprogram", "gradcheck", "dataset-stats")

USAGE = """usage: floodseg COMMAND [--config FILE] [--deterministic] [--KEY VALUE ...]

commands:
  prepare        split a raw corpus 70/30 and write the augmented train set
  train          train a model on a prepared manifest
  eval           score a model on a manifest split
  predict        write a predicted mask for one image
  reprogram      train an input/output program around a frozen base model
  gradcheck      finite-difference check of every layer and loss
  dataset-stats  pair count and positive-pixel fraction of a raw corpus

run `floodseg COMMAND` with no further flags to see which keys it needs.
"""


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 1."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _parse_str_list(text: str) -> tuple:
    return tuple(part.strip() for part in text.split(",") if part.strip())


# key -> (parser, default). Paths default to None and are demanded per command.
KEYS = {
    "dataset_dir": (str, None),
    "out_dir": (str, None),
    "manifest": (str, None),
    "model": (str, None),
    "base_model": (str, None),
    "image": (str, None),
    "output": (str, None),
    "report": (str, None),
    "split": (str, "test"),
    "seed": (int, 0),
    "float_width": (int, 32),
    "input_size": (int, 256),
    "widths": (_parse_int_list, (16, 32, 64)),
    "variant": (str, "gac-unet"),
    "connectivity": (int, 4),
    "gat_out": (int, 0),
    "cheb_order": (int, 2),
    "cheb_out": (int, 0),
    "com": (_parse_bool, True),
    "out_channels": (int, 1),
    "loss": (str, "dice"),
    "lr": (float, 1e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "eps": (float, 1e-8),
    "epochs": (int, 10),
    "batch_size": (int, 4),
    "freeze": (_parse_str_list, ()),
    "early_stop_train_dice": (float, 0.0),
    "cache": (_parse_bool, True),
    "resize": (int, 512),
    "crop": (int, 256),
    "steps": (int, 100),
    "per_channel": (_parse_bool, False),
    "init_base": (_parse_bool, False),
    "base_channels": (int, 8),
    "pred_threshold": (float, 0.5),
    "deterministic": (_parse_bool, False),
}


def _read_config_file(path: str) -> dict:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise UsageError(f"config file not found: {path}")
    raw = {}
    for lineno, line in enumerate(cfg_path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        raw[key] = value
    return raw


def _resolve_config(args: list) -> dict:
    raw: dict = {}
    i = 0
    file_pairs: dict = {}
    flag_pairs: dict = {}
    while i < len(args):
        token = args[i]
        if token == "--deterministic":
            flag_pairs["deterministic"] = "true"
            i += 1
            continue
        if not token.startswith("--"):
            raise UsageError(f"unexpected argument {token!r}")
        key = token[2:]
        if i + 1 >= len(args):
            raise UsageError(f"flag --{key} needs a value")
        value = args[i + 1]
        i += 2
        if key == "config":
            file_pairs.update(_read_config_file(value))
        else:
            flag_pairs[key.replace("-", "_")] = value
    raw.update(file_pairs)
    raw.update(flag_pairs)

    config = {key: default for key, (_, default) in KEYS.items()}
    for key, text in raw.items():
        if key not in KEYS:
            raise UsageError(f"unknown configuration key {key!r}")
        parser, _ = KEYS[key]
        try:
            config[key] = parser(text)
        except UsageError:
            raise
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from exc
    if config["float_width"] not in (32, 64):
        raise UsageError(f"float_width must be 32 or 64, got {config['float_width']}")
    return config


def _require(config: dict, command: str, *keys: str):
    missing = [k for k in keys if not config[k]]
    if missing:
        raise UsageError(f"{command} needs --" + ", --".join(missing))


def _config_echo(config: dict) -> list:
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {key}={value}")
    return lines


def _build_spec(config: dict):
    from .model import ModelSpec
    return ModelSpec(input_size=config["input_size"], widths=config["widths"],
                     variant=config["variant"], connectivity=config["connectivity"],
                     gat_out=config["gat_out"], cheb_order=config["cheb_order"],
                     cheb_out=config["cheb_out"], com=config["com"],
                     out_channels=config["out_channels"], seed=config["seed"])


def _dtype(config: dict):
    import numpy as np
    return np.float64 if config["float_width"] == 64 else np.float32


# ---- command handlers -------------------------------------------------------


def cmd_prepare(config: dict) -> int:
    _require(config, "prepare", "dataset_dir", "out_dir")
    from .dataio import prepare_dataset
    result = prepare_dataset(config["dataset_dir"], config["out_dir"], config["seed"],
                             resize=config["resize"], crop=config["crop"])
    print(f"{result.train_count} train / {result.test_count} test, "
          f"{result.augmented_count} augmented train pairs")
    print(f"positive pixel fraction: {result.positive_fraction:.4f}")
    print(f"manifest: {result.manifest_path}")
    return EXIT_OK


def cmd_dataset_stats(config: dict) -> int:
    _require(config, "dataset-stats", "dataset_dir")
    from .dataio import dataset_stats
    count, fraction = dataset_stats(config["dataset_dir"])
    print(f"{count} image/mask pairs")
    print(f"positive pixel fraction: {fraction:.4f}")
    return EXIT_OK


def cmd_train(config: dict) -> int:
    _require(config, "train", "manifest", "out_dir")
    from .dataio import read_manifest
    from .model import build_model, init_params
    from .train import train_model

    entries = read_manifest(config["manifest"])
    train_entries = [e for e in entries if e.split == "train"]
    val_entries = [e for e in entries if e.split == "test"]
    spec = _build_spec(config)
    net = init_params(build_model(spec, _dtype(config)), spec.seed)

    out_dir = Path(config["out_dir"])
    os.makedirs(out_dir, exist_ok=True)
    log_path = out_dir / "train.log"
    log_lines = _config_echo(config)

    result = train_model(net, train_entries, val_entries, loss=config["loss"],
                         epochs=config["epochs"], batch_size=config["batch_size"],
                         lr=config["lr"], beta1=config["beta1"], beta2=config["beta2"],
                         eps=config["eps"], seed=spec.seed, freeze=config["freeze"],
                         early_stop_train_dice=config["early_stop_train_dice"],
                         cache=config["cache"],
                         on_epoch=lambda row: print(row.format()))
    log_lines.extend(row.format() for row in result.rows)
    log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    model_path = out_dir / "model.gacm"
    model_path.write_bytes(result.model_bytes)
    kept = f"epoch {result.best_epoch}" if result.best_epoch else "final state"
    print(f"model: {model_path} ({kept})")
    print(f"log: {log_path}")
    return EXIT_OK


def _load_pairs(entries, limit_split: str):
    from .dataio import ImagePair, binarize_mask, load_image, load_mask
    pairs = []
    for e in entries:
        if limit_split != "all" and e.split != limit_split:
            continue
        stem = Path(e.image_path).stem
        pairs.append(ImagePair(load_image(e.image_path),
                               binarize_mask(load_mask(e.mask_path)), stem))
    return pairs


def cmd_eval(config: dict) -> int:
    _require(config, "eval", "model", "manifest")
    from .dataio import DataError, read_manifest, resize_bilinear
    from .metrics import evaluate
    from .model import load_model

    net = load_model(config["model"])
    pairs = _load_pairs(read_manifest(config["manifest"]), config["split"])
    if not pairs:
        raise DataError(f"manifest has no {config['split']!r} entries")
    size = net.spec.input_size

    def predict(image):
        prob = net.predict_proba(resize_bilinear(image, size, size))
        return resize_bilinear(prob, image.shape[0], image.shape[1])

    report = evaluate(predict, pairs, config["pred_threshold"])
    text = str(report)
    print(text)
    if config["report"]:
        Path(config["report"]).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_predict(config: dict) -> int:
    _require(config, "predict", "model", "image", "output")
    from .dataio import load_image, resize_bilinear, save_mask
    from .model import load_model

    net = load_model(config["model"])
    image = load_image(config["image"])
    size = net.spec.input_size
    prob = net.predict_proba(resize_bilinear(image, size, size))
    prob = resize_bilinear(prob, image.shape[0], image.shape[1])
    save_mask(config["output"], (prob > config["pred_threshold"]).astype("float32"))
    print(f"mask: {config['output']}")
    return EXIT_OK


def cmd_reprogram(config: dict) -> int:
    _require(config, "reprogram", "base_model", "manifest", "out_dir")
    from .dataio import DataError, read_manifest
    from .model import load_model, model_checksum, save_model
    from .reprogram import (ReprogramWrapper, dataset_loss, make_pretrained_base,
                            reprogram_train, save_wrapper)

    base_path = Path(config["base_model"])
    if config["init_base"] and not base_path.is_file():
        base = make_pretrained_base(c_old=config["base_channels"],
                                    size=config["input_size"], seed=config["seed"])
        save_model(base, base_path)
        print(f"pretrained base: {base_path}")
    if not base_path.is_file():
        raise DataError(f"base model not found: {base_path}")
    base = load_model(base_path)

    pairs = _load_pairs(read_manifest(config["manifest"]), "train")
    if not pairs:
        raise DataError("manifest has no train entries")

    wrapper = ReprogramWrapper(base, per_channel=config["per_channel"], seed=config["seed"])
    print(f"frozen base checksum: {wrapper.base_checksum}")
    initial_loss = dataset_loss(wrapper, pairs, config["loss"])
    losses = reprogram_train(wrapper, pairs, config["steps"], loss=config["loss"],
                             lr=config["lr"], beta1=config["beta1"], beta2=config["beta2"],
                             eps=config["eps"], batch_size=config["batch_size"],
                             seed=config["seed"])
    final_loss = dataset_loss(wrapper, pairs, config["loss"])
    print(f"frozen base checksum: {model_checksum(base)}")

    out_dir = Path(config["out_dir"])
    os.makedirs(out_dir, exist_ok=True)
    wrapper_path = out_dir / "wrapper.gacm"
    save_wrapper(wrapper, wrapper_path)
    log_lines = _config_echo(config) + [f"{i}\t{v:.6f}" for i, v in enumerate(losses)]
    (out_dir / "reprogram.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(f"loss: {initial_loss:.6f} -> {final_loss:.6f} over {len(losses)} steps")
    print(f"wrapper: {wrapper_path}")
    return EXIT_OK


def cmd_gradcheck(config: dict) -> int:
    from .checks import run_gradient_suite
    results = run_gradient_suite(seed=config["seed"])
    width = max(len(r.name) for r in results)
    failed = False
    for r in results:
        status = "pass" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  {r.max_error:.3e}  (tolerance {r.tolerance:.0e})  {status}")
        failed = failed or not r.ok
    if failed:
        print("gradient check FAILED")
        return EXIT_NUMERIC
    print("all gradient checks passed")
    return EXIT_OK


HANDLERS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "reprogram": cmd_reprogram,
    "gradcheck": cmd_gradcheck,
    "dataset-stats": cmd_dataset_stats,
}


def _set_single_threaded():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, "1")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(USAGE, end="")
        return EXIT_OK if argv else EXIT_USAGE
    command, rest = argv[0], argv[1:]
    if command not in HANDLERS:
        print(f"unknown command {command!r}", file=sys.stderr)
        print(USAGE, end="", file=sys.stderr)
        return EXIT_USAGE

    try:
        config = _resolve_config(rest)
        if config["deterministic"]:
            _set_single_threaded()
        from .dataio import DataError
        from .model import ModelFormatError, SpecError
        from .reprogram import FrozenBaseError
        from .tensor import GradCheckFailure, ShapeError
        from .train import NumericFailure
        try:
            return HANDLERS[command](config)
        except (UsageError, SpecError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (DataError, ModelFormatError, FileNotFoundError, ShapeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        except (NumericFailure, GradCheckFailure, FrozenBaseError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
