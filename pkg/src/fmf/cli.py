"""Command-line front end.

Usage::

    fmf gen|shuffle|buffer|train|predict|eval [config_file] [key=value ...]

Configuration comes from an optional `key=value`-per-line file (with
`#` comments) plus command-line overrides, overrides winning. Unknown
keys are rejected. Exit statuses: 0 success, 1 usage/config error,
2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from . import features, metrics, pipeline, trainer
from .core import LossConfig, ModelDims
from .errors import (
    ConfigError,
    DivergenceError,
    FmfError,
    InvalidLabelError,
)

TASKS = ("gen", "shuffle", "buffer", "train", "predict", "eval")

# key -> parser for its value
_KEY_TYPES = {
    "task": str,
    "input": str,
    "output": str,
    "buffer": str,
    "model_in": str,
    "model_out": str,
    "predictions": str,
    "metric": str,
    "mode": str,
    "ratings": str,
    "taxonomy": str,
    "loss": str,
    "eta": float,
    "lam_p": float,
    "lam_q": float,
    "lam_bg": float,
    "lam_bu": float,
    "lam_bi": float,
    "base_score": float,
    "init_sigma": float,
    "num_factor": int,
    "epochs": int,
    "seed": int,
    "feedback_start": int,
    "feedback_end": int,
    "queue_capacity": int,
    "num_global": int,
    "num_user": int,
    "num_item": int,
    "time_start": int,
    "time_end": int,
    "min_support": int,
}

GEN_MODES = ("basic", "user_mean", "user_item_mean", "pairwise", "temporal",
             "neighborhood", "hierarchical", "feedback_implicit",
             "feedback_explicit")


@dataclass
class RunConfig:
    values: dict

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r}")
        return self.values[key]


def _parse_pair(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def _coerce(key: str, raw: str):
    if key not in _KEY_TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return _KEY_TYPES[key](raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    values: dict = {}
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as handle:
                for lineno, line in enumerate(handle, start=1):
                    stripped = line.split("#", 1)[0].strip()
                    if not stripped:
                        continue
                    try:
                        key, raw = _parse_pair(stripped)
                        values[key] = _coerce(key, raw)
                    except ConfigError as exc:
                        raise ConfigError(f"{config_path}:{lineno}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    for item in overrides:
        key, raw = _parse_pair(item)
        values[key] = _coerce(key, raw)
    return RunConfig(values)


def _feedback_range(cfg: RunConfig) -> tuple[int, int] | None:
    start = cfg.get("feedback_start")
    end = cfg.get("feedback_end")
    if start is None and end is None:
        return None
    if start is None or end is None:
        raise ConfigError("feedback_start and feedback_end must be set together")
    if not 0 <= start <= end:
        raise ConfigError(f"invalid feedback range [{start}, {end})")
    return (start, end)


def _train_config(cfg: RunConfig) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(
            eta=cfg.get("eta", 0.01),
            lam_factor_user=cfg.get("lam_p", 0.0),
            lam_factor_item=cfg.get("lam_q", 0.0),
            lam_bias_global=cfg.get("lam_bg", 0.0),
            lam_bias_user=cfg.get("lam_bu", 0.0),
            lam_bias_item=cfg.get("lam_bi", 0.0),
            num_factor=cfg.get("num_factor", 0),
            epochs=cfg.get("epochs", 1),
            seed=cfg.get("seed", 0),
            init_sigma=cfg.get("init_sigma", 0.01),
            feedback_range=_feedback_range(cfg),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _loss(cfg: RunConfig) -> LossConfig:
    name = cfg.get("loss", "l2")
    try:
        return LossConfig.from_string(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_shuffle(cfg: RunConfig) -> int:
    pipeline.shuffle_file(cfg.require("input"), cfg.require("output"),
                          cfg.get("seed", 0), _feedback_range(cfg))
    return 0


def cmd_buffer(cfg: RunConfig) -> int:
    dims = None
    explicit = [cfg.get("num_global"), cfg.get("num_user"), cfg.get("num_item")]
    if any(v is not None for v in explicit):
        if any(v is None for v in explicit):
            raise ConfigError(
                "num_global, num_user, num_item must be given together")
        dims = ModelDims(explicit[0], explicit[1], explicit[2], 0)
    info = pipeline.make_buffer(cfg.require("input"), cfg.require("output"), dims)
    print(f"buffered {info.count} instances "
          f"dims {info.num_global} {info.num_user} {info.num_item} "
          f"label_mean {info.label_mean:.10g}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    buffer_path = cfg.require("buffer")
    model_out = cfg.require("model_out")
    tcfg = _train_config(cfg)
    loss = _loss(cfg)
    capacity = cfg.get("queue_capacity", 4096)

    info = pipeline.read_buffer_header(buffer_path)
    dims = info.dims(tcfg.num_factor)
    if tcfg.feedback_range is not None and tcfg.feedback_range[1] > dims.num_user:
        raise ConfigError(
            f"feedback range {tcfg.feedback_range} exceeds user dimension "
            f"{dims.num_user}")
    model = trainer.init_model(dims, tcfg)
    model.base_score = cfg.get("base_score", info.label_mean)

    if tcfg.epochs == 0:
        pipeline.save_model(model, model_out, loss)
        return 0
    for epoch in range(1, tcfg.epochs + 1):
        stream = pipeline.prefetch(pipeline.read_buffer(buffer_path), capacity)
        report = trainer.train_epoch(model, stream, tcfg, loss, epoch=epoch)
        print(f"epoch {epoch} loss {report.loss_mean:.17g} "
              f"seconds {report.seconds:.3f}")
        pipeline.save_model(model, f"{model_out}.e{epoch}", loss)
        pipeline.save_model(model, model_out, loss)
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    model, loss = pipeline.load_model(cfg.require("model_in"))
    buffer_path = cfg.require("buffer")
    info = pipeline.read_buffer_header(buffer_path)
    dims = model.dims
    if (info.num_global > dims.num_global or info.num_user > dims.num_user
            or info.num_item > dims.num_item):
        raise FmfError(
            f"buffer dims ({info.num_global}, {info.num_user}, {info.num_item}) "
            f"exceed model dims ({dims.num_global}, {dims.num_user}, "
            f"{dims.num_item})")
    from .core import predict as predict_one
    with open(cfg.require("output"), "w", encoding="utf-8") as out:
        for instance in pipeline.read_buffer(buffer_path):
            out.write(f"{predict_one(model, instance, loss).activated:.10g}\n")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    metric = cfg.require("metric")
    pred_path = cfg.require("predictions")
    with open(pred_path, "r", encoding="utf-8") as handle:
        predictions = [float(line) for line in handle if line.strip()]
    try:
        if metric == "pairacc":
            value = metrics.eval_pairacc(predictions)
            count = len(predictions)
        elif metric in ("rmse", "logloss"):
            labels = [inst.label
                      for inst in pipeline.read_buffer(cfg.require("buffer"))]
            fn = metrics.eval_rmse if metric == "rmse" else metrics.eval_logloss
            value = fn(predictions, labels)
            count = len(labels)
        else:
            raise ConfigError(f"unknown metric {metric!r}")
    except ValueError as exc:
        raise FmfError(str(exc)) from None
    print(f"{metric} {value:.10g} {count}")
    return 0


def _gen_instances(cfg: RunConfig, records, mode):
    def dim(key, fallback):
        v = cfg.get(key)
        return v if v is not None else fallback
    num_user = dim("num_user", 1 + max((r.user for r in records), default=-1))
    num_item = dim("num_item", 1 + max((r.item for r in records), default=-1))

    if mode == "basic":
        return [features.build_basic(r, num_user, num_item) for r in records]
    if mode in ("user_mean", "user_item_mean"):
        variant = features.BaselineVariant(mode)
        print("note: train with num_factor=0 (pure linear model)",
              file=sys.stderr)
        return [features.build_linear_baselines(r, variant, num_user, num_item)
                for r in records]
    if mode == "pairwise":
        by_user: dict[int, list] = {}
        for r in records:
            by_user.setdefault(r.user, []).append(r)
        out = []
        for user, recs in by_user.items():
            for a in recs:
                for b in recs:
                    if a.item != b.item and a.rating > b.rating:
                        out.append(features.build_pairwise(user, a.item, b.item))
        print("note: train with loss=logistic and a high lam_bu "
              "(suppresses the stray user bias)", file=sys.stderr)
        return out
    if mode == "temporal":
        stamps = [r.timestamp for r in records if r.timestamp is not None]
        if not stamps:
            raise FmfError("temporal mode needs timestamps in the ratings file")
        spec = features.TemporalSpec(
            start=dim("time_start", min(stamps)),
            end=dim("time_end", max(stamps)),
            num_user=num_user)
        return [features.build_temporal(r, spec) for r in records]
    if mode == "neighborhood":
        spec = features.NeighborhoodSpec.from_records(
            records, cfg.get("min_support", 2))
        print(f"note: encoding uses {spec.num_slots} item-pair slots "
              f"(global features)", file=sys.stderr)
        return [features.build_neighborhood(r, spec) for r in records]
    if mode == "hierarchical":
        taxonomy = features.read_taxonomy(cfg.require("taxonomy"))
        return [features.build_hierarchical(r, taxonomy, num_item)
                for r in records]
    if mode in ("feedback_implicit", "feedback_explicit"):
        start = cfg.get("feedback_start")
        out = features.build_feedback(
            records, explicit=(mode == "feedback_explicit"),
            num_user=num_user, num_item=num_item, feedback_start=start)
        fb_start = start if start is not None else num_user
        print(f"note: train with feedback_start={fb_start} "
              f"feedback_end={fb_start + num_item}, and shuffle with the "
              f"same keys to keep user groups intact", file=sys.stderr)
        return out
    raise ConfigError(f"unknown gen mode {mode!r} "
                      f"(expected one of: {', '.join(GEN_MODES)})")


def cmd_gen(cfg: RunConfig) -> int:
    mode = cfg.require("mode")
    records = features.read_ratings(cfg.require("ratings"))
    instances = _gen_instances(cfg, records, mode)
    with open(cfg.require("output"), "w", encoding="utf-8") as out:
        for instance in instances:
            out.write(pipeline.format_instance(instance) + "\n")
    print(f"wrote {len(instances)} instances", file=sys.stderr)
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "shuffle": cmd_shuffle,
    "buffer": cmd_buffer,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def run(argv: list[str]) -> int:
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip(), file=sys.stderr)
        return 0 if argv else 1
    task = argv[0]
    if task not in _COMMANDS:
        print(f"error: unknown task {task!r} (expected one of: "
              f"{', '.join(TASKS)})", file=sys.stderr)
        return 1
    rest = argv[1:]
    config_path = None
    if rest and "=" not in rest[0]:
        config_path = rest[0]
        rest = rest[1:]
    try:
        cfg = load_config(config_path, rest)
        declared = cfg.get("task")
        if declared is not None and declared != task:
            raise ConfigError(
                f"config declares task={declared!r} but {task!r} was invoked")
        return _COMMANDS[task](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (FmfError, InvalidLabelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
