"""Model assembly, training loop, evaluation, checkpoints and trace export."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import read_container, write_container
from .config import RunConfig, from_dict
from .dataset import CLASSES, FeatureStore, Manifest, build_manifest, make_batches, steps_per_epoch
from .errors import CheckpointError, ConfigError, DataError, TrainingError
from .features import FeatureConfig, wav_features
from .layers import NeuronInit, Readout, SpikingConv2d, SpikingNet, count_parameters, receptive_field
from .loss import cross_entropy, spike_regularizer, total_loss
from .optim import RAdam, clip_gradients, lr_at
from .tensor import Tensor, no_grad

log = logging.getLogger("spikekws.train")

FORMAT_TAG = "spikekws-checkpoint"


def build_model(cfg: RunConfig, rng=None) -> SpikingNet:
    m = cfg.model
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if m.mode not in ("LIF", "NLIF"):
        raise ConfigError(f"model.mode must be LIF or NLIF, got {m.mode!r}")
    init = NeuronInit(cfg.init.threshold_mean, cfg.init.threshold_std,
                      cfg.init.beta_mean, cfg.init.beta_std)
    if cfg.init.weight != "uniform_fan_in":
        raise ConfigError(f"unknown weight init {cfg.init.weight!r}")
    T, F = m.input_shape
    convs = []
    c_in = m.in_channels
    for i, spec in enumerate(m.layers):
        convs.append(SpikingConv2d(
            c_in, spec.channels, tuple(spec.kernel), tuple(spec.dilation), mode=m.mode,
            surrogate_a=m.surrogate_a, eps=m.eps, causal=m.causal, reset_detach=m.reset_detach,
            stop_grad_norm=m.stop_grad_norm, freeze_beta=m.freeze_beta,
            freeze_threshold=m.freeze_b, init=init, rng=rng, input_shape=(T, F),
            name=f"conv{i + 1}"))
        c_in = spec.channels
    readout = Readout(c_in * F, m.n_classes, variant=m.readout, rng=rng, init=init,
                      freeze_beta=m.freeze_beta)
    return SpikingNet(convs, readout)


def model_summary(cfg: RunConfig, model: SpikingNet) -> Dict:
    return {
        "parameters": count_parameters(model),
        "receptive_field": receptive_field([s.as_tuple() for s in cfg.model.layers]),
    }


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: SpikingNet, optimizer: Optional[RAdam], meta: Dict, path) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    meta = dict(meta)
    meta["format"] = FORMAT_TAG
    if optimizer is not None:
        tensors.update(optimizer.state_dict())
        meta["optimizer_step"] = optimizer.t
    write_container(path, tensors, meta)


def load_checkpoint(path):
    """Return ``(tensors, meta)`` after validating the container."""
    tensors, meta = read_container(path)
    if meta.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a model checkpoint")
    return tensors, meta


def load_into(model: SpikingNet, path, optimizer: Optional[RAdam] = None) -> Dict:
    tensors, meta = load_checkpoint(path)
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(state)
    if optimizer is not None:
        optimizer.load_state_dict(tensors, meta.get("optimizer_step", 0))
    return meta


def restore(path, with_optimizer: bool = False):
    """Rebuild ``(config, model[, optimizer], meta)`` from a checkpoint."""
    tensors, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: checkpoint carries no config")
    cfg = from_dict(meta["config"])
    model = build_model(cfg)
    opt = RAdam(model.named_parameters(), cfg.optim) if with_optimizer else None
    meta = load_into(model, path, opt)
    if with_optimizer:
        return cfg, model, opt, meta
    return cfg, model, meta


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    n: int
    accuracy: float
    error_rate: float
    confusion: np.ndarray
    precision: List[Optional[float]]
    recall: List[Optional[float]]
    spike_rates: List[float]
    classes: Sequence[str] = CLASSES

    def to_dict(self) -> Dict:
        return {"n": self.n, "accuracy": self.accuracy, "error_rate": self.error_rate,
                "confusion": self.confusion.tolist(), "precision": self.precision,
                "recall": self.recall, "spike_rates": self.spike_rates,
                "classes": list(self.classes)}

    def format(self) -> str:
        fmt = lambda v: "n/a" if v is None else f"{100 * v:5.1f}"  # noqa: E731
        lines = [f"samples={self.n} accuracy={self.accuracy:.2f}% error={self.error_rate:.2f}%",
                 "spikes=[" + ",".join(f"{r:.2f}" for r in self.spike_rates) + "] (%)",
                 f"{'class':>8} {'prec':>6} {'recall':>6}"]
        for name, p, r in zip(self.classes, self.precision, self.recall):
            lines.append(f"{name:>8} {fmt(p):>6} {fmt(r):>6}")
        return "\n".join(lines)


def report_from_predictions(labels, preds, spike_rates, n_classes: int = 12,
                            classes=CLASSES) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    n = int(labels.size)
    correct = int(np.trace(conf))
    col, row = conf.sum(axis=0), conf.sum(axis=1)
    precision = [None if col[k] == 0 else float(conf[k, k] / col[k]) for k in range(n_classes)]
    recall = [None if row[k] == 0 else float(conf[k, k] / row[k]) for k in range(n_classes)]
    acc = 100.0 * correct / n if n else 0.0
    return EvalReport(n, acc, 100.0 - acc, conf, precision, recall,
                      [100.0 * float(r) for r in spike_rates], tuple(classes)[:n_classes])


def predict_batches(model: SpikingNet, batches):
    """Run inference; return ``(labels, predictions, per-layer spike rates)``."""
    labels, preds = [], []
    spike_sum = None
    elements = None
    with no_grad():
        for x, y in batches:
            out = model(Tensor(x))
            preds.append(np.argmax(out.logits.data, axis=1))
            labels.append(np.asarray(y))
            sums = np.array([np.sum(s.data, dtype=np.float64) for s in out.spikes])
            sizes = np.array([s.size for s in out.spikes], dtype=np.float64)
            spike_sum = sums if spike_sum is None else spike_sum + sums
            elements = sizes if elements is None else elements + sizes
    if not labels:
        raise DataError("nothing to evaluate")
    return np.concatenate(labels), np.concatenate(preds), spike_sum / elements


def evaluate(model: SpikingNet, manifest: Manifest, split: str = "test", store=None,
             batch_size: int = 128) -> EvalReport:
    batches = make_batches(manifest, split, batch_size, store=store)
    labels, preds, rates = predict_batches(model, batches)
    return report_from_predictions(labels, preds, rates, model.readout.weight.shape[0])


def evaluate_checkpoint(path, split: str = "test", manifest=None, root=None) -> EvalReport:
    cfg, model, _ = restore(path)
    manifest = manifest or _manifest_for(cfg, root)
    store = FeatureStore(manifest.root, cache_dir=cfg.data.cache_dir)
    return evaluate(model, manifest, split, store, cfg.data.eval_batch_size)


def _manifest_for(cfg: RunConfig, root=None) -> Manifest:
    root = root or cfg.data.root
    if cfg.data.manifest:
        return Manifest.load(cfg.data.manifest, root)
    if root is None:
        raise ConfigError("need data.root or data.manifest")
    return build_manifest(root, seed=cfg.seed)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    history: List[Dict] = field(default_factory=list)
    model: Optional[SpikingNet] = None


def _subset(manifest: Manifest, limit: Optional[int], seed: int = 0) -> Manifest:
    """Keep a seeded random ``limit``-entry sample of the train split."""
    train = manifest.split("train")
    if not limit or limit >= len(train):
        return manifest
    keep = np.sort(np.random.default_rng([seed, limit]).choice(len(train), limit, replace=False))
    train = [train[i] for i in keep]
    others = [e for e in manifest.entries if e.split != "train"]
    return Manifest(manifest.root, train + others)


def train_step(model: SpikingNet, opt: RAdam, cfg: RunConfig, x, y, lr: float):
    """One forward/backward/update; returns ``(loss, ce, spike rates, n correct)``."""
    opt.zero_grad()
    out = model(Tensor(x))
    ce = cross_entropy(out.logits, y)
    regs = [spike_regularizer(s) for s in out.spikes] if cfg.loss.reg_enabled else []
    loss = total_loss(ce, regs, cfg.loss)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value}")
    loss.backward()
    clip_gradients([p for _, p in opt.params], cfg.optim.grad_clip)
    opt.step(lr)
    correct = int(np.sum(np.argmax(out.logits.data, axis=1) == np.asarray(y)))
    return value, ce.item(), out.spike_rates(), correct


def train(cfg: RunConfig, manifest: Optional[Manifest] = None, store=None) -> TrainResult:
    """Train with the configured recipe; writes ``best.ckpt`` and ``last.ckpt``.

    Validation error picks the best checkpoint. Logs one line per
    ``train.log_every`` steps: ``epoch= step= loss= lr= spikes=[...]``.
    """
    manifest = _subset(manifest or _manifest_for(cfg), cfg.data.limit_train, cfg.seed)
    store = store or FeatureStore(manifest.root, cache_dir=cfg.data.cache_dir)
    out_dir = Path(cfg.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path, last_path = out_dir / "best.ckpt", out_dir / "last.ckpt"

    model = build_model(cfg)
    opt = RAdam(model.named_parameters(), cfg.optim)
    n_train = len(manifest.split("train"))
    if n_train == 0:
        raise DataError("train split is empty")
    spe = cfg.train.steps_per_epoch or steps_per_epoch(n_train, cfg.data.batch_size)
    summary = model_summary(cfg, model)
    log.info("model parameters=%d receptive_field=%s steps_per_epoch=%d",
             summary["parameters"], summary["receptive_field"], spe)

    history = []
    best_err = None
    eval_split = cfg.train.eval_split
    has_eval = bool(manifest.split(eval_split))
    for epoch in range(cfg.train.epochs):
        t0 = time.time()
        losses, rates, correct, seen = [], [], 0, 0
        batches = make_batches(manifest, "train", cfg.data.batch_size, seed=cfg.seed,
                               epoch=epoch, store=store, steps=spe)
        for step, (x, y) in enumerate(batches):
            lr = lr_at(epoch, cfg.optim, step, spe)
            try:
                loss, _, r, c = train_step(model, opt, cfg, x, y, lr)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch} batch {step}: {exc}") from None
            losses.append(loss)
            rates.append(r)
            correct += c
            seen += len(y)
            if cfg.train.log_every and step % cfg.train.log_every == 0:
                log.info("epoch=%d step=%d loss=%.6f lr=%.6g spikes=[%s]", epoch, step, loss, lr,
                         ",".join(f"{v:.4f}" for v in r))
        record = {"epoch": epoch, "loss": float(np.mean(losses)),
                  "train_accuracy": 100.0 * correct / seen,
                  "spike_rates": np.mean(rates, axis=0).tolist(), "seconds": time.time() - t0}
        meta = {"epoch": epoch, "config": cfg.to_dict(), "config_hash": cfg.hash()}
        if has_eval:
            rep = evaluate(model, manifest, eval_split, store, cfg.data.eval_batch_size)
            record["valid_error"] = rep.error_rate
            record["valid_spike_rates"] = rep.spike_rates
            meta["valid_error"] = rep.error_rate
            if best_err is None or rep.error_rate < best_err:
                best_err = rep.error_rate
                save_checkpoint(model, opt, meta, best_path)
        save_checkpoint(model, opt, meta, last_path)
        if not has_eval:
            save_checkpoint(model, opt, meta, best_path)
        history.append(record)
        log.info("epoch=%d done loss=%.6f train_acc=%.2f%% valid_err=%s", epoch, record["loss"],
                 record["train_accuracy"], f"{record.get('valid_error', float('nan')):.2f}%")
    return TrainResult(best_path, last_path, history, model)


# ---------------------------------------------------------------------------
# traces for plotting


def trace(model: SpikingNet, fmap: np.ndarray, channel: int = 0) -> Dict[str, np.ndarray]:
    """Input map, one first-layer channel's raster and per-step scores for one utterance."""
    with no_grad():
        out = model(Tensor(fmap[None]))
    return {"features": fmap[0],
            "spikes": out.spikes[0].data[0, channel],
            "scores": out.step_logits.data[0],
            "rates": np.array(out.spike_rates())}


def emit_trace(checkpoint, wav_path, out_dir, channel: int = 0,
               feature_cfg: FeatureConfig = FeatureConfig()) -> Dict[str, Path]:
    """Write features, a first-layer spike raster and the score curves as CSV."""
    _, model, _ = restore(checkpoint)
    if not 0 <= channel < model.convs[0].out_channels:
        raise ConfigError(f"channel {channel} out of range")
    tr = trace(model, wav_features(wav_path, feature_cfg), channel)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"features": out_dir / "features.csv",
             "spikes": out_dir / f"spikes_layer1_ch{channel}.csv",
             "scores": out_dir / "scores.csv"}
    np.savetxt(paths["features"], tr["features"], delimiter=",", fmt="%.6g")
    np.savetxt(paths["spikes"], tr["spikes"], delimiter=",", fmt="%d")
    # columns follow CLASSES order
    np.savetxt(paths["scores"], tr["scores"], delimiter=",", fmt="%.6g")
    return paths
