"""Training procedure: the critic/generator update schedule, target-label
sampling, loss logging in a fixed parseable format, binary checkpoints
with bitwise-exact resume, and the identity-level train/test split.

Every source of randomness is derived from the run seed through separate
named streams, so a (seed, config, dataset) triple fully determines the
final parameters, checkpoints, and sample sheets.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from . import imaging
from . import losses
from .networks import DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator
from .optim import Adam

CHECKPOINT_MAGIC = b"SGDK0001"
LABEL_MODES = ("permute", "uniform")


class NonFiniteLossError(ValueError):
    """A loss or gradient stopped being a real number."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    n_critic: int = 5
    total_iterations: int = 20000
    seed: int = 0
    lambda_gp: float = 10.0
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0
    g_lr: float = 1e-4
    d_lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    image_size: int = 64
    conv_dim: int = 64
    repeat_num: int = 6
    log_every: int = 10
    checkpoint_every: int = 1000
    sample_every: int = 1000
    label_mode: str = "permute"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_critic < 1:
            raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.total_iterations < 1:
            raise ValueError(f"total_iterations must be >= 1, got {self.total_iterations}")
        for name in ("log_every", "checkpoint_every", "sample_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}, got {self.label_mode!r}")

    def weights(self):
        return losses.LossWeights(
            lambda_gp=self.lambda_gp, lambda_cls=self.lambda_cls, lambda_rec=self.lambda_rec
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_networks(config: TrainConfig):
    """Construct the generator/discriminator pair a config describes,
    with deterministic, distinct initializations."""
    c_dim = len(ds.EXPRESSION_NAMES)
    g_cfg = GeneratorConfig(conv_dim=config.conv_dim, c_dim=c_dim, repeat_num=config.repeat_num)
    d_cfg = DiscriminatorConfig(
        image_size=config.image_size, conv_dim=config.conv_dim, c_dim=c_dim, repeat_num=config.repeat_num
    )
    g = build_generator(g_cfg, seed=config.seed)
    d = build_discriminator(d_cfg, seed=config.seed + 1)
    return g, d


def one_hot(labels, domain_count):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, domain_count))
    out[np.arange(labels.size), labels] = 1.0
    return out


def sample_target_labels(labels, rng, mode="permute", domain_count=7):
    """Draw target domains for a batch: either a uniformly random
    permutation of the batch's own labels (preserves the batch's label
    balance) or i.i.d. uniform over all domains."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError(f"labels must be a 1-D index array, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= domain_count):
        raise ValueError(f"label indices must lie in [0, {domain_count})")
    if mode == "permute":
        return rng.permutation(labels)
    if mode == "uniform":
        return rng.integers(0, domain_count, size=labels.size, dtype=np.int64)
    raise ValueError(f"unknown label mode {mode!r}")


class EpochSampler:
    """Deterministic batch feeder: every epoch reshuffles the record
    indices with a seed derived from (seed, epoch), and only full batches
    are ever yielded (the epoch tail is dropped)."""

    def __init__(self, n_records, batch_size, seed):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if n_records < batch_size:
            raise ValueError(f"dataset of {n_records} records cannot fill a batch of {batch_size}")
        self.n_records = n_records
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self.pos = 0
        self._order = self._shuffled(0)

    def _shuffled(self, epoch):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=(0, epoch)))
        )
        return rng.permutation(self.n_records)

    def next_batch(self):
        if self.pos + self.batch_size > self.n_records:
            self.epoch += 1
            self.pos = 0
            self._order = self._shuffled(self.epoch)
        out = self._order[self.pos : self.pos + self.batch_size].copy()
        self.pos += self.batch_size
        return out

    def state(self):
        return {"epoch": self.epoch, "pos": self.pos}

    def restore(self, state):
        self.epoch = int(state["epoch"])
        self.pos = int(state["pos"])
        self._order = self._shuffled(self.epoch)


def _check_image_range(batch):
    arr = batch.data if isinstance(batch, ad.Tensor) else np.asarray(batch)
    if arr.size and float(np.max(np.abs(arr))) > 1.0 + 1e-9:
        raise ValueError("batch images must lie within [-1, 1]")


def _finite_or_raise(report):
    try:
        return report.ensure_finite()
    except ValueError as e:
        raise NonFiniteLossError(str(e)) from e


def _apply_update(total, net, opt):
    """Backpropagate and step, mapping non-finite gradients to the same
    abort path as non-finite losses."""
    try:
        opt.step(ad.grad(total, net.parameters()))
    except ValueError as e:
        if "non-finite" in str(e):
            raise NonFiniteLossError(str(e)) from e
        raise


def train_step_d(batch, labels, g, d, weights, opt_d, rng, label_mode="permute"):
    """One critic update. Translated images are produced off-tape so the
    step can only move the critic; returns the populated loss report."""
    _check_image_range(batch)
    x = batch if isinstance(batch, ad.Tensor) else ad.Tensor(batch)
    c_dim = g.cfg.c_dim
    targets = sample_target_labels(labels, rng, mode=label_mode, domain_count=c_dim)
    with ad.no_grad():
        x_fake = g.forward(x, one_hot(targets, c_dim))
    x_fake = x_fake.detach()

    total, report = losses.adv_loss_d(d, x, x_fake, weights, rng)
    _, cls_logits = d.forward(x)
    cls = losses.cls_loss(cls_logits, labels)
    total = total + weights.lambda_cls * cls
    report.d_loss_cls = cls.item()
    _finite_or_raise(report)
    _apply_update(total, d, opt_d)
    return report


def train_step_g(batch, labels, g, d, weights, opt_g, rng, label_mode="permute"):
    """One generator update: adversarial term on translated images,
    domain classification toward the target labels, and cycle
    reconstruction back to the original domain."""
    _check_image_range(batch)
    x = batch if isinstance(batch, ad.Tensor) else ad.Tensor(batch)
    c_dim = g.cfg.c_dim
    targets = sample_target_labels(labels, rng, mode=label_mode, domain_count=c_dim)

    x_fake = g.forward(x, one_hot(targets, c_dim))
    src_fake, cls_fake = d.forward(x_fake)
    loss_fake = -ad.mean(src_fake)
    loss_cls = losses.cls_loss(cls_fake, targets)
    x_rec = g.forward(x_fake, one_hot(labels, c_dim))
    loss_rec = losses.rec_loss(x, x_rec)
    total = loss_fake + weights.lambda_cls * loss_cls + weights.lambda_rec * loss_rec

    report = losses.LossReport(
        g_loss_fake=loss_fake.item(), g_loss_rec=loss_rec.item(), g_loss_cls=loss_cls.item()
    )
    _finite_or_raise(report)
    _apply_update(total, g, opt_g)
    return report


# ---------------------------------------------------------------------------
# log format

_D_LINE_RE = re.compile(
    r"^Iteration \[(\d+)/(\d+)\], D/loss_real: (-?\d+\.\d{4}), D/loss_fake: (-?\d+\.\d{4}), "
    r"D/loss_cls: (-?\d+\.\d{4}), D/loss_gp: (-?\d+\.\d{4})$"
)
_G_LINE_RE = re.compile(
    r"^G/loss_fake: (-?\d+\.\d{4}), G/loss_rec: (-?\d+\.\d{4}), G/loss_cls: (-?\d+\.\d{4})$"
)


def format_d_line(iteration, total, report):
    return (
        f"Iteration [{iteration}/{total}], "
        f"D/loss_real: {report.d_loss_real:.4f}, D/loss_fake: {report.d_loss_fake:.4f}, "
        f"D/loss_cls: {report.d_loss_cls:.4f}, D/loss_gp: {report.d_loss_gp:.4f}"
    )


def format_g_line(report):
    return (
        f"G/loss_fake: {report.g_loss_fake:.4f}, "
        f"G/loss_rec: {report.g_loss_rec:.4f}, G/loss_cls: {report.g_loss_cls:.4f}"
    )


def parse_log_line(line):
    """Parse one emitted log line back into its parts.

    Returns (kind, iteration, total, LossReport) where kind is "d" or
    "g"; iteration/total are None on generator lines.
    """
    m = _D_LINE_RE.match(line.strip())
    if m:
        report = losses.LossReport(
            d_loss_real=float(m.group(3)),
            d_loss_fake=float(m.group(4)),
            d_loss_cls=float(m.group(5)),
            d_loss_gp=float(m.group(6)),
        )
        return "d", int(m.group(1)), int(m.group(2)), report
    m = _G_LINE_RE.match(line.strip())
    if m:
        report = losses.LossReport(
            g_loss_fake=float(m.group(1)),
            g_loss_rec=float(m.group(2)),
            g_loss_cls=float(m.group(3)),
        )
        return "g", None, None, report
    raise ValueError(f"unrecognized log line: {line!r}")


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    """Full training state: everything needed to continue a run and get
    bitwise-identical results to never having stopped."""

    iteration: int
    seed: int
    config: dict
    config_hash: str
    g_params: dict
    d_params: dict
    opt_g: dict
    opt_d: dict
    rng_state: dict


def snapshot(g, d, opt_g, opt_d, config: TrainConfig, iteration, rng_state):
    return Checkpoint(
        iteration=int(iteration),
        seed=config.seed,
        config=config.to_dict(),
        config_hash=config.config_hash(),
        g_params={name: p.data.copy() for name, p in g.named_parameters()},
        d_params={name: p.data.copy() for name, p in d.named_parameters()},
        opt_g=opt_g.state_dict(),
        opt_d=opt_d.state_dict(),
        rng_state=rng_state,
    )


def _opt_scalars(state):
    return {k: state[k] for k in ("t", "lr", "beta1", "beta2", "eps")}


def save_checkpoint(ckpt: Checkpoint, path):
    """Write the binary container: an 8-byte magic, a little-endian
    uint64 header length, a JSON header, then named float64 little-endian
    blocks. The write is atomic (temp file + rename)."""
    blocks = []
    payload = bytearray()

    def add(name, arr):
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        blocks.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(data)

    for name, arr in ckpt.g_params.items():
        add(f"G/{name}", arr)
    for name, arr in ckpt.d_params.items():
        add(f"D/{name}", arr)
    for prefix, state in (("optG", ckpt.opt_g), ("optD", ckpt.opt_d)):
        for moment in ("m", "v"):
            for name, arr in state[moment].items():
                add(f"{prefix}.{moment}/{name}", arr)

    header = {
        "iteration": ckpt.iteration,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "opt_g": _opt_scalars(ckpt.opt_g),
        "opt_d": _opt_scalars(ckpt.opt_d),
        "rng": ckpt.rng_state,
        "blocks": blocks,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        f.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a training checkpoint container")
    (header_len,) = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC))
    start = len(CHECKPOINT_MAGIC) + 8
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    body = raw[start + header_len :]

    arrays = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=block["offset"])
        arrays[block["name"]] = arr.reshape(shape).copy()

    def collect(prefix):
        plen = len(prefix)
        return {name[plen:]: arr for name, arr in arrays.items() if name.startswith(prefix)}

    opt_g = dict(header["opt_g"], m=collect("optG.m/"), v=collect("optG.v/"))
    opt_d = dict(header["opt_d"], m=collect("optD.m/"), v=collect("optD.v/"))
    return Checkpoint(
        iteration=int(header["iteration"]),
        seed=int(header["seed"]),
        config=header["config"],
        config_hash=header["config_hash"],
        g_params=collect("G/"),
        d_params=collect("D/"),
        opt_g=opt_g,
        opt_d=opt_d,
        rng_state=header["rng"],
    )


def restore_networks(ckpt: Checkpoint, g, d, opt_g=None, opt_d=None):
    """Copy checkpoint parameters (and optionally optimizer state) into
    freshly built networks."""
    for name, p in g.named_parameters():
        p.data[...] = ckpt.g_params[name]
    for name, p in d.named_parameters():
        p.data[...] = ckpt.d_params[name]
    if opt_g is not None:
        opt_g.load_state_dict(ckpt.opt_g)
    if opt_d is not None:
        opt_d.load_state_dict(ckpt.opt_d)


# ---------------------------------------------------------------------------
# the run loop

def _train_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1,))))


def run(config: TrainConfig, manifest: ds.DatasetManifest, g, d, out_dir, echo=True, counters=None, resume=None):
    """Drive the full schedule: n_critic critic updates then one
    generator update per iteration, with logging, checkpoints, and
    sample sheets on their configured cadences.

    ``resume`` takes a Checkpoint from the same config; continuing from
    it reproduces the uninterrupted run bitwise. Returns the final
    Checkpoint.
    """
    if len(manifest) == 0:
        raise ValueError("cannot train on an empty dataset")
    out = Path(out_dir)
    samples_dir = out / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    if counters is None:
        counters = {}
    counters.setdefault("d_updates", 0)
    counters.setdefault("g_updates", 0)

    weights = config.weights()
    opt_g = Adam(g, lr=config.g_lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = Adam(d, lr=config.d_lr, beta1=config.beta1, beta2=config.beta2)
    sampler = EpochSampler(len(manifest), config.batch_size, config.seed)
    rng = _train_rng(config.seed)

    start = 0
    if resume is not None:
        if resume.config_hash != config.config_hash():
            raise ValueError("checkpoint config does not match the active config")
        restore_networks(resume, g, d, opt_g, opt_d)
        rng.bit_generator.state = resume.rng_state["train_rng"]
        sampler.restore(resume.rng_state["sampler"])
        start = resume.iteration

    n_sample = min(4, len(manifest))
    sample_batch, _ = ds.load_batch(manifest, np.arange(n_sample), config.image_size)
    sample_inputs = [ad.Tensor(sample_batch.data[i]) for i in range(n_sample)]

    final = None
    log_path = out / "train.log"
    with open(log_path, "a" if start else "w", encoding="utf-8") as log_file:

        def emit(line):
            log_file.write(line + "\n")
            if echo:
                print(line)

        for iteration in range(start + 1, config.total_iterations + 1):
            try:
                for _ in range(config.n_critic):
                    idx = sampler.next_batch()
                    x, labels = ds.load_batch(manifest, idx, config.image_size)
                    d_report = train_step_d(x, labels, g, d, weights, opt_d, rng, config.label_mode)
                    counters["d_updates"] += 1
                idx = sampler.next_batch()
                x, labels = ds.load_batch(manifest, idx, config.image_size)
                g_report = train_step_g(x, labels, g, d, weights, opt_g, rng, config.label_mode)
                counters["g_updates"] += 1
            except NonFiniteLossError as e:
                emit(f"aborted at iteration {iteration}: {e}")
                raise NonFiniteLossError(f"iteration {iteration}: {e}") from e

            if iteration % config.log_every == 0 or iteration == config.total_iterations:
                merged = losses.LossReport(**d_report.populated(), **g_report.populated())
                emit(format_d_line(iteration, config.total_iterations, merged))
                emit(format_g_line(merged))
                log_file.flush()

            at_checkpoint = iteration % config.checkpoint_every == 0 or iteration == config.total_iterations
            if at_checkpoint:
                rng_state = {"train_rng": rng.bit_generator.state, "sampler": sampler.state()}
                ckpt = snapshot(g, d, opt_g, opt_d, config, iteration, rng_state)
                save_checkpoint(ckpt, out / f"checkpoint_{iteration:06d}.ckpt")
                final = ckpt
            if iteration % config.sample_every == 0 or iteration == config.total_iterations:
                png = imaging.compose_grid(sample_inputs, g, domain_count=g.cfg.c_dim)
                (samples_dir / f"sample_{iteration:06d}.png").write_bytes(png)
    return final


# ---------------------------------------------------------------------------
# dataset split

def split_dataset(manifest: ds.DatasetManifest, ratio=0.9, seed=0):
    """Split at identity granularity: no video id appears on both sides,
    and the train side holds round(ratio * identities) of them (clamped
    so both sides stay non-empty)."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    ids = manifest.identities()
    if len(ids) < 2:
        raise ValueError(f"need at least 2 identities to split, got {len(ids)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed)))
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(round(ratio * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train_ids = set(order[:n_train])
    train_records = [r for r in manifest.records if r.video_id in train_ids]
    test_records = [r for r in manifest.records if r.video_id not in train_ids]
    return (
        ds.DatasetManifest(train_records, manifest.root),
        ds.DatasetManifest(test_records, manifest.root),
    )
