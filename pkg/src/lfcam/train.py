"""Joint training of pattern logits and RecNet weights.

One Adam loop owns every trainable tensor: the pattern parameters inside
an :class:`~lfcam.nets.AcqNet` and the weights of one or four RecNets.
The loss is the mean squared error between the reconstructed and true
light fields, so capture and reconstruction optimize against each other
end to end.

Everything is deterministic given the run seed.  Batch indices, noise
draws, and initializations come from named substreams of the root seed
keyed by step (never from mutable generator state), which is what makes
checkpoint resume bitwise-identical to an uninterrupted run: restoring
parameters, moments, and the step counter restores the entire future of
the run.

Checkpoint file layout (little-endian):

    magic "LFCK" | u16 version | 32-byte config hash | u64 steps done |
    u32 block count | blocks...

    block: u32 name length | name (utf-8) | u32 ndim | u32 dims... |
           f32 parameter payload | f32 Adam-m payload | f32 Adam-v payload

Loss log: CSV ``step,loss,binary_gap``.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .core import DTYPE, Dims, derive_seed
from .nets import AcqNet, AcqNetConfig, RecNet, RecNetConfig, acqnet_graph, recnet_graph
from .patterns import export_pattern_images

CHECKPOINT_MAGIC = b"LFCK"
CHECKPOINT_VERSION = 1


class TrainAbort(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""

    code = "train-abort"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    noise_sigma: float = 0.005
    tau_start: float = 1.0
    tau_end: float = 10.0
    seed: int = 0
    checkpoint_every: int = 0   # 0 = only at the end
    audit_every: int = 0        # 0 = no float64 audit batches

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


def mse_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over all elements (plain numpy path)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def tau_for_step(step: int, total: int, start: float = 1.0, end: float = 10.0) -> float:
    """Temperature schedule: multiply by (end/start)^(1/5) each fifth.

    step=0 gives ``start``; step=total gives ``end`` (used for the final
    gap report); during training the exponent stays below 1.
    """
    if total < 1:
        return start
    fifth = min(5, step * 5 // total)
    return float(start * (end / start) ** (fifth / 5.0))


class Adam:
    """Standard Adam with bias correction, deterministic update order."""

    def __init__(self, params: dict[str, ad.Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        b1 = DTYPE(cfg.beta1)
        b2 = DTYPE(cfg.beta2)
        # bias corrections in float64, applied as float32 scalars
        c1 = DTYPE(1.0 - cfg.beta1 ** self.t)
        c2 = DTYPE(1.0 - cfg.beta2 ** self.t)
        lr = DTYPE(cfg.lr)
        eps = DTYPE(cfg.eps)
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainAbort(f"non-finite gradient in parameter {name!r} "
                                 f"at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (DTYPE(1) - b1) * g
            v *= b2
            v += (DTYPE(1) - b2) * (g * g)
            # in-place so pattern tensors keep aliasing their VariantParams
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def collect_parameters(acq: AcqNet, recs: list[RecNet]) -> dict[str, ad.Tensor]:
    out: dict[str, ad.Tensor] = dict(acq.tensors)
    for rec in recs:
        out.update(rec.named_parameters())
    return out


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Per-step batch draw from the shuffle substream (stateless)."""
    rng = np.random.default_rng(derive_seed(seed, "shuffle", step))
    return rng.integers(0, n, size=batch_size)


def noise_image(dims: Dims, sigma: float, seed: int) -> np.ndarray | None:
    if sigma == 0.0:
        return None
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, sigma, size=(dims.n_y, dims.n_x)).astype(DTYPE)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def config_fingerprint(acq_cfg: AcqNetConfig, rec_cfg: RecNetConfig,
                       cfg: TrainConfig) -> str:
    """Canonical text form of everything that pins the architecture."""
    lines = []
    for label, obj in (("acq", acq_cfg), ("rec", rec_cfg), ("train", cfg)):
        for f in fields(obj):
            lines.append(f"{label}.{f.name}={getattr(obj, f.name)!r}")
    return "\n".join(sorted(lines))


def config_hash(fingerprint: str) -> bytes:
    return hashlib.sha256(fingerprint.encode("utf-8")).digest()


def save_checkpoint(path, params: dict[str, ad.Tensor], adam: Adam,
                    cfg_hash: bytes, steps_done: int) -> None:
    if len(cfg_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION), cfg_hash,
              struct.pack("<QI", steps_done, len(params))]
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f4")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
        chunks.append(np.ascontiguousarray(adam.m[name], dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(adam.v[name], dtype="<f4").tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    cfg_hash: bytes
    steps_done: int
    blocks: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]  # param, m, v


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise TrainAbort(f"{path}: checkpoint truncated at byte {pos}")
        out = raw[pos : pos + n]
        pos += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise TrainAbort(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<H", take(2))
    if version != CHECKPOINT_VERSION:
        raise TrainAbort(f"{path}: unsupported checkpoint version {version}")
    cfg_hash = take(32)
    steps_done, count = struct.unpack("<QI", take(12))
    blocks = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
        n_items = n_bytes // 4
        arrs = []
        for _ in range(3):
            buf = np.frombuffer(take(n_bytes), dtype="<f4", count=n_items)
            arrs.append(buf.reshape(shape).astype(DTYPE))
        blocks[name] = tuple(arrs)
    return Checkpoint(cfg_hash, steps_done, blocks)


def restore(params: dict[str, ad.Tensor], adam: Adam, ckpt: Checkpoint,
            expected_hash: bytes | None = None) -> int:
    """Load a checkpoint into live tensors; returns the resume step."""
    if expected_hash is not None and ckpt.cfg_hash != expected_hash:
        raise TrainAbort("checkpoint config hash does not match this run's config")
    if set(ckpt.blocks) != set(params):
        missing = set(params) - set(ckpt.blocks)
        extra = set(ckpt.blocks) - set(params)
        raise TrainAbort(f"checkpoint parameter names disagree "
                         f"(missing={sorted(missing)}, extra={sorted(extra)})")
    for name, (p, m, v) in ckpt.blocks.items():
        if p.shape != params[name].data.shape:
            raise TrainAbort(f"checkpoint shape {p.shape} != live shape "
                             f"{params[name].data.shape} for {name!r}")
        params[name].data[...] = p
        adam.m[name][...] = m
        adam.v[name][...] = v
    adam.t = ckpt.steps_done
    return ckpt.steps_done


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    rows: list[tuple[int, float, float]]   # (step, loss, binary_gap)
    initial_loss: float
    final_loss: float
    checkpoint_path: str | None


def _batch_loss(acq: AcqNet, recs: list[RecNet], samples: list[np.ndarray],
                cfg: TrainConfig, step: int) -> ad.Tensor:
    """Build the per-step loss graph: mean over batch x region instances."""
    d = acq.cfg.dims
    tau = tau_for_step(step, cfg.steps, cfg.tau_start, cfg.tau_end)
    terms: list[ad.Tensor] = []
    for slot, lf in enumerate(samples):
        for k, rec in enumerate(recs):
            # region k sees its sensor rows exposed with a cyclically
            # shifted pattern order; equivalently we shift the content
            content = np.roll(lf, k, axis=0) if k else lf
            noise = noise_image(d, cfg.noise_sigma,
                                derive_seed(cfg.seed, "noise", step, slot, k))
            packed = acq.forward(content, mode="train", tau=tau, noise=noise)
            recon = rec.forward(packed)
            terms.append(ad.mse(recon, ad.constant(content)))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.smul(total, 1.0 / len(terms))


def _audit_loss(acq: AcqNet, recs: list[RecNet], samples: list[np.ndarray],
                cfg: TrainConfig, step: int) -> float:
    """Recompute the step loss in float64 through the same graph builders."""
    d = acq.cfg.dims
    tau = tau_for_step(step, cfg.steps, cfg.tau_start, cfg.tau_end)
    tensors64 = {n: ad.constant(t.data.astype(np.float64))
                 for n, t in acq.tensors.items()}
    total = 0.0
    count = 0
    for slot, lf in enumerate(samples):
        for k, rec in enumerate(recs):
            content = np.roll(lf, k, axis=0) if k else lf
            noise = noise_image(d, cfg.noise_sigma,
                                derive_seed(cfg.seed, "noise", step, slot, k))
            lf64 = ad.constant(content.astype(np.float64))
            noise_t = None if noise is None else ad.constant(noise.astype(np.float64))
            packed = acqnet_graph(lf64, tensors64, acq.params, acq.cfg,
                                  mode="train", tau=tau, noise=noise_t)
            weights64 = {n: ad.constant(t.data.astype(np.float64))
                         for n, t in rec.tensors.items()}
            recon = recnet_graph(packed, weights64, rec.cfg)
            total += mse_loss(recon.data, content)
            count += 1
    return total / count


def train(acq: AcqNet, recs: list[RecNet], dataset, cfg: TrainConfig,
          out_dir: str | None = None, resume_from: str | None = None) -> TrainResult:
    """Run the joint optimization; optionally resume from a checkpoint.

    ``dataset`` needs ``__len__`` and ``sample(i) -> (n_t, n_v, n_u,
    n_y, n_x) float32 array``; an optional ``describe(i)`` feeds abort
    diagnostics.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    params = collect_parameters(acq, recs)
    adam = Adam(params, cfg)
    fp = config_fingerprint(acq.cfg, recs[0].cfg, cfg)
    h = config_hash(fp)
    start_step = 0
    if resume_from is not None:
        start_step = restore(params, adam, load_checkpoint(resume_from), h)

    rows: list[tuple[int, float, float]] = []
    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "model.lfck")

    for step in range(start_step, cfg.steps):
        idx = batch_indices(cfg.seed, step, len(dataset), cfg.batch_size)
        samples = []
        for i in idx:
            s = dataset.sample(int(i))
            arr = s.data if hasattr(s, "data") else np.asarray(s)
            samples.append(np.ascontiguousarray(arr, dtype=DTYPE))
        for p in params.values():
            p.grad = None
        loss = _batch_loss(acq, recs, samples, cfg, step)
        if not np.isfinite(loss.data):
            lines = [dataset.describe(int(i)) if hasattr(dataset, "describe")
                     else f"index {int(i)}" for i in idx]
            raise TrainAbort("non-finite loss at step "
                             f"{step}; batch: " + "; ".join(lines))
        # audit before the update: the pattern tensors alias the parameter
        # arrays, so after adam.step() the recomputation would see new values
        if cfg.audit_every and (step + 1) % cfg.audit_every == 0:
            audit = _audit_loss(acq, recs, samples, cfg, step)
            rel = abs(audit - float(loss.data)) / max(1e-12, abs(audit))
            if rel > 1e-3:
                raise TrainAbort(f"float32/float64 loss divergence {rel:.2e} "
                                 f"at step {step}")
        loss.backward()
        adam.step()
        tau = tau_for_step(step, cfg.steps, cfg.tau_start, cfg.tau_end)
        gap = acq.params.binary_gap(tau)
        rows.append((step, float(loss.data), gap))
        if ckpt_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt_path, params, adam, h, step + 1)

    if ckpt_path:
        save_checkpoint(ckpt_path, params, adam, h, cfg.steps)
        write_loss_log(os.path.join(out_dir, "loss.csv"), rows)
    return TrainResult(rows=rows,
                       initial_loss=rows[0][1] if rows else float("nan"),
                       final_loss=rows[-1][1] if rows else float("nan"),
                       checkpoint_path=ckpt_path)


def write_loss_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,binary_gap\n")
        for step, loss, gap in rows:
            fh.write(f"{step},{loss:.9e},{gap:.9e}\n")


def read_loss_log(path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "step,loss,binary_gap":
            raise ValueError(f"{path}: unexpected loss log header {header!r}")
        for line in fh:
            s, l, g = line.strip().split(",")
            rows.append((int(s), float(l), float(g)))
    return rows


def export_patterns(acq: AcqNet, out_dir: str):
    """Write the hardware-facing pattern realization plus a gap report."""
    if acq.params.name == "Free5D":
        aperture, tiles = None, None  # idealized mask: no hardware realization
    else:
        aperture, tiles = acq.params.export()
    files = export_pattern_images(acq.params, out_dir)
    gap = acq.params.binary_gap(tau=10.0)
    with open(os.path.join(out_dir, "export.txt"), "w") as fh:
        fh.write(f"variant={acq.params.name}\n")
        fh.write(f"binary_gap_tau10={gap:.9e}\n")
    return aperture, tiles, files
