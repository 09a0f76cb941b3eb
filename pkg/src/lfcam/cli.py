"""Command-line entry point.

Subcommands: ``simulate``, ``psf``, ``sweep``, ``train``, ``eval``,
``convert``.  Every command takes ``--config PATH`` (key=value file),
``--seed N`` (override), ``--out DIR``, ``--threads N``, plus repeatable
``--set key=value`` overrides.  Runs echo the fully resolved config to
``<out>/config.txt`` so artifacts are reproducible from their own
output directory.

``--threads 1`` (the default) pins the BLAS pool to one thread and is
the bit-reproducibility reference; larger values trade that guarantee
for speed.

Errors print one machine-readable line to stderr:
``lfcam-error code=<code> detail="..."`` with a command-specific exit
status (2 config, 3 missing artifact, 4 file format, 5 dimension
mismatch, 6 training abort, 1 anything else).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ConfigError, RunConfig, load_config
from .core import (CodedImage, DimensionMismatchError, Dims, LF5DError,
                   LightField5D, derive_seed, pack_space_to_depth, read_lf5d,
                   read_pgm, write_lf5d, write_pgm)
from .evaluate import (capture_for_params, difference_image, epi_image,
                       eval_sequence, psf_atlas, stamp_ncc, sweep_margins,
                       working_range_sweep)
from .forward import (AperturePattern, ExposurePattern, coded_capture,
                      normalize_capture)
from .nets import AcqNet, RecNet, build_region_ensemble
from .patterns import make_variant
from .scene import (MOTION_GRID, MotionDisparity, SampleSet, build_manifest,
                    make_plane_sources, procedural_texture, synth_plane,
                    write_manifest)
from .train import (TrainAbort, collect_parameters, Adam, config_fingerprint,
                    config_hash, export_patterns, load_checkpoint, restore, train)


class CliError(Exception):
    def __init__(self, code: str, detail: str, status: int):
        super().__init__(detail)
        self.code = code
        self.status = status


# ---------------------------------------------------------------------------
# model/dataset construction shared by commands and benchmarks
# ---------------------------------------------------------------------------


def build_dataset(rc: RunConfig) -> SampleSet:
    dims = rc.dims()
    sources = make_plane_sources(dims, rc["data.n_textures"],
                                 rc["data.disparities"], rc["data.source_size"],
                                 seed=derive_seed(rc["seed"], "data"))
    shapes = [(s.shape[2], s.shape[3]) for s in sources]
    entries = build_manifest(shapes, rc["data.patch"], rc["data.stride"],
                             rc["data.scales"], MOTION_GRID, rc["data.margin"])
    return SampleSet(sources, entries, rc["data.patch"], dims.n_t,
                     rc["data.margin"])


def build_model(rc: RunConfig) -> tuple[AcqNet, list[RecNet]]:
    acq_cfg = rc.acqnet_config()
    rec_cfg = rc.recnet_config()
    seed = rc["seed"]
    if acq_cfg.region_timing:
        return build_region_ensemble(acq_cfg, rec_cfg, seed)
    acq = AcqNet(acq_cfg, make_variant(acq_cfg.variant, acq_cfg.dims, seed))
    return acq, [RecNet(rec_cfg, seed)]


def load_model(rc: RunConfig, checkpoint_path: str) -> tuple[AcqNet, list[RecNet]]:
    """Rebuild the architecture from config and load trained tensors."""
    if not os.path.exists(checkpoint_path):
        raise CliError("missing-artifact", f"checkpoint not found: {checkpoint_path}", 3)
    acq, recs = build_model(rc)
    params = collect_parameters(acq, recs)
    adam = Adam(params, rc.train_config())
    expected = config_hash(config_fingerprint(acq.cfg, recs[0].cfg, rc.train_config()))
    try:
        restore(params, adam, load_checkpoint(checkpoint_path), expected)
    except TrainAbort as e:
        raise CliError("dimension-mismatch", str(e), 5) from e
    return acq, recs


def deploy_model_fn(acq: AcqNet, rec: RecNet, mode: str = "binary", tau: float = 10.0):
    """Scene array -> reconstructed field array, deterministic and noiseless."""
    dims = acq.cfg.dims

    def fn(scene: np.ndarray) -> np.ndarray:
        lf = LightField5D(dims, np.ascontiguousarray(scene, dtype=np.float32))
        coded = capture_for_params(acq.params, lf, mode=mode, tau=tau)
        packed = pack_space_to_depth(CodedImage(coded.astype(np.float32)))
        return rec.predict(packed.data)

    return fn


# deterministic held-out motions for evaluation scenes
_EVAL_MOTIONS = ((0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 1.0), (-1.0, 0.0),
                 (0.0, -2.0), (1.0, 1.0))


def build_eval_scenes(rc: RunConfig) -> list[np.ndarray]:
    """Held-out plane scenes from fresh textures (never seen in training)."""
    dims = rc.dims()
    d = rc["data.disparities"][0] if rc["data.disparities"] else 0.5
    scenes = []
    for i in range(rc["eval.n_scenes"]):
        ax, ay = _EVAL_MOTIONS[i % len(_EVAL_MOTIONS)]
        md = MotionDisparity(ax, ay, d)
        my, mx = sweep_margins((ax, ay if ay else 1.0), (d,), dims)
        tex = procedural_texture(dims.n_y + 2 * my, dims.n_x + 2 * mx,
                                 seed=derive_seed(rc["seed"], "eval-texture", i))
        lf = synth_plane(tex, md, dims, origin=(float(my), float(mx)))
        scenes.append(lf.data)
    return scenes


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _prepare_out(rc: RunConfig, out: str) -> str:
    os.makedirs(out, exist_ok=True)
    rc.write(os.path.join(out, "config.txt"))
    return out


def cmd_simulate(rc: RunConfig, args) -> int:
    out = _prepare_out(rc, args.out)
    if not os.path.exists(args.input):
        raise CliError("missing-artifact", f"input not found: {args.input}", 3)
    lf = read_lf5d(args.input)
    dims = rc.dims()
    if lf.dims != dims:
        raise CliError("dimension-mismatch",
                       f"input dims {lf.dims} do not match config dims {dims}", 5)
    ckpt = args.checkpoint or rc["paths.checkpoint"]
    if ckpt:
        acq, _ = load_model(rc, ckpt)
        raw = CodedImage(capture_for_params(acq.params, lf, mode="binary")
                         * np.float32(float(dims.n_views * dims.n_t)))
    else:
        # no trained patterns: fully open aperture and always-on exposure
        a = AperturePattern.uniform(dims.n_t, dims.n_v, dims.n_u, value=1.0)
        raw = coded_capture(lf, a, ExposurePattern.all_on(dims.n_t))
    norm = normalize_capture(raw, dims)
    write_pgm(norm.data, os.path.join(out, "coded.pgm"))
    norm.data.astype("<f4").tofile(os.path.join(out, "coded.f32"))
    raw.data.astype("<f4").tofile(os.path.join(out, "coded_raw.f32"))
    packed = pack_space_to_depth(CodedImage(norm.data))
    packed.data.astype("<f4").tofile(os.path.join(out, "packed.f32"))
    print(f"simulate: wrote coded image {dims.n_y}x{dims.n_x} "
          f"(mean {float(norm.data.mean()):.6f}) to {out}")
    return 0


def cmd_train(rc: RunConfig, args) -> int:
    out = _prepare_out(rc, args.out)
    dataset = build_dataset(rc)
    write_manifest(dataset.entries, os.path.join(out, "manifest.csv"))
    acq, recs = build_model(rc)
    result = train(acq, recs, dataset, rc.train_config(), out_dir=out,
                   resume_from=args.resume)
    export_patterns(acq, os.path.join(out, "patterns"))
    ratio = result.final_loss / result.initial_loss if result.initial_loss else math.nan
    print(f"train: {len(dataset)} samples, {rc['train.steps']} steps, "
          f"initial={result.initial_loss:.6e} final={result.final_loss:.6e} "
          f"ratio={ratio:.4f}")
    print(f"train: checkpoint at {result.checkpoint_path}")
    return 0


def _require_checkpoint(rc: RunConfig, args) -> str:
    ckpt = getattr(args, "checkpoint", "") or rc["paths.checkpoint"]
    if not ckpt:
        raise CliError("missing-artifact", "no checkpoint given "
                       "(--checkpoint or paths.checkpoint)", 3)
    return ckpt


def cmd_eval(rc: RunConfig, args) -> int:
    out = _prepare_out(rc, args.out)
    acq, recs = load_model(rc, _require_checkpoint(rc, args))
    dims = rc.dims()
    crop = rc["eval.crop"]
    scenes = build_eval_scenes(rc)
    fn_bin = deploy_model_fn(acq, recs[0], mode="binary")
    fn_rel = deploy_model_fn(acq, recs[0], mode="train", tau=rc["train.tau_end"])
    bin_means, rel_means = [], []
    for i, scene in enumerate(scenes):
        rep = eval_sequence(fn_bin, scene, dims, crop=crop)
        rep.to_csv(os.path.join(out, f"psnr_scene{i}.csv"))
        bin_means.append(rep.global_mean())
        rel_means.append(eval_sequence(fn_rel, scene, dims, crop=crop).global_mean())
        recon = fn_bin(scene)
        vc, uc = dims.n_v // 2, dims.n_u // 2
        write_pgm(recon[0, vc, uc], os.path.join(out, f"recon_scene{i}.pgm"))
        write_pgm(difference_image(recon[0, vc, uc], scene[0, vc, uc]),
                  os.path.join(out, f"diff_scene{i}.pgm"))
        write_pgm(epi_image(LightField5D(dims, recon), y=dims.n_y // 2, v=vc, t=0),
                  os.path.join(out, f"epi_scene{i}.pgm"))
    mean_bin = float(np.mean(bin_means))
    mean_rel = float(np.mean(rel_means))
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"mean_psnr_binary,{mean_bin:.6f}\n")
        fh.write(f"mean_psnr_relaxed,{mean_rel:.6f}\n")
        fh.write(f"train_deploy_gap_db,{abs(mean_rel - mean_bin):.6f}\n")
    print(f"eval: mean PSNR binary={mean_bin:.3f} dB relaxed={mean_rel:.3f} dB "
          f"(gap {abs(mean_rel - mean_bin):.3f} dB) over {len(scenes)} scenes")
    return 0


def cmd_psf(rc: RunConfig, args) -> int:
    out = _prepare_out(rc, args.out)
    dims = rc.dims()
    ckpt = getattr(args, "checkpoint", "") or rc["paths.checkpoint"]
    if ckpt:
        acq, _ = load_model(rc, ckpt)
        params = acq.params
    else:
        params = make_variant(rc["variant"], dims, rc["seed"])
    mds = [MotionDisparity(a, 0.0, d) for a in rc["psf.alphas"] for d in rc["psf.ds"]]
    stamps = psf_atlas(params, mds, dims)
    labels = [f"a{md.alpha_x:g}_d{md.d:g}" for md in mds]
    for label, stamp in zip(labels, stamps):
        write_pgm(stamp, os.path.join(out, f"psf_{label}.pgm"))
    with open(os.path.join(out, "ncc.csv"), "w") as fh:
        fh.write("pair,ncc\n")
        for i in range(len(mds)):
            for j in range(i + 1, len(mds)):
                fh.write(f"{labels[i]}|{labels[j]},"
                         f"{stamp_ncc(stamps[i], stamps[j]):.6f}\n")
    print(f"psf: wrote {len(mds)} stamps and pairwise NCC table to {out}")
    return 0


def cmd_sweep(rc: RunConfig, args) -> int:
    out = _prepare_out(rc, args.out)
    acq, recs = load_model(rc, _require_checkpoint(rc, args))
    dims = rc.dims()
    alpha_axis = rc["eval.alpha_axis"]
    d_axis = rc["eval.d_axis"]
    my, mx = sweep_margins(alpha_axis, d_axis, dims)
    tex = procedural_texture(dims.n_y + 2 * my, dims.n_x + 2 * mx,
                             seed=derive_seed(rc["seed"], "sweep-texture"))
    grid = working_range_sweep(deploy_model_fn(acq, recs[0]), alpha_axis, d_axis,
                               dims, tex, crop=rc["eval.crop"])
    grid.to_csv(os.path.join(out, "sweep.csv"))
    finite = grid.values[np.isfinite(grid.values)]
    best = f"{float(finite.max()):.3f} dB" if finite.size else "inf"
    print(f"sweep: {len(alpha_axis)}x{len(d_axis)} grid written to {out}; "
          f"best cell {best}")
    return 0


_META_NAME = "meta.txt"
_RAW_NAME = "raw.f32"


def cmd_convert(rc: RunConfig, args) -> int:
    src, dst = args.src, args.dst
    if not os.path.exists(src):
        raise CliError("missing-artifact", f"input not found: {src}", 3)
    if os.path.isfile(src) and src.endswith(".lf5d"):
        lf = read_lf5d(src)
        os.makedirs(dst, exist_ok=True)
        d = lf.dims
        with open(os.path.join(dst, _META_NAME), "w") as fh:
            for k in ("n_u", "n_v", "n_x", "n_y", "n_t"):
                fh.write(f"{k}={getattr(d, k)}\n")
        lf.data.astype("<f4").tofile(os.path.join(dst, _RAW_NAME))
        for t in range(d.n_t):
            for v in range(d.n_v):
                for u in range(d.n_u):
                    write_pgm(lf.data[t, v, u],
                              os.path.join(dst, f"view_t{t}_v{v}_u{u}.pgm"))
        print(f"convert: wrote {d.n_t * d.n_views} PGM views + lossless "
              f"{_RAW_NAME} to {dst} (PGMs are 8-bit quantized)")
        return 0
    if os.path.isdir(src) and dst.endswith(".lf5d"):
        meta_path = os.path.join(src, _META_NAME)
        if not os.path.exists(meta_path):
            raise CliError("missing-artifact", f"no {_META_NAME} in {src}", 3)
        meta = {}
        for line in open(meta_path):
            if "=" in line:
                k, _, v = line.strip().partition("=")
                meta[k] = int(v)
        dims = Dims(**meta)
        raw_path = os.path.join(src, _RAW_NAME)
        if os.path.exists(raw_path):
            data = np.fromfile(raw_path, dtype="<f4")
            if data.size != dims.n_elements:
                raise CliError("format",
                               f"{raw_path}: {data.size} values, expected "
                               f"{dims.n_elements}", 4)
            lf = LightField5D(dims, data.reshape(dims.shape))
        else:
            print("convert: no raw.f32 sidecar; rebuilding from 8-bit PGMs (lossy)")
            data = np.zeros(dims.shape, dtype=np.float32)
            for t in range(dims.n_t):
                for v in range(dims.n_v):
                    for u in range(dims.n_u):
                        data[t, v, u] = read_pgm(
                            os.path.join(src, f"view_t{t}_v{v}_u{u}.pgm"))
            lf = LightField5D(dims, data)
        write_lf5d(lf, dst)
        print(f"convert: wrote {dst}")
        return 0
    raise CliError("bad-config",
                   "convert needs FILE.lf5d -> DIR or DIR -> FILE.lf5d", 2)


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--seed", type=int, default=None, help="override the run seed")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--threads", type=int, default=1,
                     help="BLAS thread cap (1 = bit-reproducible reference)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfcam",
                                 description="compressive dynamic light-field "
                                             "camera simulator")
    sp = ap.add_subparsers(dest="command", required=True)
    s = sp.add_parser("simulate", help="capture one LF5D scene to a coded image")
    _common(s)
    s.add_argument("--input", required=True, help="input .lf5d light field")
    s.add_argument("--checkpoint", default="", help="trained model (else open patterns)")
    s = sp.add_parser("train", help="joint pattern/reconstruction training")
    _common(s)
    s.add_argument("--resume", default=None, help="checkpoint to resume from")
    s = sp.add_parser("eval", help="held-out PSNR evaluation of a checkpoint")
    _common(s)
    s.add_argument("--checkpoint", default="", help="trained model checkpoint")
    s = sp.add_parser("psf", help="point-spread-function atlas")
    _common(s)
    s.add_argument("--checkpoint", default="", help="trained model checkpoint")
    s = sp.add_parser("sweep", help="motion/disparity working-range sweep")
    _common(s)
    s.add_argument("--checkpoint", default="", help="trained model checkpoint")
    s = sp.add_parser("convert", help="convert between .lf5d and PGM-stack dir")
    _common(s)
    s.add_argument("src")
    s.add_argument("dst")
    return ap


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "psf": cmd_psf,
    "sweep": cmd_sweep,
    "convert": cmd_convert,
}


def _fail(code: str, detail: str, status: int) -> int:
    detail = detail.replace('"', "'")
    print(f'lfcam-error code={code} detail="{detail}"', file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        rc = load_config(args.config, overrides)
        with threadpool_limits(limits=max(1, args.threads)):
            return _COMMANDS[args.command](rc, args)
    except CliError as e:
        return _fail(e.code, str(e), e.status)
    except ConfigError as e:
        return _fail("bad-config", str(e), 2)
    except FileNotFoundError as e:
        return _fail("missing-artifact", str(e), 3)
    except DimensionMismatchError as e:
        return _fail("dimension-mismatch", str(e), 5)
    except LF5DError as e:
        return _fail(e.code, str(e), 4)
    except TrainAbort as e:
        return _fail("train-abort", str(e), 6)
    except ValueError as e:
        return _fail("invalid-value", str(e), 2)


if __name__ == "__main__":
    sys.exit(main())
