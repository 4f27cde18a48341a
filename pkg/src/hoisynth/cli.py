"""Command-line entry point.

Subcommands: gen-data, bps, train, sample, eval, probe, bench. Exit codes:
0 success, 1 usage error, 2 runtime error. All randomness is controlled by
--seed (falling back to the MAMI_SEED environment variable, then the config);
rerunning any subcommand with the same seed reproduces its primary outputs
byte for byte (bench timing/memory columns are measurements and excluded).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import tracemalloc

import numpy as np

from . import diffusion as df
from . import geometry as geo
from . import metrics as mt
from . import model as md
from . import probe as pb
from . import synthdata as sd
from .config import Config, load_config
from .kernels import BACKEND as KERNEL_BACKEND
from .motion import (
    MaskedCondition,
    build_masked_condition,
    human_frames,
    load_motion_json,
    save_motion_json,
    seq_to_state,
    state_to_seq,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise _UsageError(message)


def _seed_from(args, cfg):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MAMI_SEED")
    if env is not None:
        return int(env)
    return cfg.seed


def _load_cfg(path):
    if path is None:
        return Config()
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path)


def _require(path, what):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# -- dataset/condition helpers -----------------------------------------------------


def _dataset_conditions(data_dir, cfg, manifest=None, limit=None):
    """(states, conditions, sequences, manifest, stats) for a generated
    dataset directory; conditions carry the per-sequence object's BPS."""
    manifest = manifest or sd.load_manifest(data_dir)
    stats = df.NormStats(mean=manifest.mean, std=manifest.std)
    basis = geo.make_basis(seed=manifest.seed, n=cfg.bps_n)
    sequences = sd.load_sequences(data_dir, manifest, limit=limit)
    bps_cache = {}
    states, conds = [], []
    for human, obj, contacts, text in sequences:
        if obj.mesh_id not in bps_cache:
            mesh = sd.mesh_from_id(obj.mesh_id)
            bps_cache[obj.mesh_id] = geo.encode_object(mesh, basis).deltas
        cond = md.ConditionBundle(
            text=text,
            masked=build_masked_condition(human_frames(human)[0], obj, contacts, cfg.interval),
            bps_deltas=bps_cache[obj.mesh_id],
        )
        states.append(seq_to_state(human, obj))
        conds.append(cond)
    return states, conds, sequences, manifest, stats


def _condition_from_file(path, cfg, text, bps_deltas):
    """A waypoint file is either a motion-sequence JSON (condition rebuilt
    from it) or a raw grid JSON {"T", "interval", "grid"}."""
    import json

    with open(path) as fh:
        doc = json.load(fh)
    if "grid" in doc:
        grid = np.asarray(doc["grid"], dtype=np.float64)
        masked = MaskedCondition(grid=grid, interval=int(doc.get("interval", cfg.interval)))
    else:
        human, obj, contacts, _ = load_motion_json(path)
        masked = build_masked_condition(human_frames(human)[0], obj, contacts, cfg.interval)
    return md.ConditionBundle(text=text, masked=masked, bps_deltas=bps_deltas)


# -- training loop ----------------------------------------------------------------


def _train(cfg, data_dir, out_path, seed, loss_csv=None, use_kha=None, use_gapa=None,
           quiet=False):
    states, conds, _, manifest, stats = _dataset_conditions(data_dir, cfg)
    norm_states = [df.normalize_state(s, stats) for s in states]
    norm_conds = [df.normalize_condition(c, stats) for c in conds]
    sched = df.make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)
    params = md.init_params(cfg, seed=seed)
    # beta2 = 0.99: second moments adapt within the short desk-scale budget
    opt = df.nm.AdamState(lr=cfg.lr, beta2=0.99)
    rng = np.random.default_rng(seed + 1)
    extras = {"norm.mean": stats.mean, "norm.std": stats.std, "sched.beta": sched.beta}

    loss_rows = ["step,loss,lr,seconds"]
    t_start = time.time()
    n = len(norm_states)
    for step in range(1, cfg.train_steps + 1):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        batch = [(norm_states[i], norm_conds[i]) for i in idx]
        loss, grads = df.training_loss(params, cfg, batch, sched, rng,
                                       use_kha=use_kha, use_gapa=use_gapa)
        df.nm.adam_step(params, grads, opt)
        loss_rows.append(f"{step},{loss:.6f},{cfg.lr},{time.time() - t_start:.3f}")
        if step % cfg.checkpoint_every == 0 or step == cfg.train_steps:
            md.save_model(out_path, params, cfg, extras)
            if not quiet:
                print(f"step {step}/{cfg.train_steps} loss {loss:.4f}", file=sys.stderr)
    md.save_model(out_path, params, cfg, extras)
    if loss_csv:
        with open(loss_csv, "w") as fh:
            fh.write("\n".join(loss_rows) + "\n")
    return params, stats, sched


def _sample_sequence(params, cfg, cond, stats, sched, seed, mesh_id=""):
    raw = df.sample(params, cfg, df.normalize_condition(cond, stats), sched,
                    seed=seed, t_frames=cond.masked.T)
    state = df.denormalize_state(raw, stats)
    human, obj = state_to_seq(state, mesh_id=mesh_id)
    return human, obj, state


# -- subcommands ---------------------------------------------------------------------


def _cmd_gen_data(args):
    cfg = _load_cfg(args.config)
    seed = _seed_from(args, cfg)
    kind = None if args.kind == "mixed" else args.kind
    manifest = sd.generate_dataset(args.num, seed, args.out, t_frames=cfg.t_frames, kind=kind)
    print(f"wrote {len(manifest.files)} sequences to {args.out}")
    return 0


def _cmd_bps(args):
    cfg = _load_cfg(args.config)
    seed = _seed_from(args, cfg)
    path = _require(args.mesh, "mesh")
    with open(path) as fh:
        mesh = geo.parse_obj(fh.read(), name=os.path.basename(path))
    basis = geo.make_basis(seed=seed, n=args.n or cfg.bps_n, radius=args.radius)
    feat = geo.encode_object(mesh, basis)
    geo.save_bps(args.out, feat)
    print(f"encoded {mesh.num_faces} faces into {basis.n} basis deltas -> {args.out}")
    return 0


def _cmd_train(args):
    cfg = _load_cfg(args.config)
    seed = _seed_from(args, cfg)
    _require(os.path.join(args.data, "manifest.json"), "dataset manifest")
    loss_csv = args.loss_csv or (args.out + ".loss.csv")
    _train(cfg, args.data, args.out, seed, loss_csv=loss_csv)
    print(f"checkpoint -> {args.out}; loss log -> {loss_csv}")
    return 0


def _cmd_sample(args):
    ckpt = _require(args.ckpt, "checkpoint")
    cfg, params, extras = md.load_model(ckpt, allow_extra=args.allow_extra)
    stats = df.NormStats(mean=extras["norm.mean"], std=extras["norm.std"])
    sched = df.schedule_from_beta(extras["sched.beta"])
    seed = _seed_from(args, cfg)
    mesh_path = _require(args.mesh, "mesh")
    with open(mesh_path) as fh:
        mesh = geo.parse_obj(fh.read(), name=os.path.basename(mesh_path))
    basis = geo.make_basis(seed=cfg.seed, n=cfg.bps_n)
    bps = geo.encode_object(mesh, basis).deltas
    cond = _condition_from_file(_require(args.waypoints, "waypoint file"), cfg, args.text, bps)
    human, obj, _ = _sample_sequence(params, cfg, cond, stats, sched, seed,
                                     mesh_id=os.path.basename(mesh_path))
    contacts = sd.ContactIndicators(np.zeros((human.T, 4)))
    save_motion_json(args.out, human, obj, contacts, args.text)
    print(f"sampled {human.T} frames -> {args.out}")
    return 0


def _cmd_eval(args):
    cfg = _load_cfg(args.config)
    ref_manifest = sd.load_manifest(args.ref)
    gen_files = sorted(f for f in os.listdir(args.gen) if f.endswith(".json") and f != "manifest.json")
    if not gen_files:
        raise FileNotFoundError(f"no sequence files in {args.gen}")
    override_mesh = None
    if args.mesh:
        with open(_require(args.mesh, "mesh")) as fh:
            override_mesh = geo.parse_obj(fh.read(), name=os.path.basename(args.mesh))

    per_seq, names = [], []
    gen_feats, ref_feats = [], []
    final_errs, holds = [], []
    mesh_cache, sdf_cache = {}, {}
    for fname in gen_files:
        ref_path = os.path.join(args.ref, fname)
        _require(ref_path, f"reference for {fname}")
        g_h, g_o, _, _ = load_motion_json(os.path.join(args.gen, fname))
        r_h, r_o, r_c, _ = load_motion_json(ref_path)
        mesh = override_mesh
        if mesh is None:
            key = r_o.mesh_id
            if key not in mesh_cache:
                mesh_cache[key] = sd.mesh_from_id(key)
                sdf_cache[key] = geo.build_sdf(mesh_cache[key], dims=args.sdf_dims)
            mesh, sdf = mesh_cache[key], sdf_cache[key]
        else:
            if "override" not in sdf_cache:
                mesh.watertight = True  # caller-supplied eval mesh
                sdf_cache["override"] = geo.build_sdf(mesh, dims=args.sdf_dims)
            sdf = sdf_cache["override"]
        cond = build_masked_condition(human_frames(r_h)[0], r_o, r_c, cfg.interval)
        pair = mt.EvalPair(gen_human=g_h, gen_obj=g_o, ref_human=r_h, ref_obj=r_o,
                           cond=cond, mesh=mesh, sdf=sdf, ref_contacts=r_c.flags)
        rep, _ = mt.evaluate_pair(pair)
        per_seq.append(rep)
        names.append(fname)
        gen_feats.append(mt.feature_vector(g_h, g_o, mesh))
        ref_feats.append(mt.feature_vector(r_h, r_o, mesh))
        final_errs.append(rep["T_e"])
        hand_d = mt.hand_surface_distances(g_h, g_o, mesh).min(axis=1)
        active = r_c.flags[:, 0:2].max(axis=1) > 0.5
        holds.append(float(np.maximum(hand_d[active], 0.0).max()) * 100.0 if active.any() else 0.0)

    gen_feats = np.asarray(gen_feats)
    ref_feats = np.asarray(ref_feats)
    dataset_level = {"TSR": mt.tsr(final_errs, holds)}
    dataset_level["FID"] = mt.fid(gen_feats, ref_feats) if len(gen_feats) >= 2 else 0.0
    if len(gen_feats) >= 32:
        # reference features anchor each prompt (see metrics module docstring)
        dataset_level["R_prec"] = mt.r_precision(gen_feats, ref_feats,
                                                 np.random.default_rng(args.seed or 0))
    else:
        dataset_level["R_prec"] = 0.0
    aggregate = mt.aggregate_reports(per_seq, dataset_level)
    mt.write_report_csv(args.out, per_seq, aggregate, names)
    print(f"evaluated {len(per_seq)} pairs -> {args.out}")
    return 0


def _cmd_probe(args):
    ckpt = _require(args.ckpt, "checkpoint")
    cfg, params, extras = md.load_model(ckpt, allow_extra=args.allow_extra)
    stats = df.NormStats(mean=extras["norm.mean"], std=extras["norm.std"])
    sched = df.schedule_from_beta(extras["sched.beta"])
    seed = _seed_from(args, cfg)
    states, conds, _, _, _ = _dataset_conditions(args.data, cfg, limit=args.limit)
    rng = np.random.default_rng(seed)
    t_probe = max(1, sched.steps // 2)
    dataset = []
    for s, c in zip(states, conds):
        x0 = df.normalize_state(s, stats)
        x_t = df.q_sample(x0, t_probe, rng.standard_normal(x0.shape), sched)
        dataset.append((x_t, t_probe, df.normalize_condition(c, stats)))
    report = pb.probe_layers(md.Denoiser(cfg, params), dataset)
    pb.write_probe_csv(args.out, report)
    print(f"probed {len(dataset)} sequences over {len(report.rows)} layers -> {args.out}")
    return 0


def _cmd_bench(args):
    cfg = _load_cfg(args.config)
    seed = _seed_from(args, cfg)
    toggles = {
        "baseline": (False, False),
        "+gapa": (False, True),
        "+kha": (True, False),
        "full": (True, True),
    }
    counts = md.component_param_counts(cfg)
    sample_steps = min(cfg.steps, args.sample_steps)
    sched = df.make_schedule(sample_steps, cfg.beta_start, cfg.beta_end)
    rng = np.random.default_rng(seed)
    grid = np.zeros((cfg.t_frames, 220))
    grid[0] = rng.standard_normal(220)
    grid[-1, 0:3] = rng.standard_normal(3)
    cond = md.ConditionBundle(text="bench sequence", masked=MaskedCondition(grid=grid, interval=cfg.interval),
                              bps_deltas=rng.standard_normal((cfg.bps_n, 3)) * 0.1)
    params = md.init_params(cfg, seed=seed)
    lines = [f"# kernels={KERNEL_BACKEND}; reverse steps={sample_steps}; T={cfg.t_frames}",
             "config,params_m,peak_mem_mb,seconds_per_seq"]
    for name, (kha, gapa) in toggles.items():
        tracemalloc.start()
        t0 = time.time()
        df.sample(params, cfg, cond, sched, seed=seed, t_frames=cfg.t_frames,
                  use_kha=kha, use_gapa=gapa)
        elapsed = time.time() - t0
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        lines.append(f"{name},{counts[name] / 1e6:.4f},{peak / 1e6:.2f},{elapsed:.3f}")
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out)
    print(out, end="")
    return 0


# -- argument wiring -------------------------------------------------------------------


def _build_parser():
    parser = _Parser(prog="hoisynth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic interaction dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--kind", choices=["mixed", "drag", "push", "lift"], default="mixed")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("bps", help="encode a mesh into basis-point deltas")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_bps)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="sample one sequence from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", default="")
    p.add_argument("--waypoints", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-extra", action="store_true")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="run the metric suite over generated vs reference")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--mesh", help="OBJ used for every pair (default: per-sequence primitive)")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--sdf-dims", type=int, default=64)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("probe", help="layer-alignment probe over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--allow-extra", action="store_true")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("bench", help="parameter/memory/time table per adapter toggle")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-steps", type=int, default=50)
    p.set_defaults(func=_cmd_bench)
    return parser


def run(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
