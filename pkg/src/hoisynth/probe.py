"""Feature-retention diagnostic: per-layer cosine alignment between the
denoiser's hidden states and the text / object-geometry embeddings, measured
across a dataset, plus a random-unit-vector calibration baseline.

Protocol per sequence and layer: temporally mean-pool the hidden states over
the motion positions (condition prefix tokens excluded), project hidden /
text / geometry vectors to a common dimension with frozen seeded random maps,
layer-normalize each independently, then take the cosine. Signed means can
cancel across prompts, so the report also carries mean absolute cosines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROBE_PROJECTION_SEED = 31415  # frozen projections: comparable across checkpoints


@dataclass
class ProbeReport:
    rows: list  # per layer: dict(layer, sem_mean, sem_std, geo_mean, geo_std, abs_sem_mean, abs_geo_mean)
    calibration: dict  # random-pair cosine stats: mean, std, dim, n


def _normalize_rows(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _cosine(a, b):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _projection(rng, d_in, d_out):
    return rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)


def probe_projections(d_model, d_text, d_geo, projection_seed=PROBE_PROJECTION_SEED):
    """The frozen random maps (hidden, text, geometry -> common dim) used by
    probe_layers; deterministic in the seed so runs stay comparable."""
    d_common = min(d_model, 256)
    rng = np.random.default_rng(projection_seed)
    return (
        _projection(rng, d_model, d_common),
        _projection(rng, d_text, d_common),
        _projection(rng, d_geo, d_common),
    )


def probe_layers(model, dataset, projection_seed=PROBE_PROJECTION_SEED, timestep=None):
    """Dataset-wide alignment probe.

    `model` provides hidden_states(x_t, t, cond) -> list of (T, d) arrays,
    text_embedding(text) -> (d,), geo_embedding(bps) -> (256,). `dataset` is a
    list of (x_t, t, cond) with cond carrying text + bps deltas; pass
    `timestep` to override every item's t.
    """
    if not dataset:
        raise ValueError("probe needs a nonempty dataset")
    x0, t0, c0 = dataset[0]
    hidden_dims = [h.shape[1] for h in model.hidden_states(x0, t0 if timestep is None else timestep, c0)]
    d_model = hidden_dims[0]
    d_text = model.text_embedding(c0.text).shape[0]
    d_geo = model.geo_embedding(c0.bps_deltas).shape[0]
    d_common = min(d_model, 256)
    proj_hidden, proj_text, proj_geo = probe_projections(d_model, d_text, d_geo, projection_seed)

    n_layers = len(hidden_dims)
    sem = [[] for _ in range(n_layers)]
    geo = [[] for _ in range(n_layers)]
    for x_t, t, cond in dataset:
        hiddens = model.hidden_states(x_t, t if timestep is None else timestep, cond)
        text_vec = _normalize_rows(model.text_embedding(cond.text) @ proj_text)
        geo_vec = _normalize_rows(model.geo_embedding(cond.bps_deltas) @ proj_geo)
        for l, h in enumerate(hiddens):
            pooled = h.mean(axis=0)  # temporal mean over motion positions
            hv = _normalize_rows(pooled @ proj_hidden)
            sem[l].append(_cosine(hv, text_vec))
            geo[l].append(_cosine(hv, geo_vec))

    rows = []
    for l in range(n_layers):
        s = np.asarray(sem[l])
        g = np.asarray(geo[l])
        rows.append({
            "layer": l,
            "sem_mean": float(s.mean()), "sem_std": float(s.std()),
            "geo_mean": float(g.mean()), "geo_std": float(g.std()),
            "abs_sem_mean": float(np.abs(s).mean()), "abs_geo_mean": float(np.abs(g).mean()),
        })
    cal_mean, cal_std = random_vector_calibration(d_common, 10000, projection_seed + 1)
    calibration = {"mean": cal_mean, "std": cal_std, "dim": d_common, "n": 10000}
    return ProbeReport(rows=rows, calibration=calibration)


def random_vector_calibration(dim, n, seed):
    """Sample mean/std of cosines between n independent pairs of uniformly
    random unit vectors in R^dim (isotropic Gaussian directions)."""
    if dim < 2:
        raise ValueError("calibration needs dim >= 2")
    if n < 100:
        raise ValueError("calibration needs at least 100 samples")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, dim))
    b = rng.standard_normal((n, dim))
    cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return float(cos.mean()), float(cos.std())


def write_probe_csv(path, report):
    lines = ["layer,sem_mean,sem_std,geo_mean,geo_std,abs_sem_mean,abs_geo_mean"]
    for row in report.rows:
        lines.append(
            f"{row['layer']},{row['sem_mean']:.6f},{row['sem_std']:.6f},"
            f"{row['geo_mean']:.6f},{row['geo_std']:.6f},"
            f"{row['abs_sem_mean']:.6f},{row['abs_geo_mean']:.6f}"
        )
    cal = report.calibration
    lines.append(f"calibration,{cal['mean']:.6f},{cal['std']:.6f},,,dim={cal['dim']},n={cal['n']}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
