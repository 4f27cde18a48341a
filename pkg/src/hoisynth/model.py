"""The denoiser: a transformer backbone with two adapters.

* The waypoint branch ("kha") is a structural copy of the backbone,
  conditioned on the masked waypoint grid through an extra input MLP; its
  per-layer features flow into the main branch through zero-initialized
  linear layers ("zero"), so a fresh model is exactly the unadapted model.
* The geometry branch ("gapa") runs once after the last backbone layer:
  distance-biased cross-attention from motion features onto object geometry
  tokens, added back as a residual correction before the output projection.

Parameters live in a flat {name: Tensor} dict with the checkpoint namespaces
backbone. / kha. / zero. / gapa. / embed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .motion import COND_DIM, CONTACT_DIM, HUMAN_DIM, MaskedCondition, OBJECT_DIM, STATE_DIM

GEO_DIM = 256  # geometry token width
TEXT_TABLE_SIZE = 4096
TEXT_EMBED_DIM = 64
TEXT_TABLE_SEED = 74520  # frozen hashed-token embedding table
PSI_HIDDEN = 32  # hidden width of the displacement MLP inside the geo adapter
GEO_LATENT = 3  # latent coordinate dim of the phi projectors

CHECKPOINT_MAGIC = b"MAMI"
CHECKPOINT_VERSION = 1

_BRANCHES = ("backbone.", "kha.")


@dataclass
class ConditionBundle:
    """Raw conditioning inputs; embeddings are recomputed inside the forward
    pass so gradients reach the embedding parameters."""

    text: str
    masked: MaskedCondition
    bps_deltas: np.ndarray  # (N, 3)


# -- parameter construction ------------------------------------------------------


def _linear_init(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)


def _add_linear(params, rng, name, fan_in, fan_out, zero=False, bias=True):
    w = np.zeros((fan_in, fan_out)) if zero else _linear_init(rng, fan_in, fan_out)
    params[name + ".weight"] = nm.Tensor(w, requires_grad=True)
    if bias:
        params[name + ".bias"] = nm.Tensor(np.zeros(fan_out), requires_grad=True)


def _add_layer_norm(params, name, d):
    params[name + ".gain"] = nm.Tensor(np.ones(d), requires_grad=True)
    params[name + ".bias"] = nm.Tensor(np.zeros(d), requires_grad=True)


def _add_branch(params, rng, prefix, cfg):
    d, d_ff = cfg.d_model, cfg.d_ff
    _add_linear(params, rng, prefix + "in_proj", STATE_DIM + CONTACT_DIM, d)
    _add_linear(params, rng, prefix + "time_mlp.fc1", d, d)
    _add_linear(params, rng, prefix + "time_mlp.fc2", d, d)
    _add_linear(params, rng, prefix + "text_proj", d, d)
    for l in range(cfg.layers):
        base = f"{prefix}layers.{l}."
        _add_layer_norm(params, base + "ln1", d)
        for w in ("wq", "wk", "wv", "wo"):
            _add_linear(params, rng, base + "attn." + w, d, d)
        _add_layer_norm(params, base + "ln2", d)
        _add_linear(params, rng, base + "ff.fc1", d, d_ff)
        _add_linear(params, rng, base + "ff.fc2", d_ff, d)
    _add_layer_norm(params, prefix + "final_ln", d)
    _add_linear(params, rng, prefix + "out_proj", d, STATE_DIM)


def init_params(cfg, seed=0):
    """All learnable tensors for the full model (both adapters included;
    toggles select at run time). Injection layers start at exact zero."""
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    params = {}
    _add_linear(params, rng, "embed.text_proj", TEXT_EMBED_DIM, d, bias=False)
    _add_branch(params, rng, "backbone.", cfg)
    _add_branch(params, rng, "kha.", cfg)
    _add_linear(params, rng, "kha.wp_mlp.fc1", COND_DIM, d)
    _add_linear(params, rng, "kha.wp_mlp.fc2", d, d)
    for l in range(cfg.layers):
        _add_linear(params, rng, f"zero.{l}", d, d, zero=True)
    # geometry adapter; the encoder MLP maps N*3 -> 256 through a hidden
    # width tied to the model width (keeps the adapter light at small configs)
    n_per = cfg.bps_n // cfg.gapa_tokens
    if n_per * cfg.gapa_tokens != cfg.bps_n:
        raise ValueError("bps_n must be divisible by gapa_tokens")
    _add_linear(params, rng, "gapa.bps_mlp.fc1", n_per * 3, d)
    _add_linear(params, rng, "gapa.bps_mlp.fc2", d, GEO_DIM)
    _add_linear(params, rng, "gapa.geo_proj", GEO_DIM, d)
    _add_linear(params, rng, "gapa.phi_m", d, GEO_LATENT)
    _add_linear(params, rng, "gapa.phi_o", d, GEO_LATENT)
    for w in ("wq", "wk", "wv", "wo"):
        _add_linear(params, rng, "gapa.attn." + w, d, d)
    _add_linear(params, rng, "gapa.psi.fc1", GEO_LATENT, PSI_HIDDEN)
    _add_linear(params, rng, "gapa.psi.fc2", PSI_HIDDEN, d // cfg.heads)
    params["gapa.gamma"] = nm.Tensor(np.array([1.0]), requires_grad=True)
    return params


def param_names(cfg):
    return sorted(init_params(cfg, seed=0).keys())


def count_params(params, prefixes=None):
    return sum(
        p.size
        for name, p in params.items()
        if prefixes is None or any(name.startswith(px) for px in prefixes)
    )


def component_param_counts(cfg):
    """Totals per toggle configuration: baseline, +geometry adapter,
    +waypoint branch, full."""
    params = init_params(cfg, seed=0)
    base = count_params(params, ("backbone.", "embed."))
    gapa = count_params(params, ("gapa.",))
    kha = count_params(params, ("kha.", "zero."))
    return {
        "baseline": base,
        "+gapa": base + gapa,
        "+kha": base + kha,
        "full": base + gapa + kha,
    }


# -- embedders --------------------------------------------------------------------


def _fnv1a64(token):
    h = 0xCBF29CE484222325
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


_text_table_cache = None


def _text_table():
    global _text_table_cache
    if _text_table_cache is None:
        rng = np.random.default_rng(TEXT_TABLE_SEED)
        _text_table_cache = rng.standard_normal((TEXT_TABLE_SIZE, TEXT_EMBED_DIM))
    return _text_table_cache


def text_token_vector(text):
    """Whitespace tokens -> 64-bit hash -> frozen table rows, mean pooled.
    Deterministic; the empty string maps to the zero vector (unconditional)."""
    tokens = text.split()
    if not tokens:
        return np.zeros(TEXT_EMBED_DIM)
    table = _text_table()
    rows = [table[_fnv1a64(tok) % TEXT_TABLE_SIZE] for tok in tokens]
    return np.mean(rows, axis=0)


def embed_text(text, params):
    """(1, d) text conditioning vector; the projection is learnable and
    bias-free, so empty text stays exactly zero."""
    pooled = nm.Tensor(text_token_vector(text).reshape(1, TEXT_EMBED_DIM))
    return pooled @ params["embed.text_proj.weight"]


def embed_geometry(bps_deltas, params, tokens=1):
    """(K, 256) geometry tokens from the (N, 3) basis-point deltas. Token j
    encodes the strided slice deltas[j::K] through a shared two-layer MLP."""
    deltas = np.asarray(bps_deltas, dtype=np.float64)
    if deltas.ndim != 2 or deltas.shape[1] != 3:
        raise ValueError(f"bps deltas must be (N, 3), got {deltas.shape}")
    n_per = deltas.shape[0] // tokens
    expected = params["gapa.bps_mlp.fc1.weight"].shape[0]
    if n_per * 3 != expected:
        raise ValueError(f"bps deltas size {deltas.shape[0]} does not match model (expects {expected // 3} per token)")
    flats = [nm.Tensor(deltas[j::tokens].reshape(1, n_per * 3)) for j in range(tokens)]
    flat = nm.concat(flats, axis=0) if tokens > 1 else flats[0]
    h = nm.gelu(_linear(params, "gapa.bps_mlp.fc1", flat))
    return _linear(params, "gapa.bps_mlp.fc2", h)


def broadcast_geo(token, t_frames):
    """Temporal broadcast of a single geometry token to (T, 256) identical
    rows (the per-frame attention consumes one spatial KV token)."""
    token = np.asarray(token).reshape(1, GEO_DIM)
    return np.repeat(token, t_frames, axis=0)


def timestep_embedding(t, d):
    """Fixed sinusoidal embedding of the (1-based) diffusion timestep."""
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if d % 2:
        emb = np.concatenate([emb, np.zeros(1)])
    return emb.reshape(1, d)


_pos_cache = {}


def position_encoding(t_frames, d):
    """Fixed sinusoidal frame-position table (T, d), cached. Added to the
    motion tokens so attention can resolve frame order (no learnable
    parameters involved)."""
    key = (t_frames, d)
    if key not in _pos_cache:
        half = d // 2
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
        ang = np.arange(t_frames)[:, None] * freqs[None, :]
        table = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
        if d % 2:
            table = np.concatenate([table, np.zeros((t_frames, 1))], axis=1)
        _pos_cache[key] = table
    return _pos_cache[key]


# -- forward passes ------------------------------------------------------------------


def _linear(params, name, x):
    bias = params.get(name + ".bias")
    if bias is None:
        return x @ params[name + ".weight"]
    return nm.affine(x, params[name + ".weight"], bias)


def _self_attention(params, base, x, heads):
    """Pre-norm multi-head self-attention over the (S, d) token sequence."""
    s, d = x.shape
    dh = d // heads
    q = _linear(params, base + "wq", x)
    k = _linear(params, base + "wk", x)
    v = _linear(params, base + "wv", x)
    outs = []
    for h in range(heads):
        qh = nm.narrow(q, 1, h * dh, dh)
        kh = nm.narrow(k, 1, h * dh, dh)
        vh = nm.narrow(v, 1, h * dh, dh)
        scores = (qh @ kh.T) / math.sqrt(dh)
        outs.append(nm.softmax_rows(scores) @ vh)
    ctx = nm.concat(outs, axis=1) if heads > 1 else outs[0]
    return _linear(params, base + "wo", ctx)


def _branch_forward(params, cfg, prefix, x_t, t, cond, extra_input=None,
                    injections=None, rng=None, train=False):
    """Shared transformer trunk. Token layout: [timestep, text, T motion
    frames]. Returns (post-final-norm features (T+2, d), per-layer hidden
    states). `extra_input` is added to the projected motion tokens;
    `injections[l]` is added after layer l."""
    contacts = cond.masked.contacts()
    x_in = nm.Tensor(np.concatenate([x_t, contacts], axis=1))
    h = _linear(params, prefix + "in_proj", x_in)
    h = h + nm.Tensor(position_encoding(x_t.shape[0], cfg.d_model))
    if extra_input is not None:
        h = h + extra_input

    t_emb = nm.Tensor(timestep_embedding(t, cfg.d_model))
    t_tok = _linear(params, prefix + "time_mlp.fc2", nm.gelu(_linear(params, prefix + "time_mlp.fc1", t_emb)))
    text_tok = _linear(params, prefix + "text_proj", embed_text(cond.text, params))

    seq = nm.concat([t_tok, text_tok, h], axis=0)
    dropout_p = cfg.dropout if train else 0.0
    hiddens = []
    for l in range(cfg.layers):
        base = f"{prefix}layers.{l}."
        attn = _self_attention(params, base + "attn.", _layer_norm(params, base + "ln1", seq), cfg.heads)
        if dropout_p:
            attn = nm.dropout(attn, dropout_p, rng)
        seq = seq + attn
        ff_in = _layer_norm(params, base + "ln2", seq)
        ff = _linear(params, base + "ff.fc2", nm.gelu(_linear(params, base + "ff.fc1", ff_in)))
        if dropout_p:
            ff = nm.dropout(ff, dropout_p, rng)
        seq = seq + ff
        if injections is not None:
            seq = seq + injections[l]
        hiddens.append(seq)
    return _layer_norm(params, prefix + "final_ln", seq), hiddens


def _layer_norm(params, name, x):
    return nm.layer_norm(x, params[name + ".gain"], params[name + ".bias"])


def backbone_forward(params, cfg, x_t, t, cond, injections=None, rng=None, train=False):
    """Main denoising trunk; injections (if any) come from the waypoint
    branch and are added after each layer."""
    if not 1 <= t <= cfg.steps:
        raise ValueError(f"timestep {t} outside [1, {cfg.steps}]")
    return _branch_forward(params, cfg, "backbone.", x_t, t, cond,
                           injections=injections, rng=rng, train=train)


def kha_forward(params, cfg, x_t, t, cond, rng=None, train=False):
    """Waypoint branch: the backbone copy with the masked-condition embedding
    added at the input. Returns the per-layer features for injection."""
    wp_in = nm.Tensor(cond.masked.grid)
    wp = _linear(params, "kha.wp_mlp.fc2", nm.gelu(_linear(params, "kha.wp_mlp.fc1", wp_in)))
    _, hiddens = _branch_forward(params, cfg, "kha.", x_t, t, cond,
                                 extra_input=wp, rng=rng, train=train)
    return hiddens


def gapa_forward(params, cfg, motion, geo_tokens):
    """Distance-biased cross-attention from (T, d) motion features onto (K,
    256) geometry tokens.

    Both sides project into a shared latent coordinate space; the squared
    coordinate distance enters the attention scores as a learnable negative
    bias, and a displacement MLP is added to the values before aggregation.
    The result is a residual correction on top of the motion features.
    """
    T, d = motion.shape
    K = geo_tokens.shape[0]
    heads = cfg.heads
    dh = d // heads

    g = _linear(params, "gapa.geo_proj", geo_tokens)  # (K, d)
    p_mot = _linear(params, "gapa.phi_m", motion)  # (T, 3)
    p_obj = _linear(params, "gapa.phi_o", g)  # (K, 3)

    delta = p_mot.reshape(T, 1, GEO_LATENT) - p_obj.reshape(1, K, GEO_LATENT)  # (T, K, 3)
    dist2 = (delta * delta).sum(axis=2)  # (T, K)
    bias = params["gapa.gamma"] * dist2

    delta_flat = delta.reshape(T * K, GEO_LATENT)
    psi = _linear(params, "gapa.psi.fc2", nm.gelu(_linear(params, "gapa.psi.fc1", delta_flat)))
    psi = psi.reshape(T, K, dh)

    q = _linear(params, "gapa.attn.wq", motion)
    k = _linear(params, "gapa.attn.wk", g)
    v = _linear(params, "gapa.attn.wv", g)
    outs = []
    for h in range(heads):
        qh = nm.narrow(q, 1, h * dh, dh)
        kh = nm.narrow(k, 1, h * dh, dh)
        vh = nm.narrow(v, 1, h * dh, dh)
        scores = (qh @ kh.T) / math.sqrt(dh) - bias
        attn = nm.softmax_rows(scores)  # (T, K)
        ctx_v = attn @ vh  # (T, dh)
        ctx_psi = (attn.reshape(T, K, 1) * psi).sum(axis=1)  # (T, dh)
        outs.append(ctx_v + ctx_psi)
    ctx = nm.concat(outs, axis=1) if heads > 1 else outs[0]
    return motion + _linear(params, "gapa.attn.wo", ctx)


def denoise(params, cfg, x_t, t, cond, use_kha=None, use_gapa=None,
            rng=None, train=False, collect_hidden=False):
    """Predicted noise for the (T, 216) state at timestep t.

    The waypoint branch runs first (when enabled) and its features enter the
    main trunk through the zero-initialized linears; the geometry adapter
    refines the final features once, before the output projection.
    """
    use_kha = cfg.use_kha if use_kha is None else use_kha
    use_gapa = cfg.use_gapa if use_gapa is None else use_gapa
    x_t = np.asarray(x_t, dtype=np.float64)
    T = x_t.shape[0]
    if x_t.shape != (T, STATE_DIM) or cond.masked.T != T:
        raise ValueError(f"state/condition shape mismatch: {x_t.shape} vs T={cond.masked.T}")

    injections = None
    if use_kha:
        kha_feats = kha_forward(params, cfg, x_t, t, cond, rng=rng, train=train)
        injections = [_linear(params, f"zero.{l}", kha_feats[l]) for l in range(cfg.layers)]
    feats, hiddens = backbone_forward(params, cfg, x_t, t, cond,
                                      injections=injections, rng=rng, train=train)
    motion = nm.narrow(feats, 0, 2, T)  # drop the two condition prefix tokens
    if use_gapa:
        geo_tokens = embed_geometry(cond.bps_deltas, params, tokens=cfg.gapa_tokens)
        motion = gapa_forward(params, cfg, motion, geo_tokens)
    eps_hat = _linear(params, "backbone.out_proj", motion)
    if collect_hidden:
        return eps_hat, hiddens
    return eps_hat


# -- probe protocol -----------------------------------------------------------------


class Denoiser:
    """Thin stateful wrapper binding a config + parameter dict; implements the
    embedding/hidden-state protocol the feature probe consumes."""

    def __init__(self, cfg, params=None, seed=0):
        self.cfg = cfg
        self.params = init_params(cfg, seed=seed) if params is None else params

    def denoise(self, x_t, t, cond, **kw):
        return denoise(self.params, self.cfg, x_t, t, cond, **kw)

    def hidden_states(self, x_t, t, cond):
        _, hiddens = denoise(self.params, self.cfg, x_t, t, cond, collect_hidden=True)
        return [h.data[2:] for h in hiddens]  # motion positions only

    def text_embedding(self, text):
        return embed_text(text, self.params).data.reshape(-1)

    def geo_embedding(self, bps_deltas):
        tok = embed_geometry(bps_deltas, self.params, tokens=self.cfg.gapa_tokens)
        return tok.data.mean(axis=0)


# -- checkpoint format -----------------------------------------------------------------

_KNOWN_EXTRA = ("norm.mean", "norm.std", "sched.beta", "meta.config")


def save_checkpoint(path, params, extras=None):
    """Binary named-tensor checkpoint. Records are sorted by name so the file
    is byte-reproducible; payloads are little-endian float32."""
    records = {name: p.data for name, p in params.items()}
    for name, arr in (extras or {}).items():
        records[name] = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name in sorted(records):
            arr = np.ascontiguousarray(records[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Raw {name: float64 array} map; no name validation (see load_model)."""
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (magic {magic!r})")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            name_len = struct.unpack("<H", head)[0]
            name = fh.read(name_len).decode("utf-8")
            rank = struct.unpack("<B", fh.read(1))[0]
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    return out


def _config_record(cfg):
    return np.array(
        [1.0, cfg.layers, cfg.heads, cfg.d_model, cfg.d_ff, cfg.dropout,
         cfg.steps, cfg.beta_start, cfg.beta_end, cfg.t_frames, cfg.interval,
         cfg.bps_n, float(cfg.use_kha), float(cfg.use_gapa), cfg.gapa_tokens]
    )


def _config_from_record(rec):
    from .config import Config

    rec = np.asarray(rec, dtype=np.float64).reshape(-1)
    if len(rec) != 15 or rec[0] != 1.0:
        raise ValueError("unrecognized meta.config record")
    return Config(
        layers=int(rec[1]), heads=int(rec[2]), d_model=int(rec[3]), d_ff=int(rec[4]),
        dropout=float(rec[5]), steps=int(rec[6]), beta_start=float(rec[7]),
        beta_end=float(rec[8]), t_frames=int(rec[9]), interval=int(rec[10]),
        bps_n=int(rec[11]), use_kha=bool(rec[12]), use_gapa=bool(rec[13]),
        gapa_tokens=int(rec[14]),
    )


def save_model(path, params, cfg, extras=None):
    merged = dict(extras or {})
    merged["meta.config"] = _config_record(cfg)
    save_checkpoint(path, params, merged)


def load_model(path, allow_extra=False):
    """Rebuild (cfg, params Tensors, extras) from a checkpoint; unknown record
    names are rejected unless allow_extra."""
    records = load_checkpoint(path)
    if "meta.config" not in records:
        raise ValueError(f"{path}: checkpoint is missing the meta.config record")
    cfg = _config_from_record(records.pop("meta.config"))
    expected = set(param_names(cfg))
    params, extras = {}, {}
    for name, arr in records.items():
        if name in expected:
            params[name] = nm.Tensor(arr, requires_grad=True)
        elif name in _KNOWN_EXTRA:
            extras[name] = arr
        elif not allow_extra:
            raise ValueError(f"{path}: unknown checkpoint record {name!r} (pass allow_extra to ignore)")
    missing = expected - set(params)
    if missing:
        raise ValueError(f"{path}: checkpoint is missing parameters, e.g. {sorted(missing)[:3]}")
    return cfg, params, extras
