"""The prediction network: a missing-value-aware first dense layer, a time
embedding of per-feature staleness, an LSTM cell with missing-indicator
gate terms, three attention heads over the hidden states, and the two
task heads (hemoglobin regression, anemia-degree classification)."""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import data as D

N_CLASSES = 4


@dataclass(frozen=True)
class ModelConfig:
    k: int                          # feature columns
    window: int                     # visits per input window
    hidden: int                     # LSTM width
    n_extras: int = len(D.UC2_FEATURES)
    use_case: int = 1
    attn_scale: str = "k"           # "k" (verbatim) or "h"
    use_nandense: bool = True       # False: mean-imputed standard dense
    at1: bool = True                # general attention
    at2: bool = True                # feature-level attention
    at3: bool = True                # label-level attention
    target_mean: float = 0.0        # denormalization of the regression head
    target_std: float = 1.0

    def canonical(self) -> str:
        fields = sorted(self.__dict__.items())
        return ";".join(f"{k}={v!r}" for k, v in fields)

    @property
    def scale(self) -> float:
        return math.sqrt(self.k if self.attn_scale == "k" else self.hidden)


class HgbNetParams:
    """All learnable arrays keyed by dotted group.name."""

    def __init__(self, arrays: dict):
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def copy(self) -> "HgbNetParams":
        return HgbNetParams({k: v.copy() for k, v in self.arrays.items()})

    def n_scalars(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())


def _glorot(rng, shape):
    a = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-a, a, size=shape)


def init_params(config: ModelConfig, seed: int) -> HgbNetParams:
    """Symmetric-breaking uniform init for weights, zeros for biases and
    the missing-value compensation vector."""
    rng = np.random.default_rng(seed)
    k, h, t = config.k, config.hidden, config.window
    h2 = max(h // 2, 1)
    arrays = {}

    def weight(name, shape):
        arrays[name] = _glorot(rng, shape)

    def zero(name, shape):
        arrays[name] = np.zeros(shape)

    weight("nandense.W", (k, k))
    zero("nandense.b", (1, k))
    zero("nandense.w_c", (1, k))
    for p in ("W_e1", "b_e1", "W_e2", "b_e2"):
        if p.startswith("W"):
            weight(f"te.{p}", (1, k))
        else:
            zero(f"te.{p}", (1, k))
    for g in "fioc":
        weight(f"lstm.W_{g}", (h, k))
        weight(f"lstm.U_{g}", (h, h))
        weight(f"lstm.V_{g}", (h, k))
        zero(f"lstm.b_{g}", (1, h))
    weight("feat_attn.W_h", (1, h))
    zero("feat_attn.b_h", (1, t))
    weight("feat_attn.W_g", (k, t))
    weight("label_attn.W_d1", (1, 1))
    zero("label_attn.b_d1", (1, 1))
    weight("label_attn.W_d2", (1, 1))
    zero("label_attn.b_d2", (1, 1))
    for head, out in (("head_reg", 1), ("head_cls", N_CLASSES)):
        weight(f"{head}.W1", (h, h))
        zero(f"{head}.b1", (1, h))
        weight(f"{head}.W2", (h, h2))
        zero(f"{head}.b2", (1, h2))
        weight(f"{head}.W3", (h2, out))
        zero(f"{head}.b3", (1, out))
    if config.use_case == 2:
        weight("uc2.W", (2 * config.n_extras, h))
        zero("uc2.b", (1, h))
    return HgbNetParams(arrays)


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Stacked, normalized, mask-resolved inputs for a list of samples."""
    x: np.ndarray                   # B x T x K, poison resolved through m
    m: np.ndarray                   # B x T x K
    e_norm: np.ndarray              # B x T x K, staleness / delta_max
    delta_norm: np.ndarray          # B x T
    uc2: np.ndarray                 # B x 2L, [values, mask]
    y_hgb: np.ndarray               # B, g/dL truth
    y_cls: np.ndarray               # B
    buckets: np.ndarray             # B
    sample_ids: tuple

    @property
    def size(self) -> int:
        return self.x.shape[0]


def make_batch(samples, stats: D.NormStats, catalog: D.FeatureCatalog) -> Batch:
    b = len(samples)
    if b == 0:
        raise ValueError("empty batch")
    t, k = samples[0].x.shape
    l = len(D.UC2_FEATURES)
    x = np.zeros((b, t, k))
    m = np.zeros((b, t, k))
    e = np.zeros((b, t, k))
    delta = np.zeros((b, t))
    uc2 = np.zeros((b, 2 * l))
    y_hgb = np.zeros(b)
    y_cls = np.zeros(b, dtype=np.int64)
    buckets = np.zeros(b)
    for i, s in enumerate(samples):
        x[i] = D.normalize_window(s, stats)
        m[i] = s.m
        e[i] = s.e / s.delta_max
        delta[i] = s.delta / s.delta_max
        vals, mask = D.normalize_uc2(s, stats, catalog)
        uc2[i, :l] = vals
        uc2[i, l:] = mask
        y_hgb[i] = s.target_hgb
        y_cls[i] = s.target_class
        buckets[i] = s.bucket
    return Batch(x, m, e, delta, uc2, y_hgb, y_cls, buckets,
                 tuple(s.sample_id for s in samples))


# ---------------------------------------------------------------------------
# layers


def wrap_params(params: HgbNetParams) -> dict:
    return {name: ad.parameter(arr) for name, arr in params.arrays.items()}


def nandense_forward(x, m, p, use_nandense: bool = True) -> ad.Node:
    """First dense layer over a B×K input whose masked entries are already
    resolved to zero, with the observed-count bias compensation.

    With no missing values the compensation reduces to the plain bias; with
    everything missing each output neuron emits its compensation weight.
    """
    x = x if isinstance(x, ad.Node) else ad.constant(x)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != x.value.shape:
        raise ad.ShapeError("nandense: mask and input shapes differ",
                            m.shape, x.value.shape)
    k = x.value.shape[1]
    out = ad.matmul(x, p["nandense.W"])
    if not use_nandense:
        return ad.add(out, ad.repeat_rows(p["nandense.b"], x.value.shape[0]))
    q = m.sum(axis=1, keepdims=True)
    r = k - q
    comp = ad.add(ad.matmul(ad.constant(q), p["nandense.b"]),
                  ad.matmul(ad.constant(r), p["nandense.w_c"]))
    return ad.add(out, ad.mul(comp, 1.0 / k))


def time_embed(e_row, delta_max: float, p) -> ad.Node:
    """Map per-feature staleness (days) to the learned recency embedding."""
    if delta_max <= 0:
        raise ValueError("delta_max must be positive")
    e_row = np.asarray(e_row, dtype=np.float64)
    if (e_row < 0).any():
        raise ValueError("staleness must be non-negative")
    return _time_embed_norm(ad.constant(e_row / delta_max), p)


def _time_embed_norm(e_norm: ad.Node, p) -> ad.Node:
    b = e_norm.value.shape[0]
    f = ad.add(ad.mul(ad.repeat_rows(p["te.W_e1"], b), e_norm),
               ad.repeat_rows(p["te.b_e1"], b))
    damp = ad.sub(1.0, ad.tanh(ad.mul(f, f)))
    return ad.add(ad.mul(ad.repeat_rows(p["te.W_e2"], b), damp),
                  ad.repeat_rows(p["te.b_e2"], b))


def lstm_m_step(i_t: ad.Node, m_t, h_prev: ad.Node, c_prev: ad.Node, p,
                transposed: dict | None = None):
    """One recurrence step; all four gates take the missing-indicator term."""
    b = i_t.value.shape[0]
    m_node = m_t if isinstance(m_t, ad.Node) else ad.constant(m_t)
    tp = transposed or {name: ad.transpose(p[f"lstm.{name}"])
                        for name in ("W_f", "W_i", "W_o", "W_c",
                                     "U_f", "U_i", "U_o", "U_c",
                                     "V_f", "V_i", "V_o", "V_c")}

    def gate(g):
        z = ad.add(ad.matmul(i_t, tp[f"W_{g}"]), ad.matmul(h_prev, tp[f"U_{g}"]))
        z = ad.add(z, ad.matmul(m_node, tp[f"V_{g}"]))
        return ad.add(z, ad.repeat_rows(p[f"lstm.b_{g}"], b))

    f_t = ad.sigmoid(gate("f"))
    in_t = ad.sigmoid(gate("i"))
    o_t = ad.sigmoid(gate("o"))
    c_t = ad.add(ad.mul(f_t, c_prev), ad.mul(in_t, ad.tanh(gate("c"))))
    h_t = ad.mul(o_t, ad.tanh(c_t))
    return h_t, c_t


def _weighted_sum(h_list, weights: ad.Node) -> ad.Node:
    out = None
    for t, h_t in enumerate(h_list):
        term = ad.scale_rows(h_t, ad.slice_cols(weights, t, t + 1))
        out = term if out is None else ad.add(out, term)
    return out


def general_attention(h_list, scale: float):
    """Dot products of the final hidden state against the earlier ones."""
    t = len(h_list)
    if t < 2:
        raise ValueError("need at least two hidden states")
    h_t = h_list[-1]
    logits = ad.concat_cols([ad.mul(ad.sum_rows(ad.mul(h_t, h_list[i])), 1.0 / scale)
                             for i in range(t - 1)])
    alpha = ad.softmax(logits)
    return alpha, _weighted_sum(h_list[:-1], alpha)


def feature_attention(h_list, e_list, p, scale: float):
    """Attention keyed on the embedded per-feature staleness."""
    t = len(h_list)
    b = h_list[0].value.shape[0]
    if p["feat_attn.b_h"].value.shape[1] != t:
        raise ad.ShapeError("feature attention is tied to the trained window",
                            p["feat_attn.b_h"].value.shape, (1, t))
    w_h_t = ad.transpose(p["feat_attn.W_h"])
    stacked = ad.concat_cols([ad.matmul(h_list[i], w_h_t) for i in range(t)])
    h_star = ad.relu(ad.add(stacked, ad.repeat_rows(p["feat_attn.b_h"], b)))
    logits = []
    for i in range(t - 1):
        u = ad.matmul(e_list[i], p["feat_attn.W_g"])
        logits.append(ad.mul(ad.sum_rows(ad.mul(u, h_star)), 1.0 / scale))
    gamma = ad.softmax(ad.concat_cols(logits))
    return gamma, _weighted_sum(h_list[:-1], gamma)


def label_attention(h_list, delta_norm_cols, p):
    """Attention whose logits are a learned decay of the visit intervals."""
    t = len(h_list)
    b = h_list[0].value.shape[0]
    logits = []
    for i in range(t - 1):
        f = ad.add(ad.mul(ad.repeat_rows(p["label_attn.W_d1"], b), delta_norm_cols[i]),
                   ad.repeat_rows(p["label_attn.b_d1"], b))
        decay = ad.sub(1.0, ad.tanh(ad.mul(f, f)))
        logits.append(ad.add(ad.mul(ad.repeat_rows(p["label_attn.W_d2"], b), decay),
                             ad.repeat_rows(p["label_attn.b_d2"], b)))
    beta = ad.softmax(ad.concat_cols(logits))
    return beta, _weighted_sum(h_list[:-1], beta)


def _mlp_head(h: ad.Node, p, head: str) -> ad.Node:
    b = h.value.shape[0]
    z = ad.relu(ad.add(ad.matmul(h, p[f"{head}.W1"]), ad.repeat_rows(p[f"{head}.b1"], b)))
    z = ad.relu(ad.add(ad.matmul(z, p[f"{head}.W2"]), ad.repeat_rows(p[f"{head}.b2"], b)))
    return ad.add(ad.matmul(z, p[f"{head}.W3"]), ad.repeat_rows(p[f"{head}.b3"], b))


@dataclass
class ForwardTrace:
    hidden: list = field(default_factory=list)   # per-visit B×H values
    alpha: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    fused: np.ndarray | None = None
    head_reg_raw: np.ndarray | None = None       # pre-denormalization
    yhat: np.ndarray | None = None               # g/dL
    logits: np.ndarray | None = None


def forward(batch: Batch, p: dict, config: ModelConfig):
    """(regression output node B×1 in g/dL, class-logit node B×4, trace)."""
    b, t, k = batch.x.shape
    if t != config.window or k != config.k:
        raise ad.ShapeError("input window does not match the trained model",
                            (t, k), (config.window, config.k))

    transposed = {name: ad.transpose(p[f"lstm.{name}"])
                  for name in ("W_f", "W_i", "W_o", "W_c",
                               "U_f", "U_i", "U_o", "U_c",
                               "V_f", "V_i", "V_o", "V_c")}
    h_prev = ad.constant(np.zeros((b, config.hidden)))
    c_prev = ad.constant(np.zeros((b, config.hidden)))
    h_list, e_list, delta_cols = [], [], []
    for step in range(t):
        x_t = ad.constant(batch.x[:, step, :])
        m_t = batch.m[:, step, :]
        e_t = _time_embed_norm(ad.constant(batch.e_norm[:, step, :]), p)
        i_t = ad.add(nandense_forward(x_t, m_t, p, config.use_nandense), e_t)
        h_prev, c_prev = lstm_m_step(i_t, m_t, h_prev, c_prev, p, transposed)
        h_list.append(h_prev)
        e_list.append(e_t)
        delta_cols.append(ad.constant(batch.delta_norm[:, step:step + 1]))

    trace = ForwardTrace(hidden=[h.value for h in h_list])
    fused = None

    def fuse(node):
        nonlocal fused
        fused = node if fused is None else ad.add(fused, node)

    if config.at1:
        alpha, h_a = general_attention(h_list, config.scale)
        trace.alpha = alpha.value
        fuse(h_a)
    if config.at2:
        gamma, h_g = feature_attention(h_list, e_list, p, config.scale)
        trace.gamma = gamma.value
        fuse(h_g)
    if config.at3:
        beta, h_b = label_attention(h_list, delta_cols, p)
        trace.beta = beta.value
        fuse(h_b)
    if fused is None:
        # all attention heads ablated: fall back to the final hidden state
        fused = h_list[-1]

    if config.use_case == 2:
        fused = ad.add(fused, ad.add(ad.matmul(ad.constant(batch.uc2), p["uc2.W"]),
                                     ad.repeat_rows(p["uc2.b"], b)))
    trace.fused = fused.value

    raw = _mlp_head(fused, p, "head_reg")
    yhat = ad.add(ad.mul(raw, config.target_std), config.target_mean)
    logits = _mlp_head(fused, p, "head_cls")
    trace.head_reg_raw = raw.value
    trace.yhat = yhat.value
    trace.logits = logits.value
    return yhat, logits, trace


def predict_class(logits_value: np.ndarray) -> np.ndarray:
    """Argmax with lowest-index tie-break."""
    return np.argmax(logits_value, axis=1)


# ---------------------------------------------------------------------------
# losses


def loss_regression(yhat: ad.Node, y_true) -> ad.Node:
    """Root of the batch mean squared error."""
    y = np.asarray(y_true, dtype=np.float64).reshape(-1, 1)
    if y.shape[0] == 0:
        raise ValueError("empty batch")
    diff = ad.sub(yhat, ad.constant(y))
    return ad.sqrt(ad.mean_all(ad.square(diff)))


def loss_classification(logits: ad.Node, classes) -> ad.Node:
    """Mean negative log softmax probability of the true class."""
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size == 0:
        raise ValueError("empty batch")
    b, n = logits.value.shape
    onehot = np.zeros((b, n))
    onehot[np.arange(b), classes] = 1.0
    rowmax = np.repeat(logits.value.max(axis=1, keepdims=True), n, axis=1)
    shifted = ad.sub(logits, ad.constant(rowmax))
    lse = ad.log(ad.sum_rows(ad.exp(shifted)))
    picked = ad.sum_rows(ad.mul(shifted, ad.constant(onehot)))
    return ad.mean_all(ad.sub(lse, picked))


def task_loss(yhat, logits, batch: Batch, task: str) -> ad.Node:
    if task == "regression":
        return loss_regression(yhat, batch.y_hgb)
    if task == "classification":
        return loss_classification(logits, batch.y_cls)
    if task == "both":
        return ad.add(loss_regression(yhat, batch.y_hgb),
                      loss_classification(logits, batch.y_cls))
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointMismatchError(RuntimeError):
    pass


def config_fingerprint(config: ModelConfig, catalog: D.FeatureCatalog | None = None,
                       stats: D.NormStats | None = None) -> str:
    h = hashlib.sha256()
    h.update(config.canonical().encode())
    if catalog is not None:
        h.update("|".join(c.name for c in catalog.columns).encode())
    if stats is not None:
        h.update(b"".join(float(v).hex().encode() for v in stats.mean))
        h.update(b"".join(float(v).hex().encode() for v in stats.std))
    return h.hexdigest()


def save_checkpoint(path, params: HgbNetParams, config: ModelConfig,
                    fingerprint: str) -> None:
    """Versioned text container; values are float hex so the round trip is
    bit-exact."""
    lines = ["hgbnet-checkpoint", "format_version=1",
             f"fingerprint={fingerprint}", f"config={config.canonical()}"]
    for name, arr in params.arrays.items():
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {dims}")
        lines.append(" ".join(float(v).hex() for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _config_from_canonical(text: str) -> ModelConfig:
    kwargs = {}
    for part in text.split(";"):
        key, raw = part.split("=", 1)
        kwargs[key] = ast.literal_eval(raw)
    return ModelConfig(**kwargs)


def load_checkpoint(path, expected_fingerprint: str | None = None):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 4 or lines[0] != "hgbnet-checkpoint" \
            or lines[1] != "format_version=1":
        raise CheckpointMismatchError(f"{path}: not a recognized checkpoint")
    fingerprint = lines[2].split("=", 1)[1]
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointMismatchError(
            f"{path}: fingerprint {fingerprint[:12]}... does not match the "
            f"resolved configuration {expected_fingerprint[:12]}...")
    config = _config_from_canonical(lines[3].split("=", 1)[1])
    arrays = {}
    i = 4
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "tensor":
            raise CheckpointMismatchError(f"{path}: malformed tensor header")
        name = head[1]
        shape = tuple(int(d) for d in head[2:])
        values = [float.fromhex(tok) for tok in lines[i + 1].split()]
        arrays[name] = np.array(values).reshape(shape)
        i += 2
    return HgbNetParams(arrays), config, fingerprint


def with_denorm(config: ModelConfig, stats: D.NormStats,
                catalog: D.FeatureCatalog) -> ModelConfig:
    """Bake the hemoglobin denormalization constants into the config."""
    idx = catalog.hgb_index
    return replace(config, target_mean=float(stats.mean[idx]),
                   target_std=float(stats.std[idx]))
