"""Causal adjustment module: distribution lookups -> triplet-level logit factors.

Per relationship instance the four looked-up distributions are embedded to
E-dim tokens and fused along the object -> co-occurrence -> pair ->
predicate chain by three transformer blocks. Each stage feeds a two-token
sequence, mean-pools the block output and applies ReLU. The last stage is
projected to N_r non-negative factors that multiply the frozen base logits.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .base_model import FrozenBaseModel, logits_matrix
from .dataset import Dataset
from .distributions import BatchSubDistributions, DistributionSet, batch_lookup
from .errors import ConfigurationError, DomainError, FormatError, ShapeError
from .nn import checkpoint
from .nn.layers import (
    TransformerBlockParams, glorot, init_transformer_block, linear, ones, transformer_block, zeros,
)
from .nn.tensor import Tensor, log_softmax, no_grad, stack

ADJUST_MODES = ("literal", "softplus")
_BLOCKS = ("t_oc", "t_ocp", "t_cppr")
OUT_INIT_SCALE = 0.1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 12
    learning_rate: float = 0.01
    epochs: int = 20
    seed: int = 0
    e_dim: int = 128
    n_heads: int = 4
    ffn_mult: int = 2
    dropout: float = 0.1
    adjust_mode: str = "literal"
    identity_factors: bool = False  # ablation: factors pinned to 1, nothing is trained

    _ALIASES = {"batch": "batch_size", "lr": "learning_rate", "heads": "n_heads"}

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.adjust_mode not in ADJUST_MODES:
            raise ConfigurationError(f"adjust_mode must be one of {ADJUST_MODES}")
        if self.e_dim < 1 or self.n_heads < 1 or self.e_dim % self.n_heads:
            raise ConfigurationError(f"e_dim {self.e_dim} must be a positive multiple of heads {self.n_heads}")
        if self.ffn_mult < 1:
            raise ConfigurationError("ffn_mult must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        mapped = {}
        for key, value in raw.items():
            key = cls._ALIASES.get(key, key)
            if key not in known:
                raise ConfigurationError(f"unknown train config key '{key}'")
            mapped[key] = value
        return cls(**mapped)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CAModuleParams:
    n_objects: int
    n_predicates: int
    e_dim: int
    n_heads: int
    ffn_mult: int
    dropout: float
    tensors: dict[str, Tensor]
    blocks: dict[str, TransformerBlockParams]

    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.tensors)
        for bname, block in self.blocks.items():
            for tname, t in block.named_tensors().items():
                out[f"{bname}.{tname}"] = t
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def copy(self) -> "CAModuleParams":
        clone = init_camodule(
            self.n_objects, self.n_predicates, self.e_dim, 0,
            self.n_heads, self.ffn_mult, self.dropout,
        )
        clone.load_state_dict(self.state_dict())
        return clone

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_tensors()
        if set(state) != set(named):
            raise FormatError(f"parameter names differ: {sorted(set(state) ^ set(named))}")
        for k, t in named.items():
            if state[k].shape != t.shape:
                raise FormatError(f"parameter '{k}' has shape {state[k].shape}, expected {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def to_json(self) -> dict:
        return {
            "kind": "camodule",
            "n_objects": self.n_objects,
            "n_predicates": self.n_predicates,
            "e_dim": self.e_dim,
            "n_heads": self.n_heads,
            "ffn_mult": self.ffn_mult,
            "dropout": self.dropout,
            "params": checkpoint.pack(self.state_dict()),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "CAModuleParams":
        if payload.get("kind") != "camodule":
            raise FormatError("not a CAModule checkpoint")
        params = init_camodule(
            payload["n_objects"], payload["n_predicates"], payload["e_dim"], 0,
            payload["n_heads"], payload["ffn_mult"], payload["dropout"],
        )
        params.load_state_dict(checkpoint.unpack(payload["params"]))
        return params


def save_camodule(params: CAModuleParams, path: str | Path, extra: dict | None = None) -> None:
    payload = params.to_json()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_camodule(path: str | Path) -> CAModuleParams:
    return CAModuleParams.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def init_camodule(
    n_objects: int,
    n_predicates: int,
    e_dim: int = 128,
    seed: int = 0,
    n_heads: int = 4,
    ffn_mult: int = 2,
    dropout: float = 0.1,
) -> CAModuleParams:
    if min(n_objects, n_predicates, e_dim, n_heads, ffn_mult) < 1:
        raise ConfigurationError("CAModule dimensions must be positive")
    if e_dim % n_heads:
        raise ConfigurationError(f"e_dim {e_dim} is not divisible by {n_heads} heads")
    rng = np.random.default_rng(seed)
    tensors = {
        "w_o": glorot(2, e_dim, rng), "b_o": zeros(e_dim),
        "w_c": glorot(1, e_dim, rng), "b_c": zeros(e_dim),
        "w_p": glorot(1, e_dim, rng), "b_p": zeros(e_dim),
        "w_r": glorot(n_predicates, e_dim, rng), "b_r": zeros(e_dim),
    }
    blocks = {
        name: init_transformer_block(e_dim, ffn_mult * e_dim, n_heads, dropout, rng)
        for name in _BLOCKS
    }
    # factors start tightly around 1 (near-identity adjustment); a full-scale head
    # lets early SGD steps push every output below zero, where the ReLU never recovers
    tensors["out_w"] = glorot(e_dim, n_predicates, rng)
    tensors["out_w"].data *= OUT_INIT_SCALE
    tensors["out_b"] = ones(n_predicates)
    return CAModuleParams(n_objects, n_predicates, e_dim, n_heads, ffn_mult, dropout, tensors, blocks)


def _fuse(a: Tensor, b: Tensor, block: TransformerBlockParams, train_mode: bool, rng) -> Tensor:
    seq = stack([a, b], axis=1)  # (B, 2, E)
    return transformer_block(seq, block, train_mode, rng).mean(axis=1)


def camodule_forward(
    params: CAModuleParams,
    sub: BatchSubDistributions,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Adjustment factors of shape (|B|, N_r), all entries >= 0."""
    t = params.tensors
    n = len(sub)
    if sub.O_B.shape != (n, 2) or sub.P_B.shape != (n,) or sub.R_B.shape != (params.n_predicates,):
        raise ShapeError(
            f"sub-distribution shapes {sub.O_B.shape}, {sub.C_B.shape}, {sub.P_B.shape}, "
            f"{sub.R_B.shape} do not fit a module with N_r={params.n_predicates}"
        )
    # frequencies are fed relative to the uniform distribution so a typical entry is O(1)
    n_o, n_r = params.n_objects, params.n_predicates
    f_o = linear(Tensor(sub.O_B * n_o), t["w_o"], t["b_o"]).relu()
    f_c = linear(Tensor(sub.C_B.reshape(n, 1)), t["w_c"], t["b_c"]).relu()
    f_p = linear(Tensor(sub.P_B.reshape(n, 1) * n_o * n_o), t["w_p"], t["b_p"]).relu()
    # R_B is the same for every row: embed once, broadcast over the batch
    f_r = linear(Tensor(sub.R_B.reshape(1, -1) * n_r), t["w_r"], t["b_r"]).relu()
    f_r = f_r + Tensor(np.zeros((n, params.e_dim)))

    f_oc = _fuse(f_o, f_c, params.blocks["t_oc"], train_mode, rng).relu()
    f_ocp = _fuse(f_oc, f_p, params.blocks["t_ocp"], train_mode, rng).relu()
    pooled = _fuse(f_ocp, f_r, params.blocks["t_cppr"], train_mode, rng)
    return linear(pooled, t["out_w"], t["out_b"]).relu()


def adjustment_factors(params: CAModuleParams, sub: BatchSubDistributions) -> np.ndarray:
    with no_grad():
        return camodule_forward(params, sub, train_mode=False).data


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def adjust_logits(logits, factors, mode: str = "literal"):
    """Elementwise ``logits * factors``; ``softplus`` mode shifts logits positive first.

    Accepts arrays or Tensors; returns a Tensor if either input is one.
    """
    if mode not in ADJUST_MODES:
        raise ConfigurationError(f"unknown adjust mode '{mode}'")
    if tuple(np.shape(getattr(logits, "data", logits))) != tuple(np.shape(getattr(factors, "data", factors))):
        raise ShapeError(
            f"logits {np.shape(getattr(logits, 'data', logits))} and factors "
            f"{np.shape(getattr(factors, 'data', factors))} differ in shape"
        )
    if isinstance(logits, Tensor) or isinstance(factors, Tensor):
        logits = logits if isinstance(logits, Tensor) else Tensor(logits)
        if mode == "softplus":
            logits = logits.softplus()
        return logits * factors
    logits = np.asarray(logits, dtype=np.float64)
    if mode == "softplus":
        logits = _softplus(logits)
    return logits * np.asarray(factors, dtype=np.float64)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)
    return -logp[np.arange(len(targets)), targets].mean()


def _sgd_step(params: list[Tensor], lr: float) -> None:
    for p in params:
        if p.grad is not None:
            p.data = p.data - lr * p.grad
        p.grad = None


def train_camodule(
    base: FrozenBaseModel | None,
    dists: DistributionSet,
    train: Dataset,
    cfg: TrainConfig,
    logits: np.ndarray | None = None,
) -> tuple[CAModuleParams, list[float]]:
    """Fit the module by mini-batch gradient descent on adjusted-logit cross-entropy.

    The base model only supplies constant logits; pass ``logits`` (aligned
    with ``train`` instance order) to use an external backbone instead.
    Returns the parameters and the per-epoch mean training loss.
    """
    n_r = train.vocabulary.n_predicates
    if dists.n_predicates != n_r or (base is not None and base.n_predicates != n_r):
        raise ConfigurationError("predicate count differs between base model, distributions and corpus")
    if dists.n_objects != train.vocabulary.n_objects:
        raise ConfigurationError("object count differs between distributions and corpus")
    instances = list(train)
    if logits is None:
        if base is None:
            raise ConfigurationError("need a base model or explicit logits")
        logits = logits_matrix(base, instances)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (len(instances), n_r):
        raise ShapeError(f"logits shape {logits.shape} does not match ({len(instances)}, {n_r})")

    params = init_camodule(
        train.vocabulary.n_objects, n_r, cfg.e_dim, cfg.seed, cfg.n_heads, cfg.ffn_mult, cfg.dropout
    )
    rng = np.random.default_rng([cfg.seed, 7])
    a = train.arrays
    subj, obj, gold = a["subject"], a["object"], a["predicate"]
    tensors = params.parameters()
    curve = []
    n = len(instances)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.identity_factors:
                with no_grad():
                    adj = adjust_logits(Tensor(logits[idx]), np.ones((len(idx), n_r)), cfg.adjust_mode)
                    loss = cross_entropy(adj, gold[idx])
            else:
                sub = batch_lookup(dists, subj[idx], obj[idx])
                factors = camodule_forward(params, sub, train_mode=True, rng=rng)
                loss = cross_entropy(adjust_logits(logits[idx], factors, cfg.adjust_mode), gold[idx])
                loss.backward()
                _sgd_step(tensors, cfg.learning_rate)
            total += loss.item() * len(idx)
        curve.append(total / n)
    return params, curve


def materialize_adjustment_tensor(params: CAModuleParams, dists: DistributionSet) -> np.ndarray:
    """Factors for every ordered category pair, laid out as [subject, predicate, object]."""
    n_o = dists.n_objects
    subjects = np.repeat(np.arange(n_o), n_o)
    objects = np.tile(np.arange(n_o), n_o)
    f = adjustment_factors(params, batch_lookup(dists, subjects, objects))
    return f.reshape(n_o, n_o, -1).transpose(0, 2, 1).copy()


def vanilla_adjustment(R) -> np.ndarray:
    """Inverse-frequency factor per predicate; unseen predicates get 0."""
    R = np.asarray(R, dtype=np.float64)
    if not (R > 0).any():
        raise DomainError("relationship distribution has no positive entry")
    out = np.zeros_like(R)
    np.divide(1.0, R, out=out, where=R > 0)
    return out
