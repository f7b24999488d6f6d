"""Model configuration and the named, grouped parameter collection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterable, Iterator

import numpy as np

from ..errors import ConfigError
from ..ndgrad import Tensor

GROUPS = (
    "embeddings",
    "E_w2w",
    "E_p2p",
    "D_t2t",
    "D_w2w",
    "attn_gamma",
    "attn_beta",
    "attn_alpha",
    "stop",
    "thread_rep",
)

# frozen during transfer: everything except the word decoder and the three attentions
DEFAULT_FREEZE = ("embeddings", "E_w2w", "E_p2p", "D_t2t", "stop", "thread_rep")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 100
    vocab_size: int = 8004
    p_max: int = 20
    q_max: int = 15
    n_max: int = 25
    k_max: int = 5
    dropout_rate: float = 0.2
    attn_dim: int | None = None
    init_std: float = 0.1

    def __post_init__(self):
        for f in ("d", "vocab_size", "p_max", "q_max", "n_max", "k_max"):
            if getattr(self, f) < 1:
                raise ConfigError(f"ModelConfig.{f} must be positive, got {getattr(self, f)}")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover the 4 reserved ids")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.attn_dim is None:
            object.__setattr__(self, "attn_dim", self.d)
        if self.attn_dim < 1 or self.init_std <= 0:
            raise ConfigError("attn_dim and init_std must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys {sorted(unknown)}")
        return cls(**obj)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, a, v = cfg.d, cfg.attn_dim, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embeddings.weight": (v, d)}
    for group, n_in in (("E_w2w", d), ("E_p2p", 2 * d)):
        for side in ("fwd", "bwd"):
            shapes[f"{group}.{side}.w_ih"] = (n_in, 4 * d)
            shapes[f"{group}.{side}.w_hh"] = (d, 4 * d)
            shapes[f"{group}.{side}.b"] = (4 * d,)
    shapes.update(
        {
            "D_t2t.w_ih": (3 * d, 4 * d),
            "D_t2t.w_hh": (d, 4 * d),
            "D_t2t.b": (4 * d,),
            "D_t2t.h0": (d,),
            "D_t2t.c0": (d,),
            "D_t2t.prev_word0": (d,),
        }
    )
    for group in ("attn_gamma", "attn_beta", "attn_alpha"):
        query_dim = d
        shapes[f"{group}.w_key"] = (2 * d, a)
        shapes[f"{group}.w_query"] = (query_dim, a)
        shapes[f"{group}.b_query"] = (a,)
        shapes[f"{group}.v"] = (a,)
    shapes.update(
        {
            "stop.w": (d, 1),
            "stop.b": (1,),
            "thread_rep.w1": (4 * d, d),
            "thread_rep.b1": (d,),
            "thread_rep.w2": (d, d),
            "thread_rep.b2": (d,),
            "D_w2w.init_h.w": (d, d),
            "D_w2w.init_h.b": (d,),
            "D_w2w.init_c.w": (d, d),
            "D_w2w.init_c.b": (d,),
            "D_w2w.w_ih": (3 * d, 4 * d),
            "D_w2w.w_hh": (d, 4 * d),
            "D_w2w.b": (4 * d,),
            "D_w2w.out.w": (3 * d, v),
            "D_w2w.out.b": (v,),
        }
    )
    return shapes


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


def _is_bias_or_state(name: str) -> bool:
    last = name.rsplit(".", 1)[-1]
    return last.startswith("b") or last in ("h0", "c0", "prev_word0")


class Parameters:
    """Named tensors grouped by sub-network, each group with a frozen flag.

    A frozen group's tensors have ``requires_grad=False``, so they neither
    receive gradients nor optimizer updates.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor], frozen: Iterable[str] = ()):
        expected = parameter_shapes(config)
        if set(tensors) != set(expected):
            missing, extra = set(expected) - set(tensors), set(tensors) - set(expected)
            raise ConfigError(f"parameter names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in tensors.items():
            if t.shape != expected[name]:
                raise ConfigError(f"{name}: shape {t.shape} does not match config {expected[name]}")
            t.name = name
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}
        self._frozen: set[str] = set()
        self.set_frozen(frozen)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["embeddings.weight"].dtype

    @property
    def frozen(self) -> frozenset[str]:
        return frozenset(self._frozen)

    def set_frozen(self, groups: Iterable[str]) -> None:
        groups = set(groups)
        unknown = groups - set(GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups {sorted(unknown)}; known: {list(GROUPS)}")
        self._frozen = groups
        for name, t in self.tensors.items():
            t.requires_grad = group_of(name) not in groups

    def group(self, group: str) -> dict[str, Tensor]:
        if group not in GROUPS:
            raise ConfigError(f"unknown parameter group {group!r}")
        return {n: t for n, t in self.tensors.items() if group_of(n) == group}

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.tensors.items() if group_of(n) not in self._frozen}

    def n_values(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def copy(self, dtype=None) -> "Parameters":
        tensors = {n: Tensor(t.data.astype(dtype or t.dtype, copy=True)) for n, t in self.tensors.items()}
        return Parameters(self.config, tensors, self._frozen)

    def astype(self, dtype) -> "Parameters":
        return self.copy(dtype)


def init_parameters(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Parameters:
    """Weights ~ N(0, init_std); biases and learned initial states start at 0,
    except LSTM forget-gate biases which start at 1."""
    rng = np.random.default_rng(seed)
    d = config.d
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if _is_bias_or_state(name):
            arr = np.zeros(shape)
            if name.endswith(".b") and shape == (4 * d,) and group_of(name) in ("E_w2w", "E_p2p", "D_t2t", "D_w2w"):
                arr[d : 2 * d] = 1.0
        else:
            arr = rng.normal(0.0, config.init_std, size=shape)
        tensors[name] = Tensor(arr.astype(dtype))
    return Parameters(config, tensors)
