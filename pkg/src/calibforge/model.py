"""
MLP Classifiers with Dropout and Stochastic Depth
==================================================

Network layout for a :class:`ModelSpec` with hidden widths ``(h1, ..., hk)`` and ``B``
residual blocks::

    x ─ Linear(d,h1) ─ relu ─ dropout ─ ... ─ Linear(.,hk) ─ relu ─ dropout
      ─ [h + gate_1·f_1(h)] ─ ... ─ [h + gate_B·f_B(h)] ─ Linear(hk, C) ─ softmax

with ``f_i(h) = W2·relu(W1·h + b1) + b2`` (no batch normalisation). Dropout is inverted:
kept units are scaled by ``1/keep`` during stochastic passes, so the deterministic pass
uses the raw parameters. Block gates drop an entire residual branch at once; the
deterministic pass replaces each gate by its expectation (the survival probability).

A :class:`NoiseMask` holds one row of Bernoulli draws per input row, so every example (and
every Monte-Carlo sample of an example) gets its own mask.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError
from .rng import RngStream
from .tensor import Tensor, add, add_bias, matmul, mul, relu, scale, softmax

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """
    Architecture and stochastic-regularisation settings.

    Args:
        input_dim: Feature count d
        num_classes: Class count C (>= 2)
        hidden: Hidden layer widths; a dropout site follows each hidden activation
        keep_prob: Dropout keep probability, one value for all sites or one per site
        residual_blocks: Number of gated residual blocks at the last hidden width
        survival_prob: Survival probability of every residual block
        activation: Hidden activation (only "relu")
    """
    input_dim: int
    num_classes: int
    hidden: Tuple[int, ...] = ()
    keep_prob: Union[float, Tuple[float, ...]] = 0.5
    residual_blocks: int = 0
    survival_prob: float = 0.8
    activation: str = "relu"

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if isinstance(self.keep_prob, (int, float)):
            keep = (float(self.keep_prob),) * len(hidden)
        else:
            keep = tuple(float(k) for k in self.keep_prob)
            if len(keep) != len(hidden):
                raise ConfigError(
                    f"keep_prob has {len(keep)} entries but there are {len(hidden)} dropout sites"
                )
        object.__setattr__(self, "keep_prob", keep)

        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in hidden):
            raise ConfigError(f"hidden widths must be >= 1, got {hidden}")
        if any(not 0.0 < k <= 1.0 for k in keep):
            raise ConfigError(f"keep probabilities must lie in (0, 1], got {keep}")
        if self.residual_blocks < 0:
            raise ConfigError(f"residual_blocks must be >= 0, got {self.residual_blocks}")
        if not 0.0 < self.survival_prob <= 1.0:
            raise ConfigError(f"survival_prob must lie in (0, 1], got {self.survival_prob}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r} (only 'relu')")

    @property
    def width(self) -> int:
        """Width of the residual stack (in and out widths are equal by construction)."""
        return self.hidden[-1] if self.hidden else self.input_dim

    @property
    def mask_width(self) -> int:
        """Bernoulli draws per mask row: one per dropout unit plus one per block gate."""
        return sum(self.hidden) + self.residual_blocks

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "keep_prob": list(self.keep_prob),
            "residual_blocks": self.residual_blocks,
            "survival_prob": self.survival_prob,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            hidden=tuple(d.get("hidden", ())),
            keep_prob=tuple(d.get("keep_prob", ())),
            residual_blocks=int(d.get("residual_blocks", 0)),
            survival_prob=float(d.get("survival_prob", 0.8)),
            activation=d.get("activation", "relu"),
        )


def _layer_shapes(spec: ModelSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    fan_in = spec.input_dim
    for i, width in enumerate(spec.hidden):
        shapes.append((f"hidden.{i}.weight", (fan_in, width)))
        shapes.append((f"hidden.{i}.bias", (width,)))
        fan_in = width
    for k in range(spec.residual_blocks):
        shapes.append((f"block.{k}.fc1.weight", (spec.width, spec.width)))
        shapes.append((f"block.{k}.fc1.bias", (spec.width,)))
        shapes.append((f"block.{k}.fc2.weight", (spec.width, spec.width)))
        shapes.append((f"block.{k}.fc2.bias", (spec.width,)))
    shapes.append(("head.weight", (spec.width, spec.num_classes)))
    shapes.append(("head.bias", (spec.num_classes,)))
    return shapes


class ParameterSet:
    """
    The deterministic parameters of a model, as named trainable tensors.

    Weights are stored ``[fan_in × fan_out]`` so a layer computes ``x @ W + b``.

    Args:
        spec: Architecture the parameters belong to
        tensors: Mapping from parameter name to tensor, in layer order

    Raises:
        ShapeError: If names or shapes do not match ``spec``
    """

    def __init__(self, spec: ModelSpec, tensors: Dict[str, Tensor]):
        expected = _layer_shapes(spec)
        if [name for name, _ in expected] != list(tensors):
            raise ShapeError("parameter names do not match the model spec")
        for name, shape in expected:
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
            if not np.all(np.isfinite(tensors[name].data)):
                raise ShapeError(f"{name} contains non-finite values")
            tensors[name].requires_grad = True
        self.spec = spec
        self._tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def names(self) -> List[str]:
        return list(self._tensors)

    def weights(self) -> List[Tensor]:
        """Weight matrices only (biases excluded), as used by the L2 penalty."""
        return [t for name, t in self._tensors.items() if name.endswith(".weight")]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def grads(self) -> Dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._tensors.items()
        }

    def assign(self, arrays: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place (shapes must match)."""
        for name, t in self._tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"{name}: expected shape {t.shape}, got {value.shape}")
            t.data = value.copy()

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, {n: Tensor(a) for n, a in self.arrays().items()})

    @property
    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def __repr__(self) -> str:
        return f"ParameterSet(tensors={len(self)}, parameters={self.num_parameters})"


def init_params(spec: ModelSpec, rng: RngStream) -> ParameterSet:
    """
    Draw initial parameters.

    Weights come from ``U(-b, b)`` with ``b = sqrt(6 / (fan_in + fan_out))``; biases are
    zero. Each tensor draws from its own child stream, so adding a layer does not shift
    the values of the others.
    """
    tensors: Dict[str, Tensor] = {}
    for name, shape in _layer_shapes(spec):
        if name.endswith(".weight"):
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            values = rng.child("init", name).uniform(shape, -bound, bound)
        else:
            values = np.zeros(shape)
        tensors[name] = Tensor(values, requires_grad=True)
    return ParameterSet(spec, tensors)


@dataclass(frozen=True)
class NoiseMask:
    """
    Binary noise for one stochastic pass: unit masks per dropout site and block gates.

    Attributes:
        units: One ``[rows × width]`` 0/1 array per dropout site
        gates: ``[rows × residual_blocks]`` 0/1 array
    """
    units: Tuple[np.ndarray, ...]
    gates: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))

    def __post_init__(self):
        for arr in (*self.units, self.gates):
            if not np.all((arr == 0.0) | (arr == 1.0)):
                raise ConfigError("noise mask entries must be 0 or 1")
        if any(u.shape[0] != self.gates.shape[0] for u in self.units):
            raise ShapeError("noise mask sites disagree on the number of rows")

    @property
    def rows(self) -> int:
        return int(self.gates.shape[0])

    @classmethod
    def full(cls, spec: ModelSpec, rows: int = 1) -> "NoiseMask":
        """All-ones mask: every unit kept, every block active."""
        return cls(
            units=tuple(np.ones((rows, w)) for w in spec.hidden),
            gates=np.ones((rows, spec.residual_blocks)),
        )


def sample_mask(spec: ModelSpec, rng: RngStream, rows: int = 1) -> NoiseMask:
    """
    Draw a noise mask with ``rows`` independent rows.

    Row ``r`` consumes the contiguous block ``[r*W, (r+1)*W)`` of the stream, where ``W`` is
    ``spec.mask_width``; within a row, dropout units come first (site order), then block
    gates. Unit ``~ Bernoulli(keep)``, gate ``~ Bernoulli(survival)``.
    """
    u = rng.uniform((rows, spec.mask_width))
    units = []
    offset = 0
    for width, keep in zip(spec.hidden, spec.keep_prob):
        units.append((u[:, offset:offset + width] < keep).astype(np.float64))
        offset += width
    gates = (u[:, offset:] < spec.survival_prob).astype(np.float64)
    return NoiseMask(units=tuple(units), gates=gates)


def concat_masks(masks: Sequence[NoiseMask]) -> NoiseMask:
    """Stack the rows of several masks (in order) into one mask."""
    if not masks:
        raise ShapeError("concat_masks needs at least one mask")
    sites = len(masks[0].units)
    return NoiseMask(
        units=tuple(np.concatenate([m.units[i] for m in masks], axis=0) for i in range(sites)),
        gates=np.concatenate([m.gates for m in masks], axis=0),
    )


def _mask_rows(arr: np.ndarray, n: int) -> np.ndarray:
    if arr.shape[0] == n:
        return arr
    if arr.shape[0] == 1:
        return np.repeat(arr, n, axis=0)
    raise ShapeError(f"noise mask has {arr.shape[0]} rows but the input has {n}")


def _residual_branch(h: Tensor, params: ParameterSet, k: int) -> Tensor:
    inner = relu(add_bias(matmul(h, params[f"block.{k}.fc1.weight"]), params[f"block.{k}.fc1.bias"]))
    return add_bias(matmul(inner, params[f"block.{k}.fc2.weight"]), params[f"block.{k}.fc2.bias"])


def forward_logits(x, params: ParameterSet, mask: Optional[NoiseMask] = None) -> Tensor:
    """
    Logits for ``x [n×d]``; stochastic when ``mask`` is given, deterministic otherwise.

    Raises:
        ShapeError: If ``x`` does not have ``spec.input_dim`` columns or the mask rows
            do not match
    """
    spec = params.spec
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input [n×{spec.input_dim}], got {h.shape}")
    n = h.shape[0]

    for i in range(len(spec.hidden)):
        h = relu(add_bias(matmul(h, params[f"hidden.{i}.weight"]), params[f"hidden.{i}.bias"]))
        if mask is not None:
            h = mul(h, Tensor(_mask_rows(mask.units[i], n) / spec.keep_prob[i]))

    for k in range(spec.residual_blocks):
        branch = _residual_branch(h, params, k)
        if mask is not None:
            gate = _mask_rows(mask.gates[:, k:k + 1], n)
            h = add(h, mul(branch, Tensor(np.broadcast_to(gate, branch.shape))))
        else:
            h = add(h, scale(branch, spec.survival_prob))

    return add_bias(matmul(h, params["head.weight"]), params["head.bias"])


def forward_stochastic(x, params: ParameterSet, mask: NoiseMask) -> Tensor:
    """Class probabilities under one realisation of the noise (the parameters θ⊙ε)."""
    if mask is None:
        raise ConfigError("forward_stochastic needs a noise mask")
    return softmax(forward_logits(x, params, mask))


def forward_deterministic(x, params: ParameterSet) -> Tensor:
    """Class probabilities under the expected noise (the parameters θ⊙E[ε])."""
    return softmax(forward_logits(x, params, None))


# --- Checkpoints ------------------------------------------------------------


def save_checkpoint(path: Union[str, Path], params: ParameterSet, **metadata: Any) -> Path:
    """
    Write parameters as JSON with every float stored as ``float.hex()`` (bit-exact).

    Args:
        path: Output file
        params: Parameters to store
        **metadata: Extra JSON-serialisable fields (e.g. epoch)
    """
    path = Path(path)
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": params.spec.to_dict(),
        "parameters": {
            name: {"shape": list(t.shape), "data": [float(v).hex() for v in t.data.reshape(-1)]}
            for name, t in params
        },
        "metadata": metadata,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    logger.debug("wrote checkpoint %s (%d parameters)", path, params.num_parameters)
    return path


def load_checkpoint(path: Union[str, Path]) -> ParameterSet:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        FileNotFoundError: If ``path`` does not exist
        DataFormatError: If the document is malformed or has an unknown version
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: not a JSON checkpoint: {e}") from e
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    try:
        spec = ModelSpec.from_dict(doc["spec"])
        tensors = {}
        for name, entry in doc["parameters"].items():
            values = np.array([float.fromhex(v) for v in entry["data"]], dtype=np.float64)
            tensors[name] = Tensor(values.reshape(entry["shape"]), requires_grad=True)
        return ParameterSet(spec, tensors)
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: malformed checkpoint: {e}") from e


__all__ = [
    "ModelSpec",
    "ParameterSet",
    "NoiseMask",
    "init_params",
    "sample_mask",
    "concat_masks",
    "forward_logits",
    "forward_stochastic",
    "forward_deterministic",
    "save_checkpoint",
    "load_checkpoint",
]
