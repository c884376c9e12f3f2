"""The ADAST network: shared CNN extractor, per-domain attention, domain
discriminator and two classifier heads, plus the binary checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import CompatibilityError, FormatError, ShapeError
from .nn import Attention, BatchNorm1d, Conv1d, Identity, Linear, MaxPool1d, Module
from .tensor import Tensor

CKPT_MAGIC = b"ADSTCKPT"
CKPT_VERSION = 1

# fixed component indices for seeding; keeps C1/C2 draws independent
_COMPONENTS = ("F", "A_s", "A_t", "D", "C1", "C2")


@dataclass
class ArchConfig:
    epoch_len: int = 300
    n_classes: int = 5
    channels: tuple[int, ...] = (8, 16, 32)
    kernels: tuple[int, ...] = (25, 8, 8)
    strides: tuple[int, ...] = (3, 1, 1)
    paddings: tuple[int, ...] = (0, 0, 0)
    pool_kernel: int = 2
    pool_stride: int = 2
    d_attn: int = 0  # 0 -> d // 2
    disc_hidden: int = 64
    cls_hidden: int = 64

    def feature_shape(self) -> tuple[int, int]:
        """(d, l) of the extractor output for one epoch."""
        length = self.epoch_len
        for k, s, p in zip(self.kernels, self.strides, self.paddings):
            length = (length + 2 * p - k) // s + 1
            if length < 1:
                break
            length = (length - self.pool_kernel) // self.pool_stride + 1
            if length < 1:
                break
        if length < 1:
            raise ShapeError(f"epoch length {self.epoch_len} too short for the extractor")
        return self.channels[-1], length

    def validate(self) -> list[str]:
        problems = []
        n = len(self.channels)
        if not (len(self.kernels) == len(self.strides) == len(self.paddings) == n):
            problems.append("arch: channels/kernels/strides/paddings must have equal lengths")
        if self.n_classes < 2:
            problems.append("arch.n_classes must be >= 2")
        if not problems:
            try:
                self.feature_shape()
            except ShapeError as exc:
                problems.append(f"arch: {exc}")
        return problems


class ConvBlock(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, pool_kernel, pool_stride, rng):
        self.conv = Conv1d(c_in, c_out, kernel, stride, padding, rng=rng)
        self.bn = BatchNorm1d(c_out)
        self.pool = MaxPool1d(pool_kernel, pool_stride)

    def forward(self, x: Tensor) -> Tensor:
        return self.pool(T.relu(self.bn(self.conv(x))))


class FeatureExtractor(Module):
    def __init__(self, arch: ArchConfig, rng):
        widths = (1, *arch.channels)
        self.blocks = [
            ConvBlock(widths[i], widths[i + 1], arch.kernels[i], arch.strides[i], arch.paddings[i],
                      arch.pool_kernel, arch.pool_stride, rng)
            for i in range(len(arch.channels))
        ]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Discriminator(Module):
    def __init__(self, n_in: int, hidden: int, rng):
        self.fc1 = Linear(n_in, hidden, rng=rng)
        self.fc2 = Linear(hidden, 1, rng=rng)

    def forward(self, feat: Tensor) -> Tensor:
        h = T.relu(self.fc1(T.flatten(feat)))
        out = T.sigmoid(self.fc2(h))
        out = T.clamp(out, T.LOG_CLAMP, 1.0 - T.LOG_CLAMP)
        return T.reshape(out, (feat.shape[0],))


class Classifier(Module):
    def __init__(self, n_in: int, hidden: int, n_classes: int, rng):
        self.fc1 = Linear(n_in, hidden, rng=rng)
        self.fc2 = Linear(hidden, n_classes, rng=rng)

    def forward(self, feat: Tensor) -> Tensor:
        h = T.relu(self.fc1(T.flatten(feat)))
        return T.softmax(self.fc2(h), axis=-1)

    def weight_vector(self) -> Tensor:
        """Flattened weights (no biases) in layer order, row-major."""
        return T.concat([T.reshape(self.fc1.weight, (-1,)), T.reshape(self.fc2.weight, (-1,))])


class AdastModel(Module):
    """Bundle of the six networks.

    ``use_attention=False`` swaps both attention modules for identities;
    ``dual_classifiers=False`` drops ``C2`` and predicts with ``C1`` alone.
    """

    def __init__(self, arch: ArchConfig | None = None, seed: int = 0,
                 use_attention: bool = True, dual_classifiers: bool = True):
        self.arch = arch or ArchConfig()
        self.seed = seed
        self.use_attention = use_attention
        self.dual_classifiers = dual_classifiers
        rngs = {name: np.random.default_rng([seed, i]) for i, name in enumerate(_COMPONENTS)}
        d, l = self.arch.feature_shape()
        self.F = FeatureExtractor(self.arch, rngs["F"])
        if use_attention:
            d_attn = self.arch.d_attn or max(1, d // 2)
            self.A_s = Attention(d, d_attn, rng=rngs["A_s"])
            self.A_t = Attention(d, d_attn, rng=rngs["A_t"])
        else:
            self.A_s = Identity()
            self.A_t = Identity()
        self.D = Discriminator(d * l, self.arch.disc_hidden, rngs["D"])
        self.C1 = Classifier(d * l, self.arch.cls_hidden, self.arch.n_classes, rngs["C1"])
        self.C2 = (Classifier(d * l, self.arch.cls_hidden, self.arch.n_classes, rngs["C2"])
                   if dual_classifiers else None)

    # -- forward paths --------------------------------------------------
    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self.arch.epoch_len:
            raise ShapeError(
                f"expected input [B x 1 x {self.arch.epoch_len}], got {tuple(x.shape)}"
            )

    def classify(self, feat: Tensor) -> Tensor:
        """Average of the classifier heads' probabilities."""
        p1 = self.C1(feat)
        if self.C2 is None:
            return p1
        return (p1 + self.C2(feat)) * 0.5

    def forward_source(self, x: Tensor) -> tuple[Tensor, Tensor]:
        self._check_input(x)
        feat = self.A_s(self.F(x))
        return feat, self.classify(feat)

    def forward_target(self, x: Tensor) -> tuple[Tensor, Tensor]:
        self._check_input(x)
        feat = self.A_t(self.F(x))
        return feat, self.classify(feat)

    def forward(self, x: Tensor, domain: str = "source"):
        return self.forward_target(x) if domain == "target" else self.forward_source(x)

    def discriminate(self, feat: Tensor) -> Tensor:
        d, l = self.arch.feature_shape()
        if feat.ndim != 3 or feat.shape[1:] != (d, l):
            raise ShapeError(f"discriminator expects features [B x {d} x {l}], got {feat.shape}")
        return self.D(feat)

    def classifier_param_vectors(self) -> tuple[Tensor, Tensor]:
        if self.C2 is None:
            raise ShapeError("single-classifier model has no second parameter vector")
        return self.C1.weight_vector(), self.C2.weight_vector()

    def classifier_weight_pairs(self) -> list[tuple[Tensor, Tensor]]:
        if self.C2 is None:
            raise ShapeError("single-classifier model has no second classifier")
        return [(self.C1.fc1.weight, self.C2.fc1.weight), (self.C1.fc2.weight, self.C2.fc2.weight)]

    # -- parameter groups -----------------------------------------------
    def discriminator_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.D.named_parameters("D."))

    def main_parameters(self) -> list[tuple[str, Tensor]]:
        """Everything the extractor-side optimizer owns."""
        out = list(self.F.named_parameters("F."))
        out += self.A_s.named_parameters("A_s.")
        out += self.A_t.named_parameters("A_t.")
        out += self.C1.named_parameters("C1.")
        if self.C2 is not None:
            out += self.C2.named_parameters("C2.")
        return out

    # -- state ----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise CompatibilityError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != value.shape:
                raise CompatibilityError(f"{name}: shape {value.shape} != {target.shape}")
            target[...] = value

    def clone(self) -> "AdastModel":
        twin = AdastModel(self.arch, self.seed, self.use_attention, self.dual_classifiers)
        twin.load_state_dict(self.state_dict())
        return twin


# -- checkpoint format ---------------------------------------------------
_ARCH_INT_FIELDS = ("epoch_len", "n_classes", "pool_kernel", "pool_stride", "d_attn",
                    "disc_hidden", "cls_hidden")
_ARCH_SEQ_FIELDS = ("channels", "kernels", "strides", "paddings")


def _arch_records(model: AdastModel) -> dict[str, np.ndarray]:
    rec = {}
    for f in _ARCH_INT_FIELDS:
        rec[f"arch.{f}"] = np.array(float(getattr(model.arch, f)))
    for f in _ARCH_SEQ_FIELDS:
        rec[f"arch.{f}"] = np.array(getattr(model.arch, f), dtype=np.float64)
    rec["arch.use_attention"] = np.array(float(model.use_attention))
    rec["arch.dual_classifiers"] = np.array(float(model.dual_classifiers))
    rec["arch.seed"] = np.array(float(model.seed))
    return rec


def write_records(path, records: dict[str, np.ndarray]) -> None:
    buf = bytearray(CKPT_MAGIC)
    buf += struct.pack("<I", CKPT_VERSION)
    for name, value in records.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", value.ndim)
        buf += struct.pack(f"<{value.ndim}I", *value.shape)
        buf += value.tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def read_records(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise FormatError("not a checkpoint: bad magic", 0)
    if len(blob) < 12:
        raise FormatError("truncated header", len(blob))
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    pos = 12
    records: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated record: need {n} bytes", pos)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (n_name,) = struct.unpack("<I", take(4))
        try:
            name = take(n_name).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("record name is not UTF-8", pos - n_name) from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        records[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    return records


def save_checkpoint(model: AdastModel, path) -> None:
    records = _arch_records(model)
    records.update(model.state_dict())
    write_records(path, records)


def load_checkpoint(path) -> AdastModel:
    records = read_records(path)
    try:
        kwargs = {f: int(records.pop(f"arch.{f}")) for f in _ARCH_INT_FIELDS}
        for f in _ARCH_SEQ_FIELDS:
            kwargs[f] = tuple(int(v) for v in records.pop(f"arch.{f}"))
        use_attention = bool(records.pop("arch.use_attention"))
        dual = bool(records.pop("arch.dual_classifiers"))
        seed = int(records.pop("arch.seed"))
    except KeyError as exc:
        raise FormatError(f"checkpoint lacks architecture record {exc}") from None
    arch = ArchConfig(**kwargs)
    model = AdastModel(arch, seed, use_attention, dual)
    model.load_state_dict(records)
    return model

