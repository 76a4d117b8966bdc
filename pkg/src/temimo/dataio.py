"""Binary dataset/checkpoint containers and plain-text run configuration.

Dataset files carry one float64 tensor: magic ``TEDS``, a u32 format version,
a u32 rank, u64 extents, then the row-major little-endian payload.  Channel
files use a trailing extent of 2 for the real and imaginary parts.

Checkpoints reuse the container with version 2: a directory of named float64
tensors plus named UTF-8 text blobs (the run configuration and seed live
there).
"""

from __future__ import annotations

import configparser
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import mimo

MAGIC = b"TEDS"
VERSION_TENSOR = 1
VERSION_BUNDLE = 2

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class FormatError(ValueError):
    """Raised for malformed container files."""


def _write_array(f, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(_U32.pack(arr.ndim))
    for e in arr.shape:
        f.write(_U64.pack(e))
    f.write(arr.tobytes())


def _read_exact(f, n):
    b = f.read(n)
    if len(b) != n:
        raise FormatError("truncated file")
    return b


def _read_array(f):
    rank = _U32.unpack(_read_exact(f, 4))[0]
    if rank > 32:
        raise FormatError(f"implausible rank {rank}")
    shape = tuple(_U64.unpack(_read_exact(f, 8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(VERSION_TENSOR))
        _write_array(f, arr)


def _read_header(f, path):
    if _read_exact(f, 4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a TEDS file")
    return _U32.unpack(_read_exact(f, 4))[0]


def read_tensor(path):
    with open(path, "rb") as f:
        version = _read_header(f, path)
        if version != VERSION_TENSOR:
            raise FormatError(f"{path}: expected a tensor file, got version {version}")
        arr = _read_array(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
        return arr


def write_bundle(path, arrays, texts=None):
    """Named float64 tensors plus named UTF-8 text blobs, one container."""
    texts = texts or {}
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(VERSION_BUNDLE))
        f.write(_U32.pack(len(arrays) + len(texts)))
        for name in sorted(arrays):
            nb = name.encode("utf-8")
            f.write(_U32.pack(len(nb)))
            f.write(nb)
            f.write(_U32.pack(0))
            _write_array(f, arrays[name])
        for name in sorted(texts):
            nb = name.encode("utf-8")
            f.write(_U32.pack(len(nb)))
            f.write(nb)
            f.write(_U32.pack(1))
            tb = str(texts[name]).encode("utf-8")
            f.write(_U64.pack(len(tb)))
            f.write(tb)


def read_bundle(path):
    arrays, texts = {}, {}
    with open(path, "rb") as f:
        version = _read_header(f, path)
        if version != VERSION_BUNDLE:
            raise FormatError(f"{path}: expected a bundle file, got version {version}")
        count = _U32.unpack(_read_exact(f, 4))[0]
        for _ in range(count):
            nlen = _U32.unpack(_read_exact(f, 4))[0]
            name = _read_exact(f, nlen).decode("utf-8")
            kind = _U32.unpack(_read_exact(f, 4))[0]
            if kind == 0:
                arrays[name] = _read_array(f)
            elif kind == 1:
                tlen = _U64.unpack(_read_exact(f, 8))[0]
                texts[name] = _read_exact(f, tlen).decode("utf-8")
            else:
                raise FormatError(f"{path}: unknown entry kind {kind}")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return arrays, texts


def channels_to_array(h):
    """Complex channels (..., K, N_R, N_T) -> real array with trailing re/im."""
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=-1)


def array_to_channels(a):
    a = np.asarray(a)
    if a.shape[-1] != 2:
        raise FormatError(f"channel file needs a trailing extent of 2, got {a.shape}")
    return a[..., 0] + 1j * a[..., 1]


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

SCALE_PRESETS = {
    "desk": {"samples": 6000, "iterations": 3000, "batch_size": 128},
    "paper": {"samples": 60000, "iterations": 200000, "batch_size": 2000},
}

TRAIN_SPLIT = (11, 12)  # train fraction of generated samples


@dataclass
class RunConfig:
    """Everything one training/evaluation run needs, file-representable."""

    task: str = "precode"
    k: int = 4
    k_cand: int = 6
    n_r: int = 2
    n_t: int = 8
    power: float = 1.0
    depth: int = 3
    hidden: int = 8
    pattern: str = "FULL"
    heads: int = 2
    hermitian_aux: bool = False
    iterations: int = 3000
    batch_size: int = 128
    base_lr: float = 5e-4
    seed: int = 1
    snrs: tuple = (0.0, 10.0, 20.0, 30.0)
    label_snr: float = 10.0
    label_precoder: str = "mmse"
    dataset: str = ""
    labels: str = ""

    def __post_init__(self):
        if self.task not in ("precode", "schedule"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch size must be at least 1")

    def system(self):
        return mimo.SystemConfig(
            k=self.k, n_r=self.n_r, n_t=self.n_t, k_cand=self.k_cand, power=self.power
        )

    def to_text(self):
        cp = configparser.ConfigParser()
        cp["system"] = {
            "k": str(self.k),
            "k_cand": str(self.k_cand),
            "n_r": str(self.n_r),
            "n_t": str(self.n_t),
            "power": repr(self.power),
        }
        cp["model"] = {
            "task": self.task,
            "depth": str(self.depth),
            "hidden": str(self.hidden),
            "pattern": self.pattern,
            "heads": str(self.heads),
            "hermitian_aux": str(self.hermitian_aux),
        }
        cp["train"] = {
            "iterations": str(self.iterations),
            "batch_size": str(self.batch_size),
            "base_lr": repr(self.base_lr),
            "seed": str(self.seed),
            "snrs": ",".join(repr(s) for s in self.snrs),
            "label_snr": repr(self.label_snr),
            "label_precoder": self.label_precoder,
            "dataset": self.dataset,
            "labels": self.labels,
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def config_from_text(text):
    cp = configparser.ConfigParser()
    cp.read_string(text)
    kw = {}
    if cp.has_section("system"):
        s = cp["system"]
        kw.update(
            k=s.getint("k", 4),
            k_cand=s.getint("k_cand", 6),
            n_r=s.getint("n_r", 2),
            n_t=s.getint("n_t", 8),
            power=s.getfloat("power", 1.0),
        )
    if cp.has_section("model"):
        m = cp["model"]
        kw.update(
            task=m.get("task", "precode"),
            depth=m.getint("depth", 3),
            hidden=m.getint("hidden", 8),
            pattern=m.get("pattern", "FULL"),
            heads=m.getint("heads", 2),
            hermitian_aux=m.getboolean("hermitian_aux", False),
        )
    if cp.has_section("train"):
        t = cp["train"]
        kw.update(
            iterations=t.getint("iterations", 3000),
            batch_size=t.getint("batch_size", 128),
            base_lr=t.getfloat("base_lr", 5e-4),
            seed=t.getint("seed", 1),
            label_snr=t.getfloat("label_snr", 10.0),
            label_precoder=t.get("label_precoder", "mmse"),
            dataset=t.get("dataset", ""),
            labels=t.get("labels", ""),
        )
        if t.get("snrs", ""):
            kw["snrs"] = tuple(float(x) for x in t.get("snrs").split(","))
    return RunConfig(**kw)


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return config_from_text(f.read())
