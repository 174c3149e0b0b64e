"""File formats: netpbm images, field CSVs, ensemble containers, checkpoints, config files.

Binary containers are little-endian and start with a 4-byte magic and a
u32 format version.
"""

from __future__ import annotations

import csv
import io as _io
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import NoPosition, PosEnc
from .cfm_train import FieldObservations, TrainConfig
from .errors import FormatError
from .posterior import Ensemble
from .rff import RffBasis
from .velocity_net import MLP, AdamState, EmaState, VelocityNet

ENSEMBLE_MAGIC = b"RPFE"
CHECKPOINT_MAGIC = b"RPFC"
FORMAT_VERSION = 1
_F8 = np.dtype("<f8")

# -- netpbm ------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_image(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM (P5) or PPM (P6). Returns (values in [0, 1], maxval).

    Grayscale comes back as (H, W), colour as (H, W, 3).
    """
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated netpbm header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer header field") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid size {w}x{h} or maxval {maxval}")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    need = count * dtype.itemsize
    if len(raw) - pos < need:
        raise FormatError(f"{path}: payload has {len(raw) - pos} bytes, expected {need}")
    pix = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).astype(np.float64)
    pix = pix.reshape(h, w, channels) if channels == 3 else pix.reshape(h, w)
    return pix / maxval, maxval


def save_image(path, img, maxval: int = 255) -> None:
    """Write values in [0, 1] as P5 (2D array) or P6 (H, W, 3), 8-bit or 16-bit."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot store array of shape {a.shape} as netpbm")
    if not 0 < maxval < 65536:
        raise FormatError(f"maxval must be in 1..65535, got {maxval}")
    q = np.rint(np.clip(a, 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = b"%s\n%d %d\n%d\n" % (magic, a.shape[1], a.shape[0], maxval)
    Path(path).write_bytes(header + q.astype(dtype).tobytes())


def image_positions(h: int, w: int) -> np.ndarray:
    """Pixel centres in [0, 1]^2, row-major, coordinates (row, col)."""
    yy, xx = np.mgrid[0:h, 0:w]
    return np.stack([yy.ravel() / max(h - 1, 1), xx.ravel() / max(w - 1, 1)], axis=1)


# -- field CSV ---------------------------------------------------------------

def save_field_csv(path, positions, values, value_names=None) -> None:
    P = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    V = np.asarray(values, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    names = value_names or [f"v{j}" for j in range(V.shape[1])]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"x{i}" for i in range(P.shape[1])] + list(names))
        for p, v in zip(P, V):
            wr.writerow([repr(float(a)) for a in p] + [repr(float(a)) for a in v])


def load_field_csv(path) -> FieldObservations:
    """Columns named x0..x{d-1} are coordinates; every other column is a value."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    d = 0
    while d < len(header) and header[d] == f"x{d}":
        d += 1
    if d == 0 or d == len(header):
        raise FormatError(f"{path}: header needs x0.. coordinate columns followed by value columns")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no data rows")
    data = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise FormatError(f"{path}: row {i + 2} has {len(r)} cells, header has {len(header)}")
        try:
            data[i] = [float(c) for c in r]
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric cell in row {i + 2}") from exc
    return FieldObservations(data[:, :d], data[:, d:])


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(c) for c in r])


def _fmt(c):
    if isinstance(c, (float, np.floating)):
        return repr(float(c))
    if isinstance(c, np.integer):
        return int(c)
    return c


def write_loss_csv(path, losses) -> None:
    write_table(path, ["step", "loss"], enumerate(np.asarray(losses, dtype=np.float64)))


# -- low-level binary helpers --------------------------------------------------

class _Writer:
    def __init__(self):
        self.buf = _io.BytesIO()

    def pack(self, fmt: str, *vals):
        self.buf.write(struct.pack("<" + fmt, *vals))

    def array(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype=_F8).tobytes())

    def text(self, s: str):
        b = s.encode("utf-8")
        self.pack("Q", len(b))
        self.buf.write(b)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.raw):
            raise FormatError(f"{self.path}: truncated file")
        vals = struct.unpack_from("<" + fmt, self.raw, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def array(self, shape):
        count = int(np.prod(shape))
        need = count * 8
        if self.pos + need > len(self.raw):
            raise FormatError(f"{self.path}: truncated array payload")
        a = np.frombuffer(self.raw, dtype=_F8, count=count, offset=self.pos).astype(np.float64)
        self.pos += need
        return a.reshape(shape)

    def text(self) -> str:
        n = self.unpack("Q")
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated text block")
        s = self.raw[self.pos:self.pos + n].decode("utf-8")
        self.pos += n
        return s

    def header(self, magic: bytes):
        if self.raw[:4] != magic:
            raise FormatError(f"{self.path}: bad magic {self.raw[:4]!r}, expected {magic!r}")
        self.pos = 4
        version = self.unpack("I")
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.path}: format version {version}, this build reads {FORMAT_VERSION}")


# -- ensembles ---------------------------------------------------------------

_PROVENANCE = {"prior": 0, "posterior": 1, "data": 2}


def save_ensemble(path, e: Ensemble) -> None:
    w = _Writer()
    w.buf.write(ENSEMBLE_MAGIC)
    w.pack("I", FORMAT_VERSION)
    d = e.positions.shape[1]
    w.pack("QQQQB", e.S, e.n, e.m, d, _PROVENANCE[e.provenance])
    w.pack("I", len(e.seeds))
    for s in e.seeds:
        w.pack("Q", int(s))
    w.array(e.positions)
    w.array(e.samples)
    Path(path).write_bytes(w.buf.getvalue())


def load_ensemble(path) -> Ensemble:
    r = _Reader(Path(path).read_bytes(), path)
    r.header(ENSEMBLE_MAGIC)
    S, n, m, d, prov = r.unpack("QQQQB")
    inv = {v: k for k, v in _PROVENANCE.items()}
    if prov not in inv:
        raise FormatError(f"{path}: unknown provenance code {prov}")
    seeds = tuple(r.unpack("Q") for _ in range(r.unpack("I")))
    P = r.array((n, d))
    samples = r.array((S, n, m))
    return Ensemble(samples, P, inv[prov], seeds)


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    embedder: object  # RffBasis | PosEnc | NoPosition
    net: VelocityNet
    config: TrainConfig
    meta: dict = field(default_factory=dict)  # data path, value map, image shape, ...
    adam: AdamState | None = None
    ema: EmaState | None = None


def _write_embedder(w: _Writer, emb) -> None:
    if isinstance(emb, RffBasis):
        w.pack("B", 0)
        w.pack("QQdQ", emb.n_freq, emb.d, emb.sigma_rff, emb.seed)
        w.array(emb.B)
    elif isinstance(emb, PosEnc):
        w.pack("BQQ", 1, emb.n_freqs, emb.d)
    elif isinstance(emb, NoPosition):
        w.pack("B", 2)
    else:
        raise FormatError(f"cannot serialize embedder {type(emb).__name__}")


def _read_embedder(r: _Reader):
    kind = r.unpack("B")
    if kind == 0:
        F, d, sigma, seed = r.unpack("QQdQ")
        return RffBasis(r.array((F, d)), sigma, seed)
    if kind == 1:
        n_freqs, d = r.unpack("QQ")
        return PosEnc(n_freqs, d)
    if kind == 2:
        return NoPosition()
    raise FormatError(f"{r.path}: unknown embedder kind {kind}")


def save_checkpoint(path, ck: Checkpoint) -> None:
    w = _Writer()
    w.buf.write(CHECKPOINT_MAGIC)
    w.pack("I", FORMAT_VERSION)
    _write_embedder(w, ck.embedder)
    net = ck.net
    dims = net.mlp.dims
    w.pack("QIIB", net.embed_dim, net.n_time_freqs, net.m, 1 if net.mlp.output == "sigmoid" else 0)
    w.pack("I", len(dims))
    w.pack(f"{len(dims)}Q", *dims)
    for p in net.mlp.params():
        w.array(p)
    w.text(json.dumps(asdict(ck.config), sort_keys=True))
    w.text(json.dumps(ck.meta, sort_keys=True))
    w.pack("BB", ck.adam is not None, ck.ema is not None)
    if ck.adam is not None:
        a = ck.adam
        w.pack("ddddQB", a.lr, a.beta1, a.beta2, a.eps, a.step, bool(a.m))
        for arr in a.m + a.v:
            w.array(arr)
    if ck.ema is not None:
        w.pack("d", ck.ema.decay)
        for arr in ck.ema.shadow:
            w.array(arr)
    Path(path).write_bytes(w.buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    r = _Reader(p.read_bytes(), path)
    r.header(CHECKPOINT_MAGIC)
    emb = _read_embedder(r)
    embed_dim, n_tf, m, sig = r.unpack("QIIB")
    n_dims = r.unpack("I")
    dims = r.unpack(f"{n_dims}Q")
    dims = [dims] if isinstance(dims, int) else list(dims)
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(r.array((a, b)))
        biases.append(r.array((b,)))
    net = VelocityNet(MLP(weights, biases, "sigmoid" if sig else "identity"), embed_dim, n_tf, m)
    cfg = TrainConfig(**json.loads(r.text()))
    meta = json.loads(r.text())
    has_adam, has_ema = r.unpack("BB")
    shapes = [p.shape for p in net.mlp.params()]
    adam = ema = None
    if has_adam:
        lr, b1, b2, eps, step, has_moments = r.unpack("ddddQB")
        adam = AdamState(lr, b1, b2, eps, step)
        if has_moments:
            adam.m = [r.array(s) for s in shapes]
            adam.v = [r.array(s) for s in shapes]
    if has_ema:
        decay = r.unpack("d")
        ema = EmaState([r.array(s) for s in shapes], decay)
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return Checkpoint(emb, net, cfg, meta, adam, ema)


# -- key = value configs -----------------------------------------------------

def parse_config(path, schema: dict) -> dict:
    """Read `key = value` lines (`#` starts a comment). ``schema`` maps key -> type.

    Unknown keys, duplicates and unparsable values raise FormatError.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}; known keys: {', '.join(sorted(schema))}")
        if key in out:
            raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = convert_value(schema[key], val, f"{path}:{lineno}")
    return out


def convert_value(typ, val: str, where: str = ""):
    try:
        if typ is bool:
            low = val.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(val)
            return low in ("1", "true", "yes")
        if typ is list or typ == "floats":
            return [float(v) for v in val.replace(",", " ").split()]
        if typ == "ints":
            return [int(v) for v in val.replace(",", " ").split()]
        if typ == "optfloat":
            return None if val.lower() in ("", "none") else float(val)
        return typ(val)
    except ValueError as exc:
        raise FormatError(f"{where}: cannot parse {val!r} as {getattr(typ, '__name__', typ)}") from exc
