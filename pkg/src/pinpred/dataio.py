"""File formats: dataset/prediction containers, checkpoints, graymap dumps.

Binary layouts are little-endian with magic prefixes, checked before
anything large is parsed. Arrays are stored float32 C-order; grid spacing
and timestep stay float64 so reloaded values compare equal to the
originals.

Dataset container (also used for predictions):

    "PINPDS1\\0"  u32 count, frames, H, W, start   f64 dx, dt
    u8 solid mask (H*W)
    per record: u8 kind, u8 has_source, 2 pad,
                f32 magnitude, inv_pe, source cx, cy, radius, rate,
                u64 scenario seed, u64 record seed,
                f32 frames (N,H,W), f32 u (N,2,H,W), f32 p (N,H,W)

`start` is 0 for generated data; a prediction file stores the window
length K there, the index of the first truth frame its frames line up
with. Prediction records hold raw model output (which may go negative),
so they are loaded as RawRecord instead of SequenceRecord via
``read_dataset(path, validate=False)``.

Checkpoint:

    "PINPCK1\\0"  u32 param count, u32 itemsize (4|8)
    u32 config text length + UTF-8 config text
    per param (sorted by name): u16 name length, name,
                u8 ndim, u32 dims..., raw values

Every writer also emits a human-readable `<path>.txt` sidecar.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, ObstacleMap, obstacle_map_to_text
from .optim import ParamStore
from .simulate import FlowScenario, SequenceRecord, SourceSpec

DATASET_MAGIC = b"PINPDS1\0"
CHECKPOINT_MAGIC = b"PINPCK1\0"

_HEADER = struct.Struct("<IIIIIdd")
_RECORD = struct.Struct("<BBxxffffffQQ")
_KINDS = ("uniform", "vortex", "channel")


@dataclass(frozen=True)
class RawRecord:
    """Container payload without simulation invariants (prediction files)."""

    frames: np.ndarray
    u_true: np.ndarray
    p_true: np.ndarray
    scenario: FlowScenario
    grid: GridSpec
    seed: int


@dataclass(frozen=True)
class DatasetFile:
    records: list[SequenceRecord]
    obstacles: ObstacleMap
    grid: GridSpec
    frames_per_seq: int
    start: int = 0


def dataset_nbytes(count: int, frames: int, h: int, w: int) -> int:
    """Exact file size for the given dimensions."""
    per_record = _RECORD.size + 4 * (frames * h * w + frames * 2 * h * w + frames * h * w)
    return len(DATASET_MAGIC) + _HEADER.size + h * w + count * per_record


def write_dataset(path, records, obstacles: ObstacleMap, grid: GridSpec | None = None, start: int = 0):
    """Records may be SequenceRecord or RawRecord; only the fields are read."""
    if records:
        grid = records[0].grid
        for r in records:
            if r.grid != grid:
                raise ValueError("all records must share one grid")
            if r.frames.shape[0] != records[0].frames.shape[0]:
                raise ValueError("all records must have the same frame count")
    elif grid is None:
        raise ValueError("an empty dataset needs an explicit grid")
    if obstacles.shape != grid.shape:
        raise ValueError(f"obstacle shape {obstacles.shape} does not match grid {grid.shape}")
    frames = records[0].frames.shape[0] if records else 0

    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(_HEADER.pack(len(records), frames, grid.height, grid.width, start, grid.dx, grid.dt))
        fh.write(obstacles.solid.astype(np.uint8).tobytes())
        for r in records:
            sc = r.scenario
            src = sc.source or SourceSpec((0.0, 0.0), 0.0, 0.0)
            fh.write(_RECORD.pack(
                _KINDS.index(sc.kind), sc.source is not None,
                sc.magnitude, sc.inv_pe,
                src.center[0], src.center[1], src.radius, src.rate,
                sc.seed, r.seed,
            ))
            fh.write(r.frames.astype("<f4").tobytes())
            fh.write(r.u_true.astype("<f4").tobytes())
            fh.write(r.p_true.astype("<f4").tobytes())

    with open(str(path) + ".txt", "w") as fh:
        fh.write(f"records {len(records)}\nframes_per_seq {frames}\n")
        fh.write(f"grid {grid.height}x{grid.width} dx {grid.dx!r} dt {grid.dt!r}\n")
        kinds = sorted({r.scenario.kind for r in records})
        fh.write(f"scenarios {' '.join(kinds) if kinds else '(none)'}\n")
        fh.write(f"bytes {dataset_nbytes(len(records), frames, grid.height, grid.width)}\n")
        fh.write("geometry:\n")
        fh.write(obstacle_map_to_text(obstacles))
        fh.write("\n")


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated file while reading {what}")
    return buf


def read_dataset(path, validate: bool = True) -> DatasetFile:
    """validate=False loads records as RawRecord (prediction files)."""
    record_cls = SequenceRecord if validate else RawRecord
    with open(path, "rb") as fh:
        if fh.read(len(DATASET_MAGIC)) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic)")
        count, frames, h, w, start, dx, dt = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header"))
        grid = GridSpec(h, w, dx, dt)
        solid = np.frombuffer(_read_exact(fh, h * w, "obstacle map"), dtype=np.uint8)
        obstacles = ObstacleMap(solid.reshape(h, w).astype(bool))
        records = []
        for i in range(count):
            kind, has_source, mag, inv_pe, cx, cy, radius, rate, base_seed, seed = _RECORD.unpack(
                _read_exact(fh, _RECORD.size, f"record {i} header")
            )
            if kind >= len(_KINDS):
                raise ValueError(f"record {i}: unknown scenario kind {kind}")
            source = SourceSpec((cx, cy), radius, rate) if has_source else None
            scenario = FlowScenario(_KINDS[kind], mag, inv_pe, base_seed, source)

            def arr(shape, what):
                n = int(np.prod(shape))
                a = np.frombuffer(_read_exact(fh, 4 * n, what), dtype="<f4")
                return a.reshape(shape).astype(np.float64)

            records.append(record_cls(
                frames=arr((frames, h, w), f"record {i} frames"),
                u_true=arr((frames, 2, h, w), f"record {i} velocity"),
                p_true=arr((frames, h, w), f"record {i} pressure"),
                scenario=scenario,
                grid=grid,
                seed=seed,
            ))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last record")
    return DatasetFile(records, obstacles, grid, frames, start)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, store: ParamStore, config_text: str):
    """Parameters in sorted-name order plus an embedded config text block."""
    arrays = store.arrays()
    itemsizes = {a.dtype.itemsize for a in arrays.values()}
    if len(itemsizes) > 1:
        raise ValueError("mixed parameter dtypes")
    itemsize = itemsizes.pop() if itemsizes else 4
    cfg_bytes = config_text.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", len(arrays), itemsize))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        for name in sorted(arrays):
            a = arrays[name]
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.astype(f"<f{itemsize}").tobytes())

    with open(str(path) + ".txt", "w") as fh:
        fh.write(f"parameters {len(arrays)}\n")
        total = sum(a.size for a in arrays.values())
        fh.write(f"scalars {total}\n")
        fh.write("config:\n")
        for line in config_text.strip().splitlines():
            fh.write(f"  {line}\n")
        for name in sorted(arrays):
            fh.write(f"{name} {'x'.join(map(str, arrays[name].shape)) or 'scalar'}\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        n_params, itemsize = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if itemsize not in (4, 8):
            raise ValueError(f"unsupported parameter itemsize {itemsize}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config_text = _read_exact(fh, cfg_len, "config text").decode()
        arrays = {}
        for i in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"param {i} name length"))
            name = _read_exact(fh, name_len, f"param {i} name").decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"param {i} ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"param {i} shape"))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, itemsize * n, f"param {i} data"), dtype=f"<f{itemsize}")
            arrays[name] = data.reshape(shape).copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last parameter")
    return arrays, config_text


# ---------------------------------------------------------------------------
# image dumps

def write_pgm(path, field: np.ndarray) -> tuple[float, float]:
    """8-bit binary graymap; returns the (min, max) mapped to 0/255."""
    a = np.asarray(field, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2D field, got shape {a.shape}")
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo) * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())
    return lo, hi
