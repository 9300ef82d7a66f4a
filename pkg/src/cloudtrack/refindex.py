"""Reference dataset: descriptors, Fisher vectors, and the on-disk format.

The index file is a single little-endian binary blob with magic ``MLNS1``.
Stored per reference: id, name, dimensions, the descriptor batch, and its
Fisher vector (float64, so a reload reproduces query results bit-exactly).
LSH tables are not stored; they are rebuilt from the recorded seed on load.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .binary_features import AgastConfig, DescriptorArray, detect_agast, extract_freak
from .bmm import BMMParams, EmConfig, FisherVector, encode_fv, train_bmm
from .errors import BuildFailed, InvalidArgument, MalformedMessage
from .geometry import quad_from_size
from .image import ImageGray8
from .lsh import LshConfig, LshIndex, build_lsh

__all__ = ["IndexConfig", "ReferenceEntry", "ReferenceIndex", "build_reference_index"]

log = logging.getLogger("cloudtrack.index")

MAGIC = b"MLNS1"
VERSION = 1


@dataclass(frozen=True)
class IndexConfig:
    k_components: int = 16
    agast: AgastConfig = field(default_factory=AgastConfig)
    em: EmConfig = field(default_factory=EmConfig)
    lsh: LshConfig = field(default_factory=LshConfig)
    em_sample_cap: int = 60_000
    min_descriptors: int = 20


@dataclass
class ReferenceEntry:
    ref_id: int
    name: str
    width: int
    height: int
    descriptors: DescriptorArray
    fv: np.ndarray  # (K*(D+1),) float64

    @property
    def corners(self) -> np.ndarray:
        """Reference quad in its own pixel coordinates, TL TR BR BL."""
        return quad_from_size(self.width - 1.0, self.height - 1.0)


class ReferenceIndex:
    """Immutable recognition dataset shared read-only across workers."""

    def __init__(self, bmm: BMMParams, entries: dict[int, ReferenceEntry], lsh_cfg: LshConfig):
        self.bmm = bmm
        self.entries = dict(sorted(entries.items()))
        self.lsh_cfg = lsh_cfg
        ids = list(self.entries)
        fvs = np.stack([self.entries[i].fv for i in ids]) if ids else np.empty((0, 0))
        self.lsh: LshIndex = build_lsh(list(fvs), ref_ids=ids, cfg=lsh_cfg)

    def __len__(self) -> int:
        return len(self.entries)

    def encode(self, descriptors) -> FisherVector:
        return encode_fv(descriptors, self.bmm)

    # --- serialization ------------------------------------------------

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            self._write(fh)

    def _write(self, fh: BinaryIO) -> None:
        k = self.bmm.component_count
        d = self.bmm.bit_dim
        fh.write(MAGIC)
        fh.write(struct.pack("<BII", VERSION, k, d))
        fh.write(struct.pack("<IIQ", self.lsh_cfg.tables, self.lsh_cfg.bits, self.lsh_cfg.seed))
        fh.write(struct.pack("<I", len(self.entries)))
        fh.write(self.bmm.weights.astype("<f8").tobytes())
        fh.write(self.bmm.means.astype("<f8").tobytes())
        for ref_id, entry in self.entries.items():
            name = entry.name.encode("utf-8")
            fh.write(struct.pack("<IH", ref_id, len(name)))
            fh.write(name)
            n = len(entry.descriptors)
            fh.write(struct.pack("<III", entry.width, entry.height, n))
            fh.write(entry.descriptors.bits.astype(np.uint8).tobytes())
            fh.write(entry.descriptors.xy.astype("<f4").tobytes())
            fh.write(entry.descriptors.octave.astype(np.int8).tobytes())
            fh.write(entry.descriptors.orientation.astype("<f4").tobytes())
            fh.write(entry.fv.astype("<f8").tobytes())

    @staticmethod
    def load(path: str) -> "ReferenceIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        return ReferenceIndex._read(memoryview(data))

    @staticmethod
    def _read(buf: memoryview) -> "ReferenceIndex":
        if bytes(buf[:5]) != MAGIC:
            raise MalformedMessage("not a reference index file (bad magic)")
        off = 5
        version, k, d = struct.unpack_from("<BII", buf, off)
        off += struct.calcsize("<BII")
        if version != VERSION:
            raise MalformedMessage(f"unsupported index version {version}")
        tables, bits, seed = struct.unpack_from("<IIQ", buf, off)
        off += struct.calcsize("<IIQ")
        (n_refs,) = struct.unpack_from("<I", buf, off)
        off += 4
        weights = np.frombuffer(buf, "<f8", k, off).copy()
        off += 8 * k
        means = np.frombuffer(buf, "<f8", k * d, off).reshape(k, d).copy()
        off += 8 * k * d
        bmm = BMMParams(weights, means)
        fv_len = k * (d + 1)
        entries: dict[int, ReferenceEntry] = {}
        for _ in range(n_refs):
            ref_id, name_len = struct.unpack_from("<IH", buf, off)
            off += 6
            name = bytes(buf[off : off + name_len]).decode("utf-8")
            off += name_len
            width, height, n = struct.unpack_from("<III", buf, off)
            off += 12
            bits_arr = np.frombuffer(buf, np.uint8, n * 64, off).reshape(n, 64).copy()
            off += n * 64
            xy = np.frombuffer(buf, "<f4", n * 2, off).reshape(n, 2).copy()
            off += 8 * n
            octave = np.frombuffer(buf, np.int8, n, off).copy()
            off += n
            orientation = np.frombuffer(buf, "<f4", n, off).copy()
            off += 4 * n
            fv = np.frombuffer(buf, "<f8", fv_len, off).copy()
            off += 8 * fv_len
            entries[ref_id] = ReferenceEntry(
                ref_id=ref_id,
                name=name,
                width=width,
                height=height,
                descriptors=DescriptorArray(bits_arr, xy, octave, orientation),
                fv=fv,
            )
        if off != len(buf):
            raise MalformedMessage(f"{len(buf) - off} trailing bytes in index file")
        return ReferenceIndex(bmm, entries, LshConfig(tables=tables, bits=bits, seed=seed))


def build_reference_index(
    images: list[tuple[int, str, ImageGray8]], cfg: IndexConfig | None = None
) -> ReferenceIndex:
    """Detect, describe, train the mixture, encode, and assemble the index.

    ``images`` is a list of (ref_id, name, image). Unusable entries (too few
    descriptors) are skipped with a warning; zero usable images fails.
    """
    cfg = cfg or IndexConfig()
    described: list[tuple[int, str, ImageGray8, DescriptorArray]] = []
    for ref_id, name, image in images:
        try:
            kps = detect_agast(image, cfg.agast)
            descs, _ = extract_freak(image, kps, octaves=cfg.agast.octaves)
        except InvalidArgument as exc:
            log.warning("skipping reference %r: %s", name, exc)
            continue
        if len(descs) < cfg.min_descriptors:
            log.warning("skipping reference %r: only %d descriptors", name, len(descs))
            continue
        described.append((ref_id, name, image, descs))
    if not described:
        raise BuildFailed("no usable reference images")

    pool = np.concatenate([d.bits for _, _, _, d in described])
    if pool.shape[0] > cfg.em_sample_cap:
        rng = np.random.default_rng(cfg.em.seed)
        pool = pool[rng.choice(pool.shape[0], cfg.em_sample_cap, replace=False)]
    log.info("training %d-component mixture on %d descriptors", cfg.k_components, pool.shape[0])
    bmm = train_bmm(pool, cfg.k_components, cfg.em)

    entries = {}
    for ref_id, name, image, descs in described:
        entries[ref_id] = ReferenceEntry(
            ref_id=ref_id,
            name=name,
            width=image.width,
            height=image.height,
            descriptors=descs,
            fv=encode_fv(descs, bmm).values,
        )
    log.info("indexed %d references", len(entries))
    return ReferenceIndex(bmm, entries, cfg.lsh)
