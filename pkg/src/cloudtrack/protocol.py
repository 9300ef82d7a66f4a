"""Datagram wire format for recognition requests and results.

Both message kinds share the 4-byte versioned magic ``MLN1`` and are fixed
little-endian so datagrams are portable across platforms. Results are always
padded to exactly 400 bytes: a 16-byte header plus up to ten 36-byte object
records (u16 object id, u16 reference id, eight float32 corner coordinates).

Requests carry one deflate-compressed grayscale frame and must fit a single
datagram; there is no fragmentation, acknowledgement, or retransmission.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityExceeded, InvalidArgument, MalformedMessage, PayloadTooLarge
from .image import ImageGray8

__all__ = [
    "MAGIC",
    "MAX_DATAGRAM",
    "RESULT_SIZE",
    "MAX_RESULT_OBJECTS",
    "CODEC_DEFLATE_GRAY8",
    "RecognizedObject",
    "RecognitionRequest",
    "ResultMessage",
    "encode_request",
    "decode_request",
    "encode_result",
    "decode_result",
]

MAGIC = b"MLN1"
MSG_REQUEST = 1
MSG_RESULT = 2
CODEC_DEFLATE_GRAY8 = 1

MAX_DATAGRAM = 65507  # UDP payload limit for a single datagram
RESULT_SIZE = 400

_REQUEST_HEADER = struct.Struct("<4sBBHHIII")  # magic, type, codec, w, h, nonce, cycle, payload_len
_RESULT_HEADER = struct.Struct("<4sBBHII")  # magic, type, reserved, count, cycle, nonce
_RESULT_RECORD = struct.Struct("<HH8f")

MAX_RESULT_OBJECTS = (RESULT_SIZE - _RESULT_HEADER.size) // _RESULT_RECORD.size
assert MAX_RESULT_OBJECTS == 10


@dataclass
class RecognizedObject:
    """One recognized reference: ids plus its corner quad (TL, TR, BR, BL)."""

    object_id: int
    ref_id: int
    corners: np.ndarray  # (4, 2) float32, request-frame pixels

    def __post_init__(self) -> None:
        self.corners = np.asarray(self.corners, dtype=np.float32).reshape(4, 2)
        for name, value in (("object_id", self.object_id), ("ref_id", self.ref_id)):
            if not (0 <= int(value) <= 0xFFFF):
                raise InvalidArgument(f"{name} must fit in 16 bits, got {value}")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RecognizedObject)
            and self.object_id == other.object_id
            and self.ref_id == other.ref_id
            and np.array_equal(self.corners, other.corners)
        )


@dataclass
class RecognitionRequest:
    """One offloaded key frame awaiting recognition."""

    nonce: int
    cycle_id: int
    frame: ImageGray8

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RecognitionRequest)
            and self.nonce == other.nonce
            and self.cycle_id == other.cycle_id
            and np.array_equal(self.frame.pixels, other.frame.pixels)
        )


@dataclass
class ResultMessage:
    """Recognition answer for one request frame; encodes to exactly 400 bytes."""

    cycle_id: int
    nonce: int = 0
    objects: list[RecognizedObject] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ResultMessage)
            and self.cycle_id == other.cycle_id
            and self.nonce == other.nonce
            and self.objects == other.objects
        )


def encode_request(req: RecognitionRequest, *, compression_level: int = 6) -> bytes:
    """Serialize a request; raises PayloadTooLarge past the datagram limit."""
    frame = req.frame
    payload = zlib.compress(frame.pixels.tobytes(), compression_level)
    total = _REQUEST_HEADER.size + len(payload)
    if total > MAX_DATAGRAM:
        raise PayloadTooLarge(
            f"encoded request is {total} bytes (> {MAX_DATAGRAM}); downscale the frame"
        )
    header = _REQUEST_HEADER.pack(
        MAGIC,
        MSG_REQUEST,
        CODEC_DEFLATE_GRAY8,
        frame.width,
        frame.height,
        req.nonce & 0xFFFFFFFF,
        req.cycle_id & 0xFFFFFFFF,
        len(payload),
    )
    return header + payload


def decode_request(data: bytes) -> RecognitionRequest:
    if len(data) < _REQUEST_HEADER.size:
        raise MalformedMessage(f"request truncated at {len(data)} bytes")
    magic, msg_type, codec, width, height, nonce, cycle_id, payload_len = _REQUEST_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedMessage(f"bad magic {magic!r}")
    if msg_type != MSG_REQUEST:
        raise MalformedMessage(f"not a request message (type={msg_type})")
    if codec != CODEC_DEFLATE_GRAY8:
        raise MalformedMessage(f"unknown payload codec {codec}")
    payload = data[_REQUEST_HEADER.size :]
    if len(payload) != payload_len:
        raise MalformedMessage(f"payload length {len(payload)} != declared {payload_len}")
    try:
        raw = zlib.decompress(payload)
    except zlib.error as exc:
        raise MalformedMessage(f"payload does not inflate: {exc}") from exc
    if len(raw) != width * height:
        raise MalformedMessage(f"frame payload is {len(raw)} bytes, expected {width * height}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    return RecognitionRequest(nonce=nonce, cycle_id=cycle_id, frame=ImageGray8(pixels.copy()))


def encode_result(res: ResultMessage) -> bytes:
    """Serialize a result to exactly RESULT_SIZE bytes, zero padded."""
    if len(res.objects) > MAX_RESULT_OBJECTS:
        raise CapacityExceeded(
            f"{len(res.objects)} objects exceed result capacity {MAX_RESULT_OBJECTS}"
        )
    out = bytearray(RESULT_SIZE)
    _RESULT_HEADER.pack_into(
        out,
        0,
        MAGIC,
        MSG_RESULT,
        0,
        len(res.objects),
        res.cycle_id & 0xFFFFFFFF,
        res.nonce & 0xFFFFFFFF,
    )
    offset = _RESULT_HEADER.size
    for obj in res.objects:
        coords = np.asarray(obj.corners, dtype=np.float32).reshape(8)
        _RESULT_RECORD.pack_into(out, offset, obj.object_id, obj.ref_id, *coords)
        offset += _RESULT_RECORD.size
    return bytes(out)


def decode_result(data: bytes) -> ResultMessage:
    if len(data) != RESULT_SIZE:
        raise MalformedMessage(f"result must be exactly {RESULT_SIZE} bytes, got {len(data)}")
    magic, msg_type, reserved, count, cycle_id, nonce = _RESULT_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedMessage(f"bad magic {magic!r}")
    if msg_type != MSG_RESULT:
        raise MalformedMessage(f"not a result message (type={msg_type})")
    if reserved != 0 or count > MAX_RESULT_OBJECTS:
        raise MalformedMessage(f"invalid header fields (reserved={reserved}, count={count})")
    objects = []
    offset = _RESULT_HEADER.size
    for _ in range(count):
        fields = _RESULT_RECORD.unpack_from(data, offset)
        corners = np.array(fields[2:], dtype=np.float32).reshape(4, 2)
        objects.append(RecognizedObject(object_id=fields[0], ref_id=fields[1], corners=corners))
        offset += _RESULT_RECORD.size
    if any(data[offset:]):
        raise MalformedMessage("nonzero padding after object records")
    return ResultMessage(cycle_id=cycle_id, nonce=nonce, objects=objects)
