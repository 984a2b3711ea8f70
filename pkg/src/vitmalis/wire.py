"""Length-prefixed binary protocol for the optional client/server split.

Frames are u32 big-endian length + payload. Payload starts with a type
byte: 0x01 offload request (frame id, knobs, packed mask, payload size in
tenths of KiB), 0x02 inference response (frame id, boxes as 4 float32 plus
u32 id, inference time in microseconds). The connection carries strictly
alternating request/response pairs; timing always comes from the simulated
network, so the socket path exercises plumbing only.
"""

from __future__ import annotations

import socket
import struct
import threading

from .estimator import Configuration
from .grid import DownsampleMask, GridGeometry
from .scene import Box, FrameTruth
from .serversim import PayloadKind, ServerProfile, infer

MSG_OFFLOAD_REQUEST = 0x01
MSG_INFERENCE_RESPONSE = 0x02


class ProtocolError(ValueError):
    pass


def encode_request(
    frame_id: int, config: Configuration, mask: DownsampleMask, payload_kib: float
) -> bytes:
    mask_bytes = mask.pack()
    return (
        struct.pack(
            ">BIBBBH",
            MSG_OFFLOAD_REQUEST,
            frame_id,
            config.tau_d,
            config.lambda_q,
            config.beta,
            len(mask_bytes),
        )
        + mask_bytes
        + struct.pack(">I", int(round(payload_kib * 10)))
    )


def decode_request(payload: bytes) -> tuple[int, Configuration, bytes, float]:
    if len(payload) < 10 or payload[0] != MSG_OFFLOAD_REQUEST:
        raise ProtocolError("not an offload request")
    _, frame_id, tau_d, lambda_q, beta, mask_len = struct.unpack_from(">BIBBBH", payload, 0)
    offset = 10
    if len(payload) != offset + mask_len + 4:
        raise ProtocolError(f"bad request length {len(payload)} for mask_len {mask_len}")
    mask_bytes = payload[offset : offset + mask_len]
    (size_x10,) = struct.unpack_from(">I", payload, offset + mask_len)
    return frame_id, Configuration(tau_d, lambda_q, beta), mask_bytes, size_x10 / 10.0


def encode_response(frame_id: int, boxes, inference_us: int) -> bytes:
    parts = [struct.pack(">BIH", MSG_INFERENCE_RESPONSE, frame_id, len(boxes))]
    for b in boxes:
        parts.append(struct.pack(">ffffI", b.x, b.y, b.w, b.h, b.object_id))
    parts.append(struct.pack(">I", inference_us))
    return b"".join(parts)


def decode_response(payload: bytes) -> tuple[int, tuple[Box, ...], int]:
    if len(payload) < 7 or payload[0] != MSG_INFERENCE_RESPONSE:
        raise ProtocolError("not an inference response")
    _, frame_id, n_boxes = struct.unpack_from(">BIH", payload, 0)
    expect = 7 + n_boxes * 20 + 4
    if len(payload) != expect:
        raise ProtocolError(f"bad response length {len(payload)}, expected {expect}")
    boxes = []
    offset = 7
    for _ in range(n_boxes):
        x, y, w, h, oid = struct.unpack_from(">ffffI", payload, offset)
        boxes.append(Box(oid, float(x), float(y), float(w), float(h)))
        offset += 20
    (inference_us,) = struct.unpack_from(">I", payload, offset)
    return frame_id, tuple(boxes), inference_us


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one length-prefixed frame; None on clean EOF."""
    header = _recv_exactly(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    payload = _recv_exactly(sock, length)
    if payload is None and length > 0:
        raise ProtocolError("connection closed mid-frame")
    return payload if payload is not None else b""


def _recv_exactly(sock: socket.socket, count: int) -> bytes | None:
    if count == 0:
        return b""
    chunks = []
    got = 0
    while got < count:
        chunk = sock.recv(count - got)
        if not chunk:
            if got == 0:
                return None
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def serve_connection(
    conn: socket.socket,
    truths: list[FrameTruth],
    geom: GridGeometry,
    profile: ServerProfile,
) -> int:
    """Answer offload requests until the peer closes; returns request count."""
    served = 0
    while True:
        payload = recv_frame(conn)
        if payload is None:
            return served
        frame_id, config, mask_bytes, _size_kib = decode_request(payload)
        mask = DownsampleMask.unpack(mask_bytes, geom.region_count)
        result = infer(profile, config, mask, truths[frame_id], geom, PayloadKind.MIXED)
        inference_us = int(round(result.inference_ms * 1000.0))
        send_frame(conn, encode_response(frame_id, result.boxes, inference_us))
        served += 1


class SocketTransport:
    """Client-side transport: one request/response per offload.

    Only mixed-resolution payloads travel the wire; policies using blanked
    or uniform payloads run in-process.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def __call__(
        self,
        config: Configuration,
        mask: DownsampleMask,
        frame_id: int,
        payload_kib: float,
        kind: PayloadKind,
    ) -> tuple[tuple[Box, ...], float]:
        if kind is not PayloadKind.MIXED:
            raise ProtocolError(f"socket transport supports mixed payloads only, got {kind}")
        send_frame(self.sock, encode_request(frame_id, config, mask, payload_kib))
        payload = recv_frame(self.sock)
        if payload is None:
            raise ProtocolError("server closed the connection")
        resp_frame, boxes, inference_us = decode_response(payload)
        if resp_frame != frame_id:
            raise ProtocolError(f"response for frame {resp_frame}, expected {frame_id}")
        return boxes, inference_us / 1000.0

    def close(self) -> None:
        self.sock.close()


class InferenceServer:
    """Loopback TCP server for tests and the CLI serve mode."""

    def __init__(self, truths: list[FrameTruth], geom: GridGeometry, profile: ServerProfile):
        self.truths = truths
        self.geom = geom
        self.profile = profile
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind(("127.0.0.1", 0))
        self.listener.listen(1)
        self.address = self.listener.getsockname()
        self._thread: threading.Thread | None = None

    def serve_one_connection(self) -> None:
        conn, _ = self.listener.accept()
        try:
            serve_connection(conn, self.truths, self.geom, self.profile)
        finally:
            conn.close()

    def start_background(self) -> None:
        self._thread = threading.Thread(target=self.serve_one_connection, daemon=True)
        self._thread.start()

    def connect(self) -> SocketTransport:
        sock = socket.create_connection(self.address)
        return SocketTransport(sock)

    def close(self) -> None:
        self.listener.close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
