"""Remote score backend over a stream socket (PSCR protocol).

Request and response share one frame layout (little-endian)::

    b"PSCR" | u32 version | f64 t | u32 height | u32 width
    | 2 * height * width f64 values (real plane, then imaginary plane)

The client validates the response header before reading its payload, so a
version or shape mismatch raises without consuming partial data.

Endpoints are ``"host:port"`` (TCP) or ``"unix:/path/to/socket"``.
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading

import numpy as np

from .priors import ScoreModel

__all__ = [
    "PSCR_MAGIC",
    "PSCR_VERSION",
    "ScoreBackendError",
    "ProtocolVersionError",
    "ShapeMismatchError",
    "ScoreTimeoutError",
    "encode_frame",
    "parse_header",
    "RemoteScoreModel",
    "ScoreServer",
    "serve_score",
]

PSCR_MAGIC = b"PSCR"
PSCR_VERSION = 1
_HEADER = struct.Struct("<4sIdII")


class ScoreBackendError(RuntimeError):
    """Any failure of the remote score backend."""


class ProtocolVersionError(ScoreBackendError):
    pass


class ShapeMismatchError(ScoreBackendError):
    pass


class ScoreTimeoutError(ScoreBackendError):
    pass


def encode_frame(x, t: float, version: int = PSCR_VERSION) -> bytes:
    x = np.asarray(x, dtype="<f8")
    if x.ndim != 3 or x.shape[0] != 2:
        raise ShapeMismatchError("score payload must have shape (2, height, width)")
    _, h, w = x.shape
    return _HEADER.pack(PSCR_MAGIC, version, float(t), h, w) + np.ascontiguousarray(x).tobytes()


def parse_header(buf: bytes):
    magic, version, t, h, w = _HEADER.unpack(buf)
    if magic != PSCR_MAGIC:
        raise ScoreBackendError("bad PSCR magic")
    return version, t, h, w


def _recv_exact(sock, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ScoreBackendError("connection closed by peer")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _parse_endpoint(endpoint: str):
    if endpoint.startswith("unix:"):
        return socket.AF_UNIX, endpoint[5:]
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be 'host:port' or 'unix:/path', got {endpoint!r}")
    return socket.AF_INET, (host, int(port))


class RemoteScoreModel(ScoreModel):
    """:class:`ScoreModel` served by a remote process.

    One connection is kept per calling thread and reused across requests.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, version: int = PSCR_VERSION):
        self.family, self.address = _parse_endpoint(endpoint)
        self.endpoint = endpoint
        self.timeout = timeout
        self.version = version
        self._local = threading.local()

    def _conn(self):
        sock = getattr(self._local, "sock", None)
        if sock is None:
            sock = socket.socket(self.family, socket.SOCK_STREAM)
            sock.settimeout(self.timeout)
            try:
                sock.connect(self.address)
            except socket.timeout as exc:
                sock.close()
                raise ScoreTimeoutError(f"connect to {self.endpoint} timed out") from exc
            except OSError as exc:
                sock.close()
                raise ScoreBackendError(f"cannot connect to {self.endpoint}: {exc}") from exc
            self._local.sock = sock
        return sock

    def close(self):
        sock = getattr(self._local, "sock", None)
        if sock is not None:
            sock.close()
            self._local.sock = None

    def evaluate(self, x, t):
        x = np.asarray(x, dtype=float)
        frame = encode_frame(x, t, self.version)
        sock = self._conn()
        try:
            sock.sendall(frame)
            version, _, h, w = parse_header(_recv_exact(sock, _HEADER.size))
            if version != self.version:
                self.close()
                raise ProtocolVersionError(f"server speaks PSCR v{version}, client v{self.version}")
            if (2, h, w) != x.shape:
                self.close()
                raise ShapeMismatchError(f"response shape (2, {h}, {w}) != request shape {x.shape}")
            payload = _recv_exact(sock, 16 * h * w)
        except socket.timeout as exc:
            self.close()
            raise ScoreTimeoutError(f"score request to {self.endpoint} timed out") from exc
        except OSError as exc:
            self.close()
            raise ScoreBackendError(str(exc)) from exc
        return np.frombuffer(payload, dtype="<f8").reshape(x.shape).astype(float)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        srv = self.server
        while True:
            try:
                head = _recv_exact(sock, _HEADER.size)
            except ScoreBackendError:
                return
            version, t, h, w = parse_header(head)
            if version != srv.version:
                # answer with our version and no payload, then hang up
                sock.sendall(_HEADER.pack(PSCR_MAGIC, srv.version, t, 0, 0))
                return
            x = np.frombuffer(_recv_exact(sock, 16 * h * w), dtype="<f8").reshape(2, h, w)
            out = np.asarray(srv.score_fn(x.copy(), t), dtype="<f8")
            sock.sendall(encode_frame(out, t, srv.version))


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _UnixServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True


class ScoreServer:
    """Serve ``score_fn(x, t)`` on an endpoint in a background thread.

    Use as a context manager; ``endpoint`` reports the bound address (useful
    with port 0).
    """

    def __init__(self, score_fn, endpoint: str = "127.0.0.1:0", version: int = PSCR_VERSION):
        family, address = _parse_endpoint(endpoint)
        cls = _UnixServer if family == socket.AF_UNIX else _TCPServer
        self.server = cls(address, _Handler)
        self.server.score_fn = score_fn
        self.server.version = version
        if family == socket.AF_UNIX:
            self.endpoint = endpoint
        else:
            host, port = self.server.server_address[:2]
            self.endpoint = f"{host}:{port}"
        self._thread = None

    def start(self):
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.server.shutdown()
        self.server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_score(score, endpoint: str = "127.0.0.1:0", version: int = PSCR_VERSION) -> ScoreServer:
    """Start serving a :class:`ScoreModel` (or callable) and return the server."""
    fn = score.evaluate if isinstance(score, ScoreModel) else score
    return ScoreServer(fn, endpoint, version).start()
