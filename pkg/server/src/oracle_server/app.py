"""HTTP layer: the /v1/meta and /v1/predict wire protocol.

GET  /v1/meta    -> 200 {"num_classes": K, "shape": [c, h, w]}
POST /v1/predict -> 200 {"probs": [[K floats], ...]} for a body
                    {"shape": [n, c, h, w], "pixels": [n*c*h*w floats,
                    row-major, channel-major per image]}

Malformed bodies and shape mismatches answer 400 with {"error": ...};
when more requests are in flight than the configured limit, the surplus
answers 503 (retryable). Responses are serialized canonically (compact
separators, fixed key order), so conformance fixtures can compare bytes.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .model import ModelError, ServedModel


def dump_canonical(payload):
    return json.dumps(payload, separators=(",", ":")).encode()


class _Handler(BaseHTTPRequestHandler):
    server_version = "OracleServer/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):
        pass

    def _reply(self, status, payload):
        body = dump_canonical(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/v1/meta":
            self._reply(404, {"error": "unknown path"})
            return
        model = self.server.model
        self._reply(200, {"num_classes": model.num_classes,
                          "shape": list(model.shape)})

    def do_POST(self):
        if self.path != "/v1/predict":
            self._reply(404, {"error": "unknown path"})
            return
        if not self.server.slots.acquire(blocking=False):
            self._reply(503, {"error": "overloaded, retry later"})
            return
        try:
            self._predict()
        finally:
            self.server.slots.release()

    def _predict(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
            shape = payload["shape"]
            pixels = payload["pixels"]
        except (ValueError, KeyError, TypeError) as exc:
            self._reply(400, {"error": f"malformed body: {exc}"})
            return
        model = self.server.model
        if (not isinstance(shape, list) or len(shape) != 4
                or any(not isinstance(v, int) or v < 0 for v in shape)):
            self._reply(400, {"error": f"bad shape {shape!r}"})
            return
        n = shape[0]
        if tuple(shape[1:]) != model.shape:
            self._reply(400, {"error": f"shape {shape} does not match model "
                                       f"input {list(model.shape)}"})
            return
        if n < 1 or len(pixels) != n * np.prod(model.shape):
            self._reply(400, {"error": f"pixel payload has {len(pixels)} values, "
                                       f"expected {n * int(np.prod(model.shape))}"})
            return
        try:
            images = np.asarray(pixels, dtype=np.float64).reshape(shape)
            probs = model.predict(images)
        except (ModelError, ValueError) as exc:
            self._reply(400, {"error": str(exc)})
            return
        self._reply(200, {"probs": probs.tolist()})


class OracleHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, model, max_concurrent=8):
        super().__init__(address, _Handler)
        self.model = model
        self.slots = threading.BoundedSemaphore(max_concurrent) if max_concurrent > 0 \
            else _ClosedGate()


class _ClosedGate:
    """Semaphore stand-in that admits nothing (forces the 503 path)."""

    def acquire(self, blocking=True):
        return False

    def release(self):
        pass


def make_server(weights_path, host="127.0.0.1", port=0, max_concurrent=8):
    model = ServedModel.from_file(weights_path)
    return OracleHTTPServer((host, port), model, max_concurrent=max_concurrent)


def serve(weights_path, port, host="0.0.0.0", max_concurrent=8):
    """Run the prediction service until interrupted."""
    server = make_server(weights_path, host=host, port=port,
                         max_concurrent=max_concurrent)
    try:
        server.serve_forever()
    finally:
        server.server_close()
