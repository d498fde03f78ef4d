"""In-test HTTP stub implementing the prediction wire protocol.

Serves an arbitrary predict function behind /v1/meta and /v1/predict, with
optional injected failures, so the remote-oracle client can be exercised
hermetically (the standalone server package is a separate component and is
not required here).
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np


class StubOracleServer:
    def __init__(self, predict_fn, num_classes, shape, fail_first=0, fail_status=503,
                 fail_after=None):
        self.predict_fn = predict_fn
        self.num_classes = num_classes
        self.shape = list(shape)
        self.fail_remaining = fail_first
        self.fail_status = fail_status
        self.fail_after = fail_after  # successful POSTs allowed before failing forever
        self.successes = 0
        self.request_count = 0
        self.max_concurrent = 0
        self._active = 0
        self._lock = threading.Lock()

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, status, payload):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path != "/v1/meta":
                    self._reply(404, {"error": "not found"})
                    return
                self._reply(200, {"num_classes": stub.num_classes, "shape": stub.shape})

            def do_POST(self):
                with stub._lock:
                    stub.request_count += 1
                    stub._active += 1
                    stub.max_concurrent = max(stub.max_concurrent, stub._active)
                    failing = stub.fail_remaining > 0
                    if failing:
                        stub.fail_remaining -= 1
                    elif stub.fail_after is not None and stub.successes >= stub.fail_after:
                        failing = True
                    else:
                        stub.successes += 1
                try:
                    if self.path != "/v1/predict":
                        self._reply(404, {"error": "not found"})
                        return
                    if failing:
                        self._reply(stub.fail_status, {"error": "injected failure"})
                        return
                    length = int(self.headers["Content-Length"])
                    try:
                        payload = json.loads(self.rfile.read(length))
                        shape = payload["shape"]
                        pixels = np.array(payload["pixels"], dtype=np.float64)
                        images = pixels.reshape(shape)
                    except Exception as exc:
                        self._reply(400, {"error": f"malformed body: {exc}"})
                        return
                    if list(shape[1:]) != stub.shape:
                        self._reply(400, {"error": f"bad shape {shape}"})
                        return
                    probs = stub.predict_fn(images)
                    self._reply(200, {"probs": np.asarray(probs).tolist()})
                finally:
                    with stub._lock:
                        stub._active -= 1

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def endpoint(self):
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
