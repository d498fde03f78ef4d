import sys
import threading
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracle_server.app import make_server

GOLDEN = Path(__file__).parent / "golden"


@contextmanager
def running_server(weights_path, max_concurrent=8):
    server = make_server(weights_path, port=0, max_concurrent=max_concurrent)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        host, port = server.server_address
        yield f"http://{host}:{port}"
    finally:
        server.shutdown()
        server.server_close()


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN
