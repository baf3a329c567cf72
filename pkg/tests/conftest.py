from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from octoscene.config import PipelineConfig


@pytest.fixture
def cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture
def small_cfg() -> PipelineConfig:
    """Config tuned for the small synthetic scenes used in tests."""
    return PipelineConfig(group_interval=2, eor_samples=20_000, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


class FakeServiceHandler(BaseHTTPRequestHandler):
    """Routes POST <path> through FakeServiceHandler.routes[path](body, headers)."""

    routes: dict = {}

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        payload, status = self.routes[self.path](body, dict(self.headers))
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_server():
    server = HTTPServer(("127.0.0.1", 0), FakeServiceHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
