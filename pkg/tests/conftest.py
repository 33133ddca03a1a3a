from pathlib import Path
import os
from datetime import datetime, timedelta, timezone

import pytest

from vulnwatch._accel import HAVE_NUMBA
from vulnwatch.corpus import Tweet

DATA = Path(__file__).parent / "data"
BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
T0 = datetime(2020, 2, 19, 12, 0, tzinfo=timezone.utc)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def data_dir():
    return DATA


def make_tweets(texts, start=T0, step=timedelta(hours=1), lang="en"):
    return [Tweet(str(i), start + i * step, text, lang) for i, text in enumerate(texts)]


class _Recorder:
    def __init__(self, handler):
        self.handler = handler
        self.requests = []


@pytest.fixture
def http_service():
    """Start a local HTTP server whose responses come from ``handler(method, path, headers, body)``.

    The handler returns ``(status, json_obj_or_str)``; strings are sent as-is
    (use a trailing newline per record for streams).
    """
    import json
    import threading
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    servers = []

    def start(handler):
        rec = _Recorder(handler)

        class H(BaseHTTPRequestHandler):
            def _serve(self, method):
                n = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(n) if n else b""
                rec.requests.append((method, self.path, dict(self.headers), body))
                status, payload = rec.handler(method, self.path, self.headers, body)
                data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._serve("GET")

            def do_POST(self):
                self._serve("POST")

            def log_message(self, *args):
                pass

        srv = ThreadingHTTPServer(("127.0.0.1", 0), H)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        rec.url = f"http://127.0.0.1:{srv.server_address[1]}"
        return rec

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


SEC_WORDS = ["critical", "server", "update", "remote", "windows", "fix", "exploit"]
FRUIT_WORDS = ["fruit", "yellow", "tasty", "smoothie", "market", "sweet", "peel"]


def cooccurrence_docs(seed):
    """200 docs where cve and patch co-occur, 200 where banana does, with shuffled filler."""
    import random

    from vulnwatch.features import TokenizedDoc

    rng = random.Random(seed)
    docs = []
    for i in range(200):
        toks = ["cve", "patch"] + rng.sample(SEC_WORDS, 4)
        rng.shuffle(toks)
        docs.append(TokenizedDoc(f"s{i}", tuple(toks)))
        toks = ["banana"] + rng.sample(FRUIT_WORDS, 5)
        rng.shuffle(toks)
        docs.append(TokenizedDoc(f"f{i}", tuple(toks)))
    return docs
