"""Loopback completions stub server for backend contract tests.

Serves POST /v1/completions with a canned completion and usage count.
A status script lets tests force failure sequences such as 429-then-200.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubCompletionServer:
    def __init__(self, text: str = "alpha beta gamma", usage: int = 3,
                 status_script: list[int] | None = None,
                 raw_body: bytes | None = None):
        self.text = text
        self.usage = usage
        self.status_script = list(status_script or [])
        self.raw_body = raw_body
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length)) if length else {}
                with outer._lock:
                    outer.requests.append(body)
                    status = outer.status_script.pop(0) if outer.status_script else 200
                if self.path != "/v1/completions":
                    status = 404
                if status != 200:
                    self.send_response(status)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                if outer.raw_body is not None:
                    payload = outer.raw_body
                else:
                    max_tokens = int(body.get("max_tokens", 0))
                    usage = min(outer.usage, max_tokens)
                    payload = json.dumps({
                        "choices": [{"text": outer.text}],
                        "usage": {"completion_tokens": usage},
                    }).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubCompletionServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
