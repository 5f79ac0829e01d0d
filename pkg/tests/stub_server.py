"""A scripted decision endpoint on a background thread, for wire-protocol tests."""
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    """Answers each POST with the next scripted reply and records the request.

    A reply is either a body string (status 200) or a (status, body) pair. A
    callable reply receives the decoded request and returns one of those.
    """

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        self.headers = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append(body)
                stub.headers.append(dict(self.headers))
                reply = stub.replies.pop(0) if len(stub.replies) > 1 else stub.replies[0]
                if callable(reply):
                    reply = reply(body)
                status, text = reply if isinstance(reply, tuple) else (200, reply)
                data = text.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/decide"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def native(action, thought="ok", plan="keep going"):
    return json.dumps({"thought": thought, "plan": plan, "action": action})


def chat(text):
    return json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]})
