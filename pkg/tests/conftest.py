import contextlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ethmerge.ingest import BlockHeader, SlotRecord, TxRecord, write_jsonl

SUITE_BUDGET_S = 300.0
ACCEPTANCE: list[str] = []
_session: dict = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion around a test body."""
    notes: list[str] = []
    t0 = time.perf_counter()
    try:
        yield notes
    except BaseException:
        line = f"criterion {number:>2} FAIL  {title}"
        ACCEPTANCE.append(line + (f"  [{'; '.join(notes)}]" if notes else ""))
        print(ACCEPTANCE[-1])
        raise
    took = time.perf_counter() - t0
    ACCEPTANCE.append(f"criterion {number:>2} PASS  {title}  [{'; '.join(notes + [f'{took:.1f} s'])}]")
    print(ACCEPTANCE[-1])


def pytest_sessionstart(session):
    _session["t0"] = time.perf_counter()


def _suite_line():
    elapsed = time.perf_counter() - _session["t0"]
    ok = elapsed < SUITE_BUDGET_S
    return ok, (f"criterion 11 {'PASS' if ok else 'FAIL'}  full suite under {SUITE_BUDGET_S:.0f} s"
                f"  [{elapsed:.1f} s]")


@pytest.hookimpl(tryfirst=True)
def pytest_sessionfinish(session, exitstatus):
    if ACCEPTANCE and not _suite_line()[0]:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE + [_suite_line()[1]]:
        terminalreporter.write_line(line)


def h32(tag: str, n: int) -> str:
    return "0x" + f"{tag}{n:x}".rjust(64, "0")


def make_header(n: int, producer: str = "0x" + "aa" * 20, ts: int | None = None, gas_used: int = 15_000_000,
                base_fee: int = 10 * 10**9) -> BlockHeader:
    return BlockHeader(number=n, hash=h32("b", n), parent_hash=h32("b", n - 1), producer=producer,
                       timestamp=ts if ts is not None else 1_700_000_000 + 12 * n, gas_used=gas_used,
                       gas_limit=30_000_000, base_fee_per_gas=base_fee)


def write_fixture(d, headers, txs=(), slots=()):
    d.mkdir(parents=True, exist_ok=True)
    write_jsonl(d / "headers.jsonl", headers)
    write_jsonl(d / "txs.jsonl", txs)
    write_jsonl(d / "slots.jsonl", slots)
    return d


@pytest.fixture
def small_fixture(tmp_path):
    """Blocks 100..102 with 5 txs, slots 0..4 (slot 1 missed)."""
    headers = [make_header(n) for n in (100, 101, 102)]
    txs = [
        TxRecord(h32("t", 1), 100, 21000, 12 * 10**9, 1),
        TxRecord(h32("t", 2), 100, 50000, 11 * 10**9, 0),
        TxRecord(h32("t", 3), 101, 30000, 13 * 10**9, 5),
        TxRecord(h32("t", 4), 102, 60000, 10 * 10**9, 0),
        TxRecord(h32("t", 5), 102, 21000, 15 * 10**9, 7),
    ]
    slots = [
        SlotRecord(0, 11, 100, 500, 1000),
        SlotRecord(1, 12, None, 0, 1000),
        SlotRecord(2, 13, 101, 510, 1000),
        SlotRecord(3, 14, 102, 520, 1000),
        SlotRecord(4, 15, None, 0, 1000),
    ]
    return write_fixture(tmp_path / "fx", headers, txs, slots)


class FakeServer:
    """Threaded HTTP server dispatching to a handler function ``(method, path, body) -> (status, obj)``."""

    def __init__(self, handler):
        outer = self
        self.calls = []

        class H(BaseHTTPRequestHandler):
            def _serve(self, method):
                n = int(self.headers.get("Content-Length") or 0)
                body = json.loads(self.rfile.read(n)) if n else None
                outer.calls.append((method, self.path, body))
                status, obj = handler(method, self.path, body)
                data = json.dumps(obj).encode()
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

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def fake_server():
    return FakeServer


@pytest.fixture(scope="session")
def fee_data():
    """A generated fee chain and the dataset built from it."""
    from ethmerge.dataset import dataset_from_records
    from ethmerge.synth import SynthFeeConfig, gen_fee_chain

    chain = gen_fee_chain(SynthFeeConfig(n_txs=8000, seed=7))
    return chain, dataset_from_records(chain.headers, chain.txs, chain.slots)
