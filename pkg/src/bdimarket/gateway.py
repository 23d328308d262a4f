"""HTTP facade over one Simulation.

The gateway only translates requests into Simulation calls. Every request,
read or write, runs while holding a single lock, so the observable state
is always the result of some serial order of accepted commands.

Endpoints
    POST /ads                   publish a seller advertisement (201)
    GET  /ads                   list advertisements (?product_id=&side=)
    POST /rfq                   queue an RFQ for a buyer agent (202)
    GET  /sessions/{id}         negotiation session state
    POST /tick                  advance one tick (manual mode only)
    GET  /agents/{id}/profile   reputation and behavior index
    GET  /transcript            transcript so far
    GET  /state                 full state snapshot
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .errors import DuplicateAdId, MarketError, UnknownAgent
from .model import Side
from .scenario import Scenario
from .simulation import Simulation, issue_from_dict


class BindError(OSError):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 0
    scenario_path: str = ""
    mode: str = "manual"
    interval: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in ("manual", "auto"):
            raise ValueError(f"unknown step mode {self.mode!r}")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"invalid port {self.port}")
        if self.mode == "auto" and self.interval <= 0:
            raise ValueError("auto mode needs a positive interval")


class _NotFound(Exception):
    pass


class _Conflict(Exception):
    pass


class GatewayServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, sim: Simulation, config: GatewayConfig) -> None:
        self.sim = sim
        self.config = config
        self.lock = threading.Lock()
        self._stop = threading.Event()
        self._ticker: threading.Thread | None = None
        super().__init__(address, _Handler)

    # -- commands, each run under the lock ------------------------------------

    def publish(self, body: dict) -> dict:
        try:
            issues = [issue_from_dict(i) for i in body["issues"]]
            ad = self.sim.publish_advertisement(
                body["ad_id"], body["agent_id"], body["product_id"], issues,
                capacity=int(body.get("capacity", 1)), posted_at=body.get("posted_at"),
            )
        except UnknownAgent as exc:
            raise _NotFound(f"unknown agent {exc}") from None
        except DuplicateAdId as exc:
            raise _Conflict(f"duplicate ad id {exc}") from None
        return {"ad_id": ad.ad_id}

    def submit_rfq(self, body: dict) -> dict:
        try:
            rfq = self.sim.submit_rfq(body["agent_id"], target_seller=body.get("target_seller"),
                                      ttl=body.get("ttl"), min_reputation=body.get("min_reputation"))
        except UnknownAgent as exc:
            raise _NotFound(f"unknown agent {exc}") from None
        return {"rfq_id": rfq.rfq_id, "tick": rfq.submitted_at}

    def tick(self) -> dict:
        if self.config.mode == "auto":
            raise _Conflict("ticks advance automatically in auto mode")
        events = self.sim.step()
        return {"tick": self.sim.tick, "finished": self.sim.finished, "events": events}

    def session(self, session_id: str) -> dict:
        if session_id not in self.sim.engine.sessions:
            raise _NotFound(f"unknown session {session_id}")
        return self.sim.session_view(session_id)

    def profile(self, agent_id: str) -> dict:
        try:
            return self.sim.profile_view(agent_id)
        except UnknownAgent:
            raise _NotFound(f"unknown agent {agent_id}") from None

    def ads(self, query: dict) -> list:
        side = query.get("side")
        try:
            side = Side(side) if side else None
        except ValueError:
            raise ValueError(f"unknown side {side!r}") from None
        return self.sim.ads_view(query.get("product_id"), side)

    # -- auto stepping --------------------------------------------------------

    def start_ticker(self) -> None:
        def loop():
            while not self._stop.wait(self.config.interval):
                with self.lock:
                    if self.sim.finished:
                        return
                    self.sim.step()

        self._ticker = threading.Thread(target=loop, name="gateway-ticker", daemon=True)
        self._ticker.start()

    def shutdown_gateway(self) -> None:
        self._stop.set()
        self.server_close()


class _Handler(BaseHTTPRequestHandler):
    server: GatewayServer
    protocol_version = "HTTP/1.1"

    def setup(self) -> None:
        super().setup()
        # headers and body go out as two writes; without this keep-alive clients stall on delayed ACKs
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def log_message(self, format, *args) -> None:  # noqa: A002 - quiet by default
        pass

    def _reply(self, status: int, body) -> None:
        data = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        body = json.loads(raw or b"{}")
        if not isinstance(body, dict):
            raise ValueError("request body must be a JSON object")
        return body

    def _dispatch(self, method: str) -> None:
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        query = {k: v[-1] for k, v in parse_qs(url.query).items()}
        srv = self.server
        try:
            body = self._body() if method == "POST" else {}
            with srv.lock:
                if method == "POST" and parts == ["ads"]:
                    return self._reply(HTTPStatus.CREATED, srv.publish(body))
                if method == "GET" and parts == ["ads"]:
                    return self._reply(HTTPStatus.OK, srv.ads(query))
                if method == "POST" and parts == ["rfq"]:
                    return self._reply(HTTPStatus.ACCEPTED, srv.submit_rfq(body))
                if method == "POST" and parts == ["tick"]:
                    return self._reply(HTTPStatus.OK, srv.tick())
                if method == "GET" and len(parts) == 2 and parts[0] == "sessions":
                    return self._reply(HTTPStatus.OK, srv.session(parts[1]))
                if method == "GET" and len(parts) == 3 and parts[0] == "agents" and parts[2] == "profile":
                    return self._reply(HTTPStatus.OK, srv.profile(parts[1]))
                if method == "GET" and parts == ["transcript"]:
                    return self._reply(HTTPStatus.OK, srv.sim.transcript)
                if method == "GET" and parts == ["state"]:
                    return self._reply(HTTPStatus.OK, srv.sim.snapshot())
            self._reply(HTTPStatus.NOT_FOUND, {"error": f"no route {method} {url.path}"})
        except _NotFound as exc:
            self._reply(HTTPStatus.NOT_FOUND, {"error": str(exc)})
        except _Conflict as exc:
            self._reply(HTTPStatus.CONFLICT, {"error": str(exc)})
        except (KeyError, TypeError, ValueError, MarketError) as exc:
            self._reply(HTTPStatus.BAD_REQUEST, {"error": f"{type(exc).__name__}: {exc}"})

    def do_GET(self) -> None:  # noqa: N802
        self._dispatch("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._dispatch("POST")


def serve(config: GatewayConfig, scenario: Scenario | None = None,
          sim: Simulation | None = None) -> GatewayServer:
    """Bind the gateway; the caller runs ``serve_forever`` (or use
    ``start_gateway`` for a background thread)."""
    if sim is None:
        if scenario is None:
            from .cli import resolve_scenario
            scenario = resolve_scenario(config.scenario_path)
        sim = Simulation(scenario)
    try:
        server = GatewayServer((config.host, config.port), sim, config)
    except OSError as exc:
        raise BindError(f"cannot bind {config.host}:{config.port}: {exc}") from exc
    if config.mode == "auto":
        server.start_ticker()
    return server


def start_gateway(config: GatewayConfig, scenario: Scenario | None = None,
                  sim: Simulation | None = None) -> tuple[GatewayServer, threading.Thread]:
    server = serve(config, scenario, sim)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05},
                              name="gateway", daemon=True)
    thread.start()
    return server, thread


def stop_gateway(server: GatewayServer, thread: threading.Thread | None = None) -> None:
    server.shutdown()
    server.shutdown_gateway()
    if thread is not None:
        thread.join(timeout=5)
