"""JSON-over-HTTP access to a trained model, plus the payload builders it
shares with the command-line tools.

The same `generation_payload` + `payload_json` pair renders the CLI
`generate` artifact and the POST /generate response body, so the two are
byte-identical for the same request — the explorer UI relies on that when
cross-checking against files on disk.

Routes:
    GET  /healthz     liveness probe
    GET  /model/info  parameter counts and the full config echo
    GET  /scenarios   every scenario the server was started with (full
                      geometry: lanes, history, truth), for client rendering
    POST /generate    body: {"scenario_id" | "scenario", "latent_overrides"?,
                      "noise_seed"?, "num_samples"?} -> trajectories, jerk,
                      latent traces, estimated controls

The server never mutates the model: each worker thread reads one immutable
snapshot object, and hot-swapping a new snapshot onto the server attribute
is atomic.
"""

from __future__ import annotations

import dataclasses
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .metrics import JERK_VIOLATION_THRESHOLD, jerk_profile
from .scenarios import Scenario, scenario_from_record, scenario_to_record


class BadRequest(ValueError):
    """Malformed request body or parameters."""


class NotFound(LookupError):
    """Unknown scenario id or route."""


# --- payloads (shared with the CLI) -----------------------------------------


def payload_json(doc) -> str:
    """Canonical JSON rendering: sorted keys, compact separators, full
    round-trip float precision, one trailing newline."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def generation_payload(model, scenario: Scenario, *, num_samples: int = 1,
                       noise_seed: int = 0, latent_overrides=None) -> dict:
    """Run the generator and flatten everything a client needs into JSON."""
    gen = model.generate(scenario, num_samples=num_samples, noise_seed=noise_seed,
                         latent_overrides=latent_overrides)
    delta = model.config.delta
    jerk = []
    for traj in gen.trajectories:
        profile = jerk_profile(traj, delta)
        jerk.append({
            "mean_abs_jerk": float(profile.mean()),
            "max_abs_jerk": float(profile.max()),
            "violates": bool(profile.max() > JERK_VIOLATION_THRESHOLD),
        })
    return {
        "scenario_id": scenario.id,
        "family": scenario.family,
        "num_samples": int(num_samples),
        "noise_seed": int(noise_seed),
        "step_seconds": delta,
        "frame": scenario.frame.tolist(),
        "trajectories": [t.tolist() for t in gen.trajectories],
        "latents": gen.latents.tolist(),
        "controls": {
            "u1": gen.u1.tolist(),
            "u2": gen.u2.tolist(),
            "u2_normalized": gen.u2_normalized.tolist(),
            "beta": gen.beta.tolist(),
        },
        "jerk": jerk,
    }


def model_info_payload(model) -> dict:
    info = model.info()
    info["config"] = dataclasses.asdict(model.config)
    return info


def parse_generate_request(doc, scenario_index: dict) -> tuple[Scenario, dict | None, int, int]:
    """Validate a /generate body against the scenarios the server holds."""
    if not isinstance(doc, dict):
        raise BadRequest("request body must be a JSON object")
    if "scenario" in doc:
        try:
            scenario = scenario_from_record(doc["scenario"])
        except (ValueError, TypeError) as err:
            raise BadRequest(f"inline scenario: {err}") from err
    elif "scenario_id" in doc:
        sid = doc["scenario_id"]
        if sid not in scenario_index:
            raise NotFound(f"unknown scenario id {sid!r}")
        scenario = scenario_index[sid]
    else:
        raise BadRequest("request needs a 'scenario_id' or an inline 'scenario'")

    num_samples = doc.get("num_samples", 1)
    if isinstance(num_samples, bool) or not isinstance(num_samples, int) or num_samples < 1:
        raise BadRequest(f"num_samples must be a positive integer, got {num_samples!r}")
    noise_seed = doc.get("noise_seed", 0)
    if isinstance(noise_seed, bool) or not isinstance(noise_seed, int) or noise_seed < 0:
        raise BadRequest(f"noise_seed must be a non-negative integer, got {noise_seed!r}")
    overrides = doc.get("latent_overrides")
    if overrides is not None and not isinstance(overrides, dict):
        raise BadRequest("latent_overrides must be an object")
    return scenario, overrides, noise_seed, num_samples


# --- server ------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Snapshot:
    """Immutable serving state: one model, one scenario catalogue."""

    model: object
    scenarios: tuple
    index: dict

    @classmethod
    def build(cls, model, scenarios) -> "Snapshot":
        scenarios = tuple(scenarios)
        index = {s.id: s for s in scenarios}
        if len(index) != len(scenarios):
            raise ValueError("scenario ids must be unique")
        return cls(model=model, scenarios=scenarios, index=index)


class ExplorerServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, snapshot: Snapshot):
        super().__init__(address, _Handler)
        self.snapshot = snapshot

    def swap(self, snapshot: Snapshot) -> None:
        """Atomically replace the serving state (e.g. after a retrain)."""
        self.snapshot = snapshot


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default; tests hammer the server
        pass

    def _send_text(self, status: int, body: str) -> None:
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _send(self, status: int, doc) -> None:
        self._send_text(status, payload_json(doc))

    def _error(self, status: int, kind: str, message: str) -> None:
        self._send(status, {"error": kind, "message": message})

    def do_OPTIONS(self):  # CORS preflight for browser clients
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        snap = self.server.snapshot
        if self.path == "/healthz":
            self._send(200, {"status": "ok"})
        elif self.path == "/model/info":
            self._send(200, model_info_payload(snap.model))
        elif self.path == "/scenarios":
            self._send(200, {"scenarios": [scenario_to_record(s) for s in snap.scenarios]})
        else:
            self._error(404, "not-found", f"no route {self.path!r}")

    def do_POST(self):
        if self.path != "/generate":
            self._error(404, "not-found", f"no route {self.path!r}")
            return
        snap = self.server.snapshot
        try:
            length = int(self.headers.get("Content-Length", 0))
            doc = json.loads(self.rfile.read(length) or b"")
        except (ValueError, TypeError):
            self._error(400, "bad-request", "body is not valid JSON")
            return
        try:
            scenario, overrides, noise_seed, num_samples = \
                parse_generate_request(doc, snap.index)
            body = payload_json(generation_payload(
                snap.model, scenario, num_samples=num_samples,
                noise_seed=noise_seed, latent_overrides=overrides))
        except NotFound as err:
            self._error(404, "not-found", str(err))
            return
        except (BadRequest, ValueError) as err:
            self._error(400, "bad-request", str(err))
            return
        self._send_text(200, body)


def make_server(model, scenarios, host: str = "127.0.0.1", port: int = 8793) -> ExplorerServer:
    """Bind and return the server; the caller decides when to serve_forever()."""
    return ExplorerServer((host, port), Snapshot.build(model, scenarios))
