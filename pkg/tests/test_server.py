import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from kinsde.cli import main as cli_main
from kinsde.config import TrainConfig
from kinsde.model import TrajectoryModel
from kinsde.scenarios import generate_mixed_dataset, save_dataset, scenario_to_record
from kinsde.serving import make_server


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    root = tmp_path_factory.mktemp("server")
    scenarios = generate_mixed_dataset(2, seed=21)
    cfg = TrainConfig(seed=4)
    model = TrajectoryModel(cfg)
    server = make_server(model, scenarios, host="127.0.0.1", port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    ckpt = root / "model_best.json"
    model.save(ckpt)
    cfg.save(root / "config.json")
    data = root / "data.json"
    save_dataset(scenarios, data)
    yield {"base": f"http://{host}:{port}", "scenarios": scenarios,
           "model": model, "ckpt": ckpt, "data": data, "root": root}
    server.shutdown()
    server.server_close()


def _get(base, path):
    with urllib.request.urlopen(base + path, timeout=30) as resp:
        return resp.status, resp.read()


def _post(base, path, doc):
    req = urllib.request.Request(
        base + path, data=json.dumps(doc).encode("utf-8"),
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req, timeout=60) as resp:
        return resp.status, resp.read()


def _post_error(base, path, body: bytes):
    req = urllib.request.Request(
        base + path, data=body,
        headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.read()


def test_healthz(served):
    status, body = _get(served["base"], "/healthz")
    assert status == 200
    assert json.loads(body) == {"status": "ok"}


def test_model_info_echoes_config(served):
    status, body = _get(served["base"], "/model/info")
    assert status == 200
    doc = json.loads(body)
    assert doc["config"]["seed"] == 4
    assert doc["horizon"] == 30
    assert doc["total_parameters"] == sum(doc["parameter_groups"].values())


def test_scenarios_route_returns_geometry(served):
    status, body = _get(served["base"], "/scenarios")
    assert status == 200
    doc = json.loads(body)
    recs = doc["scenarios"]
    assert [r["id"] for r in recs] == [s.id for s in served["scenarios"]]
    first = recs[0]
    for key in ("lanes", "target_history", "future_truth", "frame", "family"):
        assert key in first
    assert len(first["target_history"]) == 20


def test_generate_roundtrip_and_count(served):
    sid = served["scenarios"][0].id
    status, body = _post(served["base"], "/generate",
                         {"scenario_id": sid, "num_samples": 3, "noise_seed": 12})
    assert status == 200
    doc = json.loads(body)
    assert doc["scenario_id"] == sid
    assert len(doc["trajectories"]) == 3
    assert len(doc["latents"]) == 3
    assert len(doc["jerk"]) == 3
    assert len(doc["controls"]["u1"]) == 3
    assert len(doc["trajectories"][0]) == 30


def test_generate_identical_requests_are_byte_identical(served):
    req = {"scenario_id": served["scenarios"][1].id, "num_samples": 2,
           "noise_seed": 7,
           "latent_overrides": {"z0": {"mode": "offset", "value": [0, 0, 0.3, 0]}}}
    _, a = _post(served["base"], "/generate", req)
    _, b = _post(served["base"], "/generate", req)
    assert a == b


def test_generate_matches_cli_bytes(served, tmp_path, capsys):
    sid = served["scenarios"][0].id
    rc = cli_main(["generate", "--checkpoint", str(served["ckpt"]),
                   "--data", str(served["data"]), "--scenario-id", sid,
                   "--num-samples", "2", "--noise-seed", "3",
                   "--offset-z0", "0,0,0,0.25",
                   "--out", str(tmp_path / "gen.json")])
    assert rc == 0
    capsys.readouterr()
    _, body = _post(served["base"], "/generate",
                    {"scenario_id": sid, "num_samples": 2, "noise_seed": 3,
                     "latent_overrides": {"z0": {"mode": "offset",
                                                 "value": [0, 0, 0, 0.25]}}})
    assert (tmp_path / "gen.json").read_bytes() == body


def test_generate_inline_scenario(served):
    rec = scenario_to_record(served["scenarios"][1])
    status, body = _post(served["base"], "/generate", {"scenario": rec})
    assert status == 200
    assert json.loads(body)["scenario_id"] == served["scenarios"][1].id


def test_unknown_scenario_is_404(served):
    status, body = _post_error(served["base"], "/generate",
                               json.dumps({"scenario_id": "ghost"}).encode())
    assert status == 404
    assert json.loads(body)["error"] == "not-found"


def test_malformed_body_is_400(served):
    status, body = _post_error(served["base"], "/generate", b"{oops")
    assert status == 400
    assert json.loads(body)["error"] == "bad-request"


def test_bad_num_samples_is_400(served):
    status, body = _post_error(
        served["base"], "/generate",
        json.dumps({"scenario_id": served["scenarios"][0].id,
                    "num_samples": 0}).encode())
    assert status == 400
    assert "num_samples" in json.loads(body)["message"]


def test_bad_override_is_400(served):
    status, body = _post_error(
        served["base"], "/generate",
        json.dumps({"scenario_id": served["scenarios"][0].id,
                    "latent_overrides": {"z0": {"mode": "offset",
                                                "value": [1, 2, 3]}}}).encode())
    assert status == 400
    assert json.loads(body)["error"] == "bad-request"


def test_unknown_route_is_404(served):
    try:
        status, _ = _get(served["base"], "/nope")
    except urllib.error.HTTPError as err:
        status = err.code
    assert status == 404


def test_concurrent_identical_posts_agree(served):
    req = {"scenario_id": served["scenarios"][0].id, "num_samples": 1,
           "noise_seed": 5}
    results = [None] * 6
    def hit(i):
        results[i] = _post(served["base"], "/generate", req)
    threads = [threading.Thread(target=hit, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    bodies = {body for status, body in results}
    assert all(status == 200 for status, _ in results)
    assert len(bodies) == 1


def test_generation_is_scenario_frame_anchored(served):
    # generated points land in the scenario's neighbourhood, not at the origin
    s = served["scenarios"][0]
    _, body = _post(served["base"], "/generate", {"scenario_id": s.id})
    traj = np.array(json.loads(body)["trajectories"][0])
    assert np.linalg.norm(traj[0] - s.frame[:2]) < 50.0
