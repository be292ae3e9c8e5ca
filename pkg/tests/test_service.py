import hashlib
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gpvic.service import PROTOCOL_VERSION, create_app


@pytest.fixture()
def client():
    with TestClient(create_app()) as c:
        yield c


def make_session(client, policy_config=None, environment=None, start=None):
    doc = {"policy": policy_config or {}, "environment": environment or {}}
    if start is not None:
        doc["start_position"] = start
    r = client.post("/sessions", json=doc)
    assert r.status_code == 200, r.text
    return r.json()["session"]


def record_line_demo(client, session, n=120, speed=0.1, start=(0.2, 0.0, 0.2)):
    times = [0.01 * i for i in range(n)]
    positions = [[start[0] + speed * t, start[1], start[2]] for t in times]
    assert client.post(f"/sessions/{session}/demo/begin").status_code == 200
    r = client.post(f"/sessions/{session}/demo/sample",
                    json={"times": times, "positions": positions})
    assert r.status_code == 200
    r = client.post(f"/sessions/{session}/demo/end")
    assert r.status_code == 200, r.text
    return r.json()


def test_health_reports_protocol_version(client):
    r = client.get("/health")
    assert r.json()["protocol_version"] == PROTOCOL_VERSION


def test_create_session_idle_and_unique_ids(client):
    a = make_session(client)
    b = make_session(client)
    assert a != b
    assert client.get(f"/sessions/{a}").json()["status"] == "idle"


def test_invalid_config_rejected(client):
    r = client.post("/sessions", json={"policy": {"theta": 1.5}})
    assert r.status_code == 422


def test_demo_training_sample_count(client):
    # with thinning disabled every consecutive pair becomes one sample
    session = make_session(client, policy_config={"sample_spacing": 0.0})
    result = record_line_demo(client, session, n=120)
    assert result["db_sizes"] == [119, 119, 119, 119]


def test_two_demos_concatenate(client):
    session = make_session(client, policy_config={"sample_spacing": 0.0})
    record_line_demo(client, session, n=80)
    result = record_line_demo(client, session, n=50)
    assert result["db_sizes"] == [79 + 49] * 4
    assert result["n_demos"] == 2


def test_demo_end_without_samples_rejected(client):
    session = make_session(client)
    client.post(f"/sessions/{session}/demo/begin")
    r = client.post(f"/sessions/{session}/demo/end")
    assert r.status_code == 409


def test_step_advances_simulated_time_exactly(client):
    session = make_session(client)
    record_line_demo(client, session)
    r = client.post(f"/sessions/{session}/step", params={"n": 250})
    assert r.status_code == 200
    status = client.get(f"/sessions/{session}").json()
    assert status["t"] == pytest.approx(2.5, abs=1e-12)
    assert status["tick"] == 250


def test_broadcast_schema(client):
    session = make_session(client)
    record_line_demo(client, session)
    row = client.post(f"/sessions/{session}/step").json()["state"]
    for key in ("x", "dx", "k_s", "sigma_rel", "f_stable", "tick", "t", "status"):
        assert key in row
    assert row["protocol_version"] == PROTOCOL_VERSION
    assert 0.0 <= row["sigma_rel"] <= 1.0


def test_feedback_in_region_corrects_without_growth(client):
    session = make_session(client, start=[0.25, 0.0, 0.2])
    record_line_demo(client, session)
    sizes = client.get(f"/sessions/{session}").json()["db_sizes"]
    client.post(f"/sessions/{session}/step")
    r = client.post(f"/sessions/{session}/feedback",
                    json={"increment": [0.0, 0.4, 0.0]})
    ack = r.json()
    assert ack["applied_as"] == "correct"
    assert ack["db_sizes"] == sizes


def test_feedback_far_region_appends(client):
    session = make_session(client, start=[0.25, 0.4, 0.5])  # far from the demo
    record_line_demo(client, session)
    sizes = client.get(f"/sessions/{session}").json()["db_sizes"]
    client.post(f"/sessions/{session}/step")
    ack = client.post(f"/sessions/{session}/feedback",
                      json={"increment": [0.0, -1.0, 0.0]}).json()
    assert ack["applied_as"] == "append"
    assert ack["db_sizes"] == [s + 1 for s in sizes]


def test_goal_flag_marks_goal(client):
    session = make_session(client, start=[0.3, 0.0, 0.2])
    record_line_demo(client, session)
    client.post(f"/sessions/{session}/step")
    ack = client.post(f"/sessions/{session}/feedback",
                      json={"increment": [0, 0, 0], "goal_flag": True}).json()
    assert ack["applied_as"] == "goal"


def test_feedback_requires_active_loop(client):
    session = make_session(client)
    record_line_demo(client, session)
    r = client.post(f"/sessions/{session}/feedback", json={"increment": [0, 0, 0.2]})
    assert r.status_code == 409


def test_malformed_feedback_rejected_without_state_change(client):
    session = make_session(client)
    record_line_demo(client, session)
    client.post(f"/sessions/{session}/step")
    before = client.get(f"/sessions/{session}").json()["db_sizes"]
    r = client.post(f"/sessions/{session}/feedback",
                    json={"increment": [5.0, 0.0, 0.0]})  # out of device range
    assert r.status_code == 422
    assert client.get(f"/sessions/{session}").json()["db_sizes"] == before


def test_field_snapshot_furrow_follows_demo(client):
    session = make_session(client)
    record_line_demo(client, session)  # along x at y=0, z=0.2
    r = client.get(f"/sessions/{session}/field", params={
        "lo0": 0.2, "hi0": 0.5, "lo1": -0.1, "hi1": 0.1,
        "n0": 16, "n1": 11, "slice_axis": 2, "slice_value": 0.2,
    })
    snap = r.json()
    sigma = np.asarray(snap["sigma_rel"]).reshape(16, 11)
    g1 = np.asarray(snap["grid1"])
    # the lowest-uncertainty cell along y must hug the demo line y=0
    cell = abs(g1[1] - g1[0])
    for i in range(16):
        assert abs(g1[int(np.argmin(sigma[i]))]) <= cell + 1e-9


def test_field_snapshot_rejected_without_policy(client):
    session = make_session(client)
    r = client.get(f"/sessions/{session}/field", params={
        "lo0": 0, "hi0": 1, "lo1": 0, "hi1": 1})
    assert r.status_code == 409


def test_field_snapshot_oversize_rejected(client):
    session = make_session(client)
    record_line_demo(client, session)
    r = client.get(f"/sessions/{session}/field", params={
        "lo0": 0, "hi0": 1, "lo1": 0, "hi1": 1, "n0": 300, "n1": 300})
    assert r.status_code == 409


def test_field_snapshot_pure(client):
    session = make_session(client)
    record_line_demo(client, session)
    params = {"lo0": 0.2, "hi0": 0.5, "lo1": -0.1, "hi1": 0.1, "n0": 8, "n1": 8}
    before = hashlib.sha256(
        json.dumps(client.get(f"/sessions/{session}/policy").json(),
                   sort_keys=True).encode()).hexdigest()
    a = client.get(f"/sessions/{session}/field", params=params).json()
    b = client.get(f"/sessions/{session}/field", params=params).json()
    after = hashlib.sha256(
        json.dumps(client.get(f"/sessions/{session}/policy").json(),
                   sort_keys=True).encode()).hexdigest()
    assert a == b
    assert before == after


def test_policy_export_import_round_trip(client):
    session = make_session(client)
    record_line_demo(client, session)
    doc = client.get(f"/sessions/{session}/policy").json()
    other = make_session(client)
    r = client.put(f"/sessions/{other}/policy", json=doc)
    assert r.status_code == 200
    assert r.json()["db_sizes"] == list(doc and client.get(
        f"/sessions/{session}").json()["db_sizes"])


def test_policy_import_rejects_garbage(client):
    session = make_session(client)
    r = client.put(f"/sessions/{session}/policy", json={"version": 99})
    assert r.status_code == 422


def test_acks_totally_ordered_and_sizes_consistent(client):
    session = make_session(client, start=[0.3, 0.0, 0.2])
    record_line_demo(client, session)
    client.post(f"/sessions/{session}/step")
    sizes = []
    for k in range(5):
        ack = client.post(f"/sessions/{session}/feedback",
                          json={"increment": [0.0, 0.2, 0.0]}).json()
        sizes.append(ack["db_sizes"])
    for a, b in zip(sizes, sizes[1:]):
        assert all(y >= x for x, y in zip(a, b))
    status = client.get(f"/sessions/{session}").json()
    assert status["db_sizes"] == sizes[-1]


def test_log_csv_download(client):
    session = make_session(client)
    record_line_demo(client, session)
    client.post(f"/sessions/{session}/step", params={"n": 10})
    text = client.get(f"/sessions/{session}/log.csv").text
    lines = text.strip().splitlines()
    assert lines[0].startswith("tick,t,x,y,z")
    assert len(lines) == 11


def test_start_requires_policy(client):
    session = make_session(client)
    assert client.post(f"/sessions/{session}/start").status_code == 409


def test_live_loop_and_pause_freezes_position(client):
    import time
    session = make_session(client)
    record_line_demo(client, session)
    assert client.post(f"/sessions/{session}/start").json()["status"] == "running"
    time.sleep(0.12)
    assert client.post(f"/sessions/{session}/pause").json()["status"] == "paused"
    a = client.get(f"/sessions/{session}").json()
    assert a["tick"] > 0
    time.sleep(0.08)
    b = client.get(f"/sessions/{session}").json()
    assert b["tick"] == a["tick"]
    assert b["x"] == a["x"]


def test_websocket_stream_and_feedback(client):
    session = make_session(client, start=[0.3, 0.0, 0.2])
    record_line_demo(client, session)
    with client.websocket_connect(f"/sessions/{session}/stream") as ws:
        hello = ws.receive_json()
        assert hello["type"] == "hello"
        assert hello["protocol_version"] == PROTOCOL_VERSION
        client.post(f"/sessions/{session}/start")
        msg = ws.receive_json()
        assert msg["type"] == "state"
        assert len(msg["x"]) == 3
        ws.send_text(json.dumps({"type": "feedback", "increment": [0, 0.3, 0]}))
        ack = None
        for _ in range(50):
            doc = ws.receive_json()
            if doc["type"] == "ack":
                ack = doc
                break
        assert ack is not None and ack["applied_as"] in ("correct", "append")
        client.post(f"/sessions/{session}/pause")


def test_delete_session(client):
    session = make_session(client)
    assert client.delete(f"/sessions/{session}").status_code == 200
    assert client.get(f"/sessions/{session}").status_code == 404


def test_log_dir_archives_session_logs(tmp_path):
    with TestClient(create_app(log_dir=str(tmp_path))) as archiving:
        doc = {"policy": {}, "environment": {}}
        session = archiving.post("/sessions", json=doc).json()["session"]
        record_line_demo(archiving, session)
        archiving.post(f"/sessions/{session}/step", params={"n": 5})
        archiving.post(f"/sessions/{session}/stop")
    files = list(tmp_path.glob("*.csv"))
    assert len(files) == 1
    assert files[0].read_text().startswith("tick,t,x")
