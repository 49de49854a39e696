"""Gateway tests: commissioning order, headless runs and exit codes, the
message protocol, the TCP service, and realtime pacing."""

import json
import socket
import time

import pytest

from pneurig.daq import AcquisitionConfig
from pneurig.gateway import (
    EXIT_IO_ERROR,
    EXIT_PROGRAM_ERROR,
    GatewayServer,
    Rig,
    RigConfig,
    StartupError,
    run_headless,
    serve,
    startup_sequence,
)
from pneurig.plant import PlantConfig


def quiet_rig_config(tmp_path, clock="fast", seed=0, **plant_kwargs) -> RigConfig:
    plant = PlantConfig(sensor_noise_sigma=0.0, seed=seed, **plant_kwargs)
    acq = AcquisitionConfig(csv_path=str(tmp_path / "rig.csv"))
    return RigConfig(plant=plant, acquisition=acq, clock_mode=clock)


class LineClient:
    """Minimal protocol client for tests."""

    def __init__(self, port, host="127.0.0.1", timeout=5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.buffer = b""

    def send(self, obj) -> None:
        self.sock.sendall((json.dumps(obj) + "\n").encode())

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv_frame(self) -> dict:
        while b"\n" not in self.buffer:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("server closed the connection")
            self.buffer += data
        line, self.buffer = self.buffer.split(b"\n", 1)
        return json.loads(line)

    def recv_until(self, tag: str, msg_id=None, limit=500) -> dict:
        for _ in range(limit):
            frame = self.recv_frame()
            if frame.get("t") == tag and (msg_id is None or frame.get("id") == msg_id):
                return frame
        raise AssertionError(f"no '{tag}' frame within {limit} frames")

    def close(self):
        self.sock.close()


@pytest.fixture
def server(tmp_path):
    srv = GatewayServer(quiet_rig_config(tmp_path), port=0).start()
    yield srv
    srv.stop()


# ---------------------------------------------------------------------------
# startup_sequence
# ---------------------------------------------------------------------------

class TestStartup:
    def test_stages_in_order(self, tmp_path):
        rig = startup_sequence(quiet_rig_config(tmp_path))
        assert rig.stages_done == ["power", "acquisition", "control", "supply"]

    def test_supply_enabled_last(self, tmp_path):
        rig = Rig(quiet_rig_config(tmp_path))
        assert not rig.supply_on
        assert rig.state.supply_abs == pytest.approx(101.325)
        rig.enable_supply()
        assert rig.state.supply_abs == pytest.approx(801.325)

    def test_run_before_supply_stays_flat(self, tmp_path):
        rig = Rig(quiet_rig_config(tmp_path))
        rig.load_program("AT 0.0 REG 4 SET 30")
        rig.start_program()
        rig.step(1000)
        assert max(rig.state.gauge(ch) for ch in range(1, 6)) < 1.0

    def test_pressurizes_after_supply(self, tmp_path):
        rig = Rig(quiet_rig_config(tmp_path))
        rig.load_program("AT 0.0 REG 4 SET 30")
        rig.start_program()
        rig.step(1000)
        rig.enable_supply()
        rig.step(1000)
        assert rig.state.gauge(4) > 20.0

    def test_bad_csv_path_aborts_at_acquisition(self, tmp_path):
        cfg = RigConfig(
            plant=PlantConfig(),
            acquisition=AcquisitionConfig(csv_path=str(tmp_path / "missing" / "x.csv")),
        )
        with pytest.raises(StartupError) as excinfo:
            startup_sequence(cfg)
        assert excinfo.value.stage == "acquisition"

    def test_bad_rate_aborts_at_acquisition(self, tmp_path):
        cfg = RigConfig(
            plant=PlantConfig(),
            acquisition=AcquisitionConfig(csv_path=str(tmp_path / "x.csv"), sample_rate=300),
        )
        with pytest.raises(StartupError) as excinfo:
            startup_sequence(cfg)
        assert excinfo.value.stage == "acquisition"


# ---------------------------------------------------------------------------
# run_headless
# ---------------------------------------------------------------------------

class TestRunHeadless:
    def test_short_preset_run(self, tmp_path):
        out = tmp_path / "out.csv"
        code = run_headless("preset:fig7_validation", duration=2.0,
                            out_csv=str(out), seed=42, rate=1000)
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 2001
        assert lines[0] == "time_s,P1_kPa,P2_kPa,P3_kPa,P4_kPa,P5_kPa"

    def test_rate_divisor_rows(self, tmp_path):
        out = tmp_path / "out.csv"
        code = run_headless("preset:fig7_validation", duration=3.0,
                            out_csv=str(out), seed=1, rate=250)
        assert code == 0
        assert len(out.read_text().splitlines()) == 751

    def test_program_file(self, tmp_path):
        seq = tmp_path / "p.seq"
        seq.write_text("AT 0.0 REG 1 SET 20\nAT 1.0 VALVE 1 OPEN\n")
        code = run_headless(str(seq), duration=1.5, out_csv=str(tmp_path / "o.csv"))
        assert code == 0

    def test_malformed_program_exit_2(self, tmp_path, capsys):
        seq = tmp_path / "bad.seq"
        seq.write_text("AT x REG 1 SET 20\n")
        code = run_headless(str(seq), duration=1.0, out_csv=str(tmp_path / "o.csv"))
        assert code == EXIT_PROGRAM_ERROR
        assert "expected time" in capsys.readouterr().err

    def test_invalid_channel_exit_2(self, tmp_path, capsys):
        seq = tmp_path / "bad.seq"
        seq.write_text("AT 0.0 REG 9 SET 20\n")
        code = run_headless(str(seq), duration=1.0, out_csv=str(tmp_path / "o.csv"))
        assert code == EXIT_PROGRAM_ERROR
        assert "unknown channel 9" in capsys.readouterr().err

    def test_missing_program_file_exit_3(self, tmp_path):
        code = run_headless(str(tmp_path / "nope.seq"), duration=1.0,
                            out_csv=str(tmp_path / "o.csv"))
        assert code == EXIT_PROGRAM_ERROR or code == EXIT_IO_ERROR

    def test_unwritable_out_exit_3(self, tmp_path):
        code = run_headless("preset:fig7_validation", duration=1.0,
                            out_csv=str(tmp_path / "no_dir" / "o.csv"))
        assert code == EXIT_IO_ERROR

    def test_unknown_preset_exit_2(self, tmp_path):
        code = run_headless("preset:bogus", duration=1.0,
                            out_csv=str(tmp_path / "o.csv"))
        assert code == EXIT_PROGRAM_ERROR

    def test_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run_headless("preset:fig7_validation", duration=2.0,
                                out_csv=str(out), seed=42, rate=1000) == 0
        assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# handle_message (library level)
# ---------------------------------------------------------------------------

class TestHandleMessage:
    def make_rig(self, tmp_path) -> Rig:
        return startup_sequence(quiet_rig_config(tmp_path))

    def test_fresh_status(self, tmp_path):
        rig = self.make_rig(tmp_path)
        frame, changed = rig.handle_message({"t": "status_req", "id": 1})
        assert frame["t"] == "state" and frame["id"] == 1
        assert frame["setpoints"] == [0.0] * 5
        assert frame["valves"] == [False] * 5
        assert frame["supply_on"] is True
        assert not frame["daq_active"] and not frame["program_running"]
        assert not changed

    def test_set_reg_ack_and_state(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, changed = rig.handle_message({"t": "set_reg", "id": 7, "ch": 4, "kpa": 30.0})
        assert reply == {"t": "ack", "id": 7}
        assert changed
        assert rig.status()["setpoints"][3] == 30.0

    def test_set_reg_clamp_warning(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message({"t": "set_reg", "id": 2, "ch": 1, "kpa": -5.0})
        assert reply["t"] == "ack"
        assert "clamped" in reply["warnings"][0]

    def test_set_reg_bad_channel(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message({"t": "set_reg", "id": 3, "ch": 9, "kpa": 10.0})
        assert reply["t"] == "err" and "channel 9" in reply["msg"]

    def test_unknown_type(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message({"t": "frobnicate", "id": 4})
        assert reply == {"t": "err", "id": 4, "msg": "unknown type"}

    def test_load_program_diagnostics_in_ack(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, changed = rig.handle_message(
            {"t": "load_program", "id": 5, "text": "AT 0.0 REG 9 SET 10"}
        )
        assert reply["t"] == "ack"
        assert any("unknown channel 9" in d["message"] for d in reply["diagnostics"])
        assert not changed
        assert rig.program is None

    def test_run_without_program(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message({"t": "run", "id": 6})
        assert reply["t"] == "err" and "no program loaded" in reply["msg"]

    def test_configure_roundtrip(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message({
            "t": "configure", "id": 8,
            "csv_path": str(tmp_path / "new.csv"),
            "sample_rate": 500,
            "terminal_config": "rse",
            "channel_ids": [f"dev/ai{i}" for i in range(5)],
        })
        assert reply["t"] == "ack"
        assert rig.acquisition.sample_rate == 500

    def test_configure_invalid_rate(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message({"t": "configure", "id": 9, "sample_rate": 300})
        assert reply["t"] == "err" and "divide" in reply["msg"]

    def test_daq_start_stop_summary(self, tmp_path):
        rig = self.make_rig(tmp_path)
        assert rig.handle_message({"t": "daq_start", "id": 10})[0]["t"] == "ack"
        rig.step(500)
        reply, _ = rig.handle_message({"t": "daq_stop", "id": 11})
        assert reply["summary"]["rows_written"] == 500
        # Idempotent at the protocol level too: same summary again.
        again, _ = rig.handle_message({"t": "daq_stop", "id": 12})
        assert again["summary"] == reply["summary"]

    def test_non_dict_frame(self, tmp_path):
        rig = self.make_rig(tmp_path)
        reply, _ = rig.handle_message([1, 2, 3])
        assert reply["t"] == "err"


# ---------------------------------------------------------------------------
# TCP service
# ---------------------------------------------------------------------------

class TestServer:
    def test_hello_then_state(self, server):
        c = LineClient(server.port)
        c.send({"t": "hello", "id": 1})
        assert c.recv_frame() == {"t": "ack", "id": 1}
        state = c.recv_until("state")
        assert state["setpoints"] == [0.0] * 5
        c.close()

    def test_set_reg_flow(self, server):
        c = LineClient(server.port)
        c.send({"t": "set_reg", "id": 7, "ch": 4, "kpa": 30.0})
        assert c.recv_frame() == {"t": "ack", "id": 7}
        state = c.recv_until("state")
        assert state["setpoints"][3] == 30.0
        c.close()

    def test_malformed_line_keeps_connection(self, server):
        c = LineClient(server.port)
        c.send_raw(b"this is not json\n")
        frame = c.recv_frame()
        assert frame["t"] == "err"
        c.send({"t": "status_req", "id": 2})
        assert c.recv_until("state", msg_id=2)["t"] == "state"
        c.close()

    def test_unknown_tag_over_wire(self, server):
        c = LineClient(server.port)
        c.send({"t": "warp_drive", "id": 3})
        frame = c.recv_frame()
        assert frame == {"t": "err", "id": 3, "msg": "unknown type"}
        c.close()

    def test_program_run_with_telemetry(self, server):
        c = LineClient(server.port)
        c.send({"t": "load_program", "id": 1,
                "text": "AT 0.0 REG 4 SET 30\nAT 2.0 END"})
        assert c.recv_frame()["t"] == "ack"
        c.send({"t": "daq_start", "id": 2})
        c.send({"t": "run", "id": 3})
        c.recv_until("ack", msg_id=3)
        telemetry = c.recv_until("telemetry")
        assert telemetry["dt"] == pytest.approx(0.001)
        assert len(telemetry["rows"][0]) == 5
        c.send({"t": "daq_stop", "id": 4})
        reply = c.recv_until("ack", msg_id=4)
        assert reply["summary"]["rows_written"] == 2000
        c.close()

    def test_daq_stop_flushes_partial_batch_before_ack(self, server):
        # 1.23 s at 1 kHz = 24 full 50-row batches plus 30 rows left pending;
        # the stop must deliver those 30 rows, then the ack.
        c = LineClient(server.port)
        c.send({"t": "load_program", "id": 1, "text": "AT 0.0 REG 4 SET 30\nAT 1.23 END"})
        c.recv_until("ack", msg_id=1)
        c.send({"t": "daq_start", "id": 2})
        c.send({"t": "run", "id": 3})
        c.recv_until("ack", msg_id=3)
        batch_sizes = []
        for _ in range(500):
            frame = c.recv_frame()
            if frame["t"] == "telemetry":
                batch_sizes.append(len(frame["rows"]))
            elif frame["t"] == "state" and not frame["program_running"]:
                break
        c.send({"t": "daq_stop", "id": 4})
        while True:
            frame = c.recv_frame()
            if frame["t"] == "telemetry":
                batch_sizes.append(len(frame["rows"]))
            elif frame.get("id") == 4:
                assert frame["t"] == "ack"
                assert frame["summary"]["rows_written"] == 1230
                break
        assert sum(batch_sizes) == 1230
        assert batch_sizes[-1] == 30  # the partial arrived, and before the ack
        c.close()

    def test_stop_halts_program(self, server):
        c = LineClient(server.port)
        c.send({"t": "load_program", "id": 1,
                "text": "LOOP 100000 PERIOD 1.0 { AT 0.0 VALVE 1 OPEN }"})
        c.recv_until("ack", msg_id=1)
        c.send({"t": "run", "id": 2})
        c.recv_until("ack", msg_id=2)
        c.send({"t": "stop", "id": 3})
        c.recv_until("ack", msg_id=3)
        c.send({"t": "status_req", "id": 4})
        assert c.recv_until("state", msg_id=4)["program_running"] is False
        c.close()

    def test_port_busy(self, tmp_path, server):
        with pytest.raises(OSError):
            serve(server.port, quiet_rig_config(tmp_path))

    def test_multiple_clients_last_writer_wins(self, server):
        a = LineClient(server.port)
        b = LineClient(server.port)
        a.send({"t": "set_reg", "id": 1, "ch": 1, "kpa": 10.0})
        a.recv_until("ack", msg_id=1)
        b.send({"t": "set_reg", "id": 2, "ch": 1, "kpa": 20.0})
        b.recv_until("ack", msg_id=2)
        a.send({"t": "status_req", "id": 3})
        assert a.recv_until("state", msg_id=3)["setpoints"][0] == 20.0
        a.close()
        b.close()


class TestRealtimePacing:
    def test_sim_time_tracks_wall_time(self, tmp_path):
        srv = GatewayServer(quiet_rig_config(tmp_path, clock="realtime"), port=0).start()
        try:
            c = LineClient(srv.port)
            c.send({"t": "status_req", "id": 1})
            t0 = c.recv_until("state", msg_id=1)["sim_time"]
            w0 = time.monotonic()
            time.sleep(1.0)
            c.send({"t": "status_req", "id": 2})
            t1 = c.recv_until("state", msg_id=2)["sim_time"]
            w1 = time.monotonic()
            sim_elapsed = t1 - t0
            wall_elapsed = w1 - w0
            assert sim_elapsed == pytest.approx(wall_elapsed, rel=0.15)
            c.close()
        finally:
            srv.stop()
