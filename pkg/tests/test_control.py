"""Control program tests: grammar, canonical rendering, validation, the
exactly-once scheduler, pin mapping, wave generation, and presets."""

import random

import pytest

from pneurig.control import (
    At,
    Diagnostic,
    End,
    Loop,
    PinMap,
    PinMappingError,
    Program,
    ProgramLimits,
    SetRegulator,
    SetValve,
    gen_wave,
    map_pins,
    parse_program,
    preset,
    program_duration,
    render_program,
    start_execution,
    tick,
    validate_program,
)

from conftest import expand_schedule, random_program


# ---------------------------------------------------------------------------
# parse_program
# ---------------------------------------------------------------------------

class TestParse:
    def test_empty_input(self):
        program, diags = parse_program("")
        assert diags == []
        assert program == Program(())

    def test_comment_only(self):
        program, diags = parse_program("# nothing here\n\n   # more\n")
        assert diags == []
        assert program.items == ()

    def test_single_statement(self):
        program, diags = parse_program("AT 0.0 REG 4 SET 30")
        assert diags == []
        assert program.items == (At(0.0, SetRegulator(4, 30.0)),)

    def test_case_insensitive_keywords(self):
        program, diags = parse_program("at 1.5 valve 2 open\nAt 2.0 Reg 1 Set 10.5")
        assert diags == []
        assert program.items == (
            At(1.5, SetValve(2, True)),
            At(2.0, SetRegulator(1, 10.5)),
        )

    def test_end_statement(self):
        program, diags = parse_program("AT 5.0 END")
        assert diags == []
        assert program.items == (At(5.0, End()),)

    def test_loop_single_line(self):
        program, diags = parse_program("LOOP 2 PERIOD 1.0 { AT 0.5 VALVE 1 OPEN }")
        assert diags == []
        assert program.items == (Loop(2, 1.0, (At(0.5, SetValve(1, True)),)),)

    def test_loop_multi_line(self):
        text = """
        LOOP 3 PERIOD 2.0 {      # wave
            AT 0.0 REG 1 SET 20  # rise
            AT 1.0 REG 1 SET 0.0
        }
        """
        program, diags = parse_program(text)
        assert diags == []
        (loop,) = program.items
        assert loop.count == 3 and loop.period == 2.0
        assert len(loop.body) == 2

    def test_loop_body_time_past_period(self):
        program, diags = parse_program("LOOP 2 PERIOD 1.0 { AT 1.5 VALVE 1 OPEN }")
        assert program is None
        assert len(diags) == 1
        assert diags[0].line == 1
        assert diags[0].col > 0
        assert "period" in diags[0].message

    def test_negative_time(self):
        program, diags = parse_program("AT -1.0 REG 1 SET 10")
        assert program is None
        assert any("negative" in d.message for d in diags)
        assert diags[0].line == 1 and diags[0].col == 4

    def test_negative_setpoint(self):
        program, diags = parse_program("AT 1.0 REG 1 SET -10")
        assert program is None
        assert any("negative" in d.message for d in diags)

    def test_channel_zero(self):
        program, diags = parse_program("AT 0.0 REG 0 SET 10")
        assert program is None
        assert any("channel 0" in d.message for d in diags)

    def test_syntax_error_positioned(self):
        program, diags = parse_program("AT 0.0 WIBBLE 1")
        assert program is None
        assert diags[0].line == 1 and diags[0].col == 8

    def test_multiple_errors_collected(self):
        text = "AT 0.0 REG 0 SET 10\nAT x VALVE 1 OPEN\nAT 1.0 VALVE 9 CLOSE"
        program, diags = parse_program(text)
        assert program is None
        assert len(diags) == 2
        assert {d.line for d in diags} == {1, 2}

    def test_top_level_times_normalized(self):
        program, diags = parse_program("AT 2.0 REG 1 SET 5\nAT 1.0 REG 2 SET 5")
        assert diags == []
        times = [item.time for item in program.items]
        assert times == sorted(times)

    def test_empty_loop_body(self):
        program, diags = parse_program("LOOP 2 PERIOD 1.0 { }")
        assert diags == []
        assert program.items == (Loop(2, 1.0, ()),)
        reparsed, diags = parse_program(render_program(program))
        assert diags == [] and reparsed == program
        ex = start_execution(program, 0.0)
        assert tick(ex, 10.0) == [End()]

    def test_unterminated_loop(self):
        program, diags = parse_program("LOOP 2 PERIOD 1.0 { AT 0.5 VALVE 1 OPEN")
        assert program is None
        assert any("unterminated" in d.message for d in diags)


# ---------------------------------------------------------------------------
# render_program
# ---------------------------------------------------------------------------

class TestRender:
    def test_empty(self):
        assert render_program(Program(())) == ""

    def test_canonical_form(self):
        program, _ = parse_program("at 0 reg 4 set 30")
        text = render_program(program)
        assert text == "AT 0.0 REG 4 SET 30.0\n"

    def test_loop_layout(self):
        program, _ = parse_program("loop 2 period 1 { at 0.5 valve 1 open }")
        assert render_program(program) == (
            "LOOP 2 PERIOD 1.0 {\n  AT 0.5 VALVE 1 OPEN\n}\n"
        )

    def test_round_trip_examples(self):
        for text in [
            "AT 0.0 REG 4 SET 30\nAT 10.0 VALVE 4 OPEN\nAT 20.0 END\n",
            "LOOP 20 PERIOD 20.0 { AT 0.0 REG 5 SET 30 AT 10.0 REG 5 SET 0 }",
        ]:
            program, diags = parse_program(text)
            assert diags == []
            reparsed, diags = parse_program(render_program(program))
            assert diags == []
            assert reparsed == program

    def test_round_trip_generated(self):
        rng = random.Random(2024)
        for _ in range(200):
            program = random_program(rng)
            reparsed, diags = parse_program(render_program(program))
            assert diags == []
            assert reparsed == program

    def test_number_formatting_edges(self):
        # Times small enough that repr() would go scientific still render as
        # plain decimals and survive the round trip.
        program = Program((At(1e-05, SetRegulator(1, 250.5)),))
        text = render_program(program)
        assert text == "AT 0.00001 REG 1 SET 250.5\n"
        reparsed, diags = parse_program(text)
        assert diags == []
        assert reparsed == program


# ---------------------------------------------------------------------------
# validate_program
# ---------------------------------------------------------------------------

class TestValidate:
    def test_presets_validate_clean(self):
        for name in ("fig7_validation", "diarrhea_seal", "peristaltic_cut"):
            assert validate_program(preset(name)) == []

    def test_setpoint_over_max(self):
        program, _ = parse_program("AT 0.0 REG 1 SET 600")
        diags = validate_program(program, ProgramLimits(regulator_max=500.0))
        assert len(diags) == 1
        assert "exceeds regulator_max" in diags[0].message

    def test_unknown_channel(self):
        program, _ = parse_program("AT 0.0 REG 7 SET 10")
        diags = validate_program(program, ProgramLimits(n_channels=5))
        assert len(diags) == 1
        assert "unknown channel 7" in diags[0].message

    def test_duration_limit(self):
        program, _ = parse_program("LOOP 10 PERIOD 100.0 { AT 0.0 VALVE 1 OPEN }")
        diags = validate_program(program, ProgramLimits(max_duration=400.0))
        assert any("max_duration" in d.message for d in diags)


# ---------------------------------------------------------------------------
# tick
# ---------------------------------------------------------------------------

class TestTick:
    def test_not_yet_due(self):
        program, _ = parse_program("AT 0.5 VALVE 1 OPEN")
        ex = start_execution(program, 0.0)
        assert tick(ex, 0.4) == []
        assert ex.running

    def test_exactly_once(self):
        program, _ = parse_program("AT 0.5 VALVE 1 OPEN")
        ex = start_execution(program, 0.0)
        cmds = tick(ex, 0.5)
        assert cmds == [SetValve(1, True), End()]
        assert not ex.running
        assert tick(ex, 1.0) == []

    def test_started_at_offset(self):
        program, _ = parse_program("AT 0.5 VALVE 1 OPEN")
        ex = start_execution(program, 100.0)
        assert tick(ex, 100.4) == []
        assert tick(ex, 100.5) == [SetValve(1, True), End()]

    def test_loop_expansion(self):
        program, _ = parse_program("LOOP 3 PERIOD 2.0 { AT 0.0 REG 1 SET 10 }")
        ex = start_execution(program, 0.0)
        emitted = {}
        t = 0.0
        while ex.running:
            for cmd in tick(ex, t):
                if not isinstance(cmd, End):
                    emitted.setdefault(t, []).append(cmd)
            t = round(t + 0.5, 3)
        assert sorted(emitted) == [0.0, 2.0, 4.0]

    def test_late_ticks_fire_everything(self):
        program, _ = parse_program(
            "AT 0.1 REG 1 SET 5\nAT 0.2 REG 2 SET 6\nLOOP 2 PERIOD 1.0 { AT 0.0 VALVE 3 OPEN }"
        )
        ex = start_execution(program, 0.0)
        cmds = tick(ex, 50.0)
        assert cmds[:-1] == [
            SetValve(3, True),
            SetRegulator(1, 5.0),
            SetRegulator(2, 6.0),
            SetValve(3, True),
        ]
        assert isinstance(cmds[-1], End)

    def test_empty_program_ends_immediately(self):
        ex = start_execution(Program(()), 0.0)
        assert tick(ex, 0.0) == [End()]
        assert not ex.running

    def test_explicit_end_halts(self):
        program, _ = parse_program("AT 1.0 END\nAT 2.0 REG 1 SET 10")
        ex = start_execution(program, 0.0)
        cmds = tick(ex, 10.0)
        assert cmds == [End()]
        assert not ex.running

    def test_random_cadence_property(self):
        rng = random.Random(7)
        for _ in range(200):
            program = random_program(rng)
            expected = expand_schedule(program)
            start = round(rng.uniform(0.0, 50.0), 3)
            ex = start_execution(program, start)
            got = []
            t = start
            while ex.running:
                for cmd in tick(ex, t):
                    if not isinstance(cmd, End):
                        got.append(cmd)
                t += rng.choice([0.0, 0.05, 0.3, 1.7, 9.0])
            assert got == [cmd for _, cmd in expected]


# ---------------------------------------------------------------------------
# map_pins
# ---------------------------------------------------------------------------

class TestMapPins:
    def test_default_map_shape(self):
        pm = PinMap()
        assert pm.regulator_pins == {1: 1, 2: 2, 3: 3, 4: 4, 5: 5}
        assert pm.valve_pins == {6: 1, 7: 2, 8: 3, 9: 4, 10: 5}

    def test_all_low_rest_state(self):
        cmds = map_pins({p: "LOW" for p in range(6, 11)}, PinMap())
        assert cmds == [SetValve(ch, False) for ch in range(1, 6)]

    def test_pin9_high_opens_channel4(self):
        cmds = map_pins({9: "HIGH"}, PinMap())
        assert cmds == [SetValve(4, True)]

    def test_regulator_pin_levels(self):
        cmds = map_pins({1: 30.0, 3: 12.5}, PinMap())
        assert cmds == [SetRegulator(1, 30.0), SetRegulator(3, 12.5)]

    def test_levels_to_kpa_scaling(self):
        cmds = map_pins({2: 128}, PinMap(), levels_to_kpa=lambda lv: lv * 500.0 / 255.0)
        assert cmds == [SetRegulator(2, pytest.approx(250.98, abs=0.01))]

    def test_unmapped_pin(self):
        with pytest.raises(PinMappingError, match="pin 11"):
            map_pins({11: "HIGH"}, PinMap())

    def test_overlapping_maps_rejected(self):
        with pytest.raises(ValueError, match="both"):
            PinMap(regulator_pins={1: 1}, valve_pins={1: 2})

    def test_non_injective_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            PinMap(valve_pins={6: 1, 7: 1})


# ---------------------------------------------------------------------------
# gen_wave
# ---------------------------------------------------------------------------

class TestGenWave:
    def test_single_channel_square(self):
        program = gen_wave([1], period=2.0, high_kpa=30.0, duty=0.5, phase_frac=0.0)
        (loop,) = program.items
        assert loop.count == 1 and loop.period == 2.0
        assert At(0.0, SetRegulator(1, 30.0)) in loop.body
        assert At(1.0, SetRegulator(1, 0.0)) in loop.body
        assert At(0.0, SetValve(1, False)) in loop.body
        assert At(1.0, SetValve(1, True)) in loop.body

    def test_phase_offsets(self):
        program = gen_wave([1, 2, 3], period=3.0, high_kpa=20.0, duty=0.3,
                           phase_frac=1.0 / 3.0)
        (loop,) = program.items
        rises = {at.command.channel: at.time for at in loop.body
                 if isinstance(at.command, SetRegulator) and at.command.kpa > 0}
        assert rises[1] == pytest.approx(0.0)
        assert rises[2] == pytest.approx(1.0)
        assert rises[3] == pytest.approx(2.0)

    def test_body_times_within_period(self):
        program = gen_wave([1, 2, 3, 4, 5], period=4.0, high_kpa=50.0, duty=0.7,
                           phase_frac=0.4, cycles=3)
        (loop,) = program.items
        assert all(0.0 <= at.time < loop.period for at in loop.body)

    @pytest.mark.parametrize("kwargs", [
        {"duty": 0.0},
        {"duty": 1.0},
        {"period": 0.0},
        {"phase_frac": 1.5},
        {"cycles": 0},
    ])
    def test_invalid_parameters(self, kwargs):
        base = {"channels": [1], "period": 2.0, "high_kpa": 30.0,
                "duty": 0.5, "phase_frac": 0.0, "cycles": 1}
        base.update(kwargs)
        with pytest.raises(ValueError):
            gen_wave(**base)

    def test_empty_channels(self):
        with pytest.raises(ValueError, match="channels"):
            gen_wave([], period=2.0, high_kpa=30.0, duty=0.5, phase_frac=0.0)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

class TestPresets:
    def test_fig7_duration(self):
        assert program_duration(preset("fig7_validation")) == pytest.approx(400.0)

    def test_fig7_setpoints(self):
        program = preset("fig7_validation")
        max_by_channel = {ch: 0.0 for ch in range(1, 6)}
        for due, cmd in expand_schedule(program):
            if isinstance(cmd, SetRegulator):
                max_by_channel[cmd.channel] = max(max_by_channel[cmd.channel], cmd.kpa)
        assert max_by_channel[4] == 30.0
        assert max_by_channel[5] == 30.0
        assert max_by_channel[1] == max_by_channel[2] == max_by_channel[3] == 0.0

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="bogus"):
            preset("bogus")

    def test_presets_round_trip(self):
        for name in ("fig7_validation", "diarrhea_seal", "peristaltic_cut"):
            program = preset(name)
            reparsed, diags = parse_program(render_program(program))
            assert diags == []
            assert reparsed == program
