import pytest

from analyse.kernel import (
    Kernel,
    KernelError,
    KernelStepError,
    ModelSpec,
    SimulatorDescriptor,
)


def counter_sim(sim_id, step, log=None):
    desc = SimulatorDescriptor(
        sim_id, step, (ModelSpec("m", inputs={"x": 0.0}, outputs=("y",)),)
    )

    def stepper(t, inputs):
        if log is not None:
            log.append((sim_id, t, inputs["m"]["x"]))
        return {"m": {"y": float(t)}}

    return desc, stepper


def test_register_duplicate_id_rejected():
    k = Kernel()
    desc, stepper = counter_sim("grid", 900)
    k.register_simulator(desc, stepper)
    with pytest.raises(KernelError, match="duplicate"):
        k.register_simulator(*counter_sim("grid", 900))


def test_register_initial_schedule_and_models():
    k = Kernel()
    desc = SimulatorDescriptor(
        "net", 1,
        tuple(ModelSpec(f"m{i}", inputs={"a": None}, outputs=("b",)) for i in range(3)),
    )
    handle = k.register_simulator(desc, lambda t, i: None)
    assert handle.sim_id == "net"
    assert k._next_due["net"] == 0
    assert all(k.has_output(("net", f"m{i}", "b")) for i in range(3))
    assert all(k.has_input(("net", f"m{i}", "a")) for i in range(3))


def test_register_after_start_rejected():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    k.run_until(2)
    with pytest.raises(KernelError, match="after the run has started"):
        k.register_simulator(*counter_sim("b", 1))


def test_step_size_must_be_positive():
    k = Kernel()
    with pytest.raises(KernelError, match="step_size"):
        k.register_simulator(*counter_sim("a", 0))


def test_connect_validates_endpoints():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    k.register_simulator(*counter_sim("b", 1))
    k.connect(("a", "m", "y"), ("b", "m", "x"))
    with pytest.raises(KernelError, match="unknown source"):
        k.connect(("a", "m", "nope"), ("b", "m", "x"))
    with pytest.raises(KernelError, match="already connected"):
        k.connect(("a", "m", "y"), ("b", "m", "x"))


def test_non_shifted_cycle_rejected():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    k.register_simulator(*counter_sim("b", 1))
    k.connect(("a", "m", "y"), ("b", "m", "x"), time_shifted=False)
    with pytest.raises(KernelError, match="cycle"):
        k.connect(("b", "m", "y"), ("a", "m", "x"), time_shifted=False)


def test_cycle_broken_by_time_shift():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    k.register_simulator(*counter_sim("b", 1))
    k.connect(("a", "m", "y"), ("b", "m", "x"), time_shifted=False)
    k.connect(("b", "m", "y"), ("a", "m", "x"), time_shifted=True, default=0.0)
    k.run_until(3)  # must not raise


def test_step_counts_for_mixed_step_sizes():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    k.register_simulator(*counter_sim("b", 4))
    counts = k.run_until(8)
    assert counts == {"a": 8, "b": 2}


def test_single_simulator_step_times():
    log = []
    k = Kernel()
    k.register_simulator(*counter_sim("g", 900, log))
    counts = k.run_until(3600)
    assert counts == {"g": 4}
    assert [t for _, t, _ in log] == [0, 900, 1800, 2700]


def test_time_shift_reads_previous_step_with_default():
    seen = []
    k = Kernel()
    k.register_simulator(*counter_sim("prod", 1))
    desc = SimulatorDescriptor("cons", 1, (ModelSpec("m", inputs={"x": -1.0}),))

    def consumer(t, inputs):
        seen.append((t, inputs["m"]["x"]))

    k.register_simulator(desc, consumer)
    k.connect(("prod", "m", "y"), ("cons", "m", "x"), time_shifted=True, default=0.0)
    k.run_until(3)
    # at t=0 the declared connection default, afterwards the previous output
    assert seen == [(0, 0.0), (1, 0.0), (2, 1.0)]


def test_non_shifted_same_time_value():
    seen = []
    k = Kernel()
    k.register_simulator(*counter_sim("prod", 1))
    desc = SimulatorDescriptor("cons", 1, (ModelSpec("m", inputs={"x": -1.0}),))
    k.register_simulator(desc, lambda t, i: seen.append((t, i["m"]["x"])))
    k.connect(("prod", "m", "y"), ("cons", "m", "x"))
    k.run_until(3)
    assert seen == [(0, 0.0), (1, 1.0), (2, 2.0)]


def test_unconnected_input_reads_declared_default_and_override():
    seen = []
    k = Kernel()
    desc = SimulatorDescriptor("s", 1, (ModelSpec("m", inputs={"x": 7.5}),))
    k.register_simulator(desc, lambda t, i: seen.append(i["m"]["x"]))
    k.run_until(1)
    k.set_input(("s", "m", "x"), 9.0)
    k.run_until(2)
    assert seen == [7.5, 9.0]


def test_set_input_rejected_for_connected_endpoint():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    k.register_simulator(*counter_sim("b", 1))
    k.connect(("a", "m", "y"), ("b", "m", "x"))
    with pytest.raises(KernelError, match="connected"):
        k.set_input(("b", "m", "x"), 1.0)


def test_topological_order_within_one_time():
    order = []

    def sim(sim_id):
        desc = SimulatorDescriptor(
            sim_id, 1, (ModelSpec("m", inputs={"x": 0.0}, outputs=("y",)),)
        )
        return desc, lambda t, i: order.append(sim_id) or {"m": {"y": t}}

    k = Kernel()
    # registered out of dependency order on purpose
    k.register_simulator(*sim("c"))
    k.register_simulator(*sim("b"))
    k.register_simulator(*sim("a"))
    k.connect(("a", "m", "y"), ("b", "m", "x"))
    k.connect(("b", "m", "y"), ("c", "m", "x"))
    k.run_until(1)
    assert order == ["a", "b", "c"]


def test_ties_broken_by_registration_order():
    order = []

    def sim(sim_id):
        desc = SimulatorDescriptor(sim_id, 1, (ModelSpec("m", outputs=("y",)),))
        return desc, lambda t, i: order.append(sim_id) or {"m": {"y": t}}

    k = Kernel()
    for sim_id in ("z", "m", "a"):
        k.register_simulator(*sim(sim_id))
    k.run_until(1)
    assert order == ["z", "m", "a"]


def test_replay_determinism_of_step_sequences():
    def run_once():
        log = []
        k = Kernel()
        k.register_simulator(*counter_sim("a", 3, log))
        k.register_simulator(*counter_sim("b", 5, log))
        k.register_simulator(*counter_sim("c", 7, log))
        k.connect(("a", "m", "y"), ("b", "m", "x"))
        k.connect(("b", "m", "y"), ("c", "m", "x"), time_shifted=True, default=0.0)
        k.run_until(100)
        return [(s, t) for s, t, _ in log]

    assert run_once() == run_once()


def test_causality_data_never_from_the_future():
    produced_at = {}
    reads = []

    prod_desc = SimulatorDescriptor("p", 3, (ModelSpec("m", outputs=("y",)),))

    def producer(t, inputs):
        produced_at[t] = t
        return {"m": {"y": t}}

    cons_desc = SimulatorDescriptor("c", 2, (ModelSpec("m", inputs={"x": None}),))
    shift_desc = SimulatorDescriptor("cs", 2, (ModelSpec("m", inputs={"x": None}),))

    k = Kernel()
    k.register_simulator(prod_desc, producer)
    k.register_simulator(cons_desc, lambda t, i: reads.append(("plain", t, i["m"]["x"])))
    k.register_simulator(shift_desc, lambda t, i: reads.append(("shift", t, i["m"]["x"])))
    k.connect(("p", "m", "y"), ("c", "m", "x"))
    k.connect(("p", "m", "y"), ("cs", "m", "x"), time_shifted=True)
    k.run_until(30)
    for kind, t, value in reads:
        if value is None:
            continue
        if kind == "plain":
            assert value <= t
        else:
            assert value < t


def test_stepper_failure_aborts_with_context():
    def bad(t, inputs):
        if t == 4:
            raise RuntimeError("boom")

    k = Kernel()
    k.register_simulator(SimulatorDescriptor("ok", 1, (ModelSpec("m"),)), lambda t, i: None)
    k.register_simulator(SimulatorDescriptor("bad", 2, (ModelSpec("m"),)), bad)
    with pytest.raises(KernelStepError) as info:
        k.run_until(10)
    assert info.value.sim_id == "bad"
    assert info.value.time == 4


def test_undeclared_output_rejected():
    k = Kernel()
    desc = SimulatorDescriptor("s", 1, (ModelSpec("m", outputs=("y",)),))
    k.register_simulator(desc, lambda t, i: {"m": {"z": 1}})
    with pytest.raises(KernelStepError):
        k.run_until(1)


def test_run_until_requires_positive_end():
    k = Kernel()
    k.register_simulator(*counter_sim("a", 1))
    with pytest.raises(KernelError):
        k.run_until(0)


def test_run_until_is_resumable():
    log = []
    k = Kernel()
    k.register_simulator(*counter_sim("a", 2, log))
    first = k.run_until(5)    # t = 0, 2, 4
    second = k.run_until(9)   # t = 6, 8
    assert first == {"a": 3}
    assert second == {"a": 2}
    assert [t for _, t, _ in log] == [0, 2, 4, 6, 8]
