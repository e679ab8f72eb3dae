"""Event-loop ordering, cancellation, and horizons."""

from __future__ import annotations

import pytest

from qnetsim.engine import Engine


def test_events_run_in_time_then_insertion_order():
    engine = Engine()
    seen = []
    engine.schedule(2.0, lambda: seen.append("late"))
    engine.schedule(1.0, lambda: seen.append("early-a"))
    engine.schedule(1.0, lambda: seen.append("early-b"))
    engine.run()
    assert seen == ["early-a", "early-b", "late"]
    assert engine.now == 2.0


def test_no_event_runs_before_its_scheduler():
    engine = Engine()
    order = []

    def parent():
        order.append(("parent", engine.now))
        engine.schedule(0.0, lambda: order.append(("child", engine.now)))

    engine.schedule(1.0, parent)
    engine.run()
    assert order == [("parent", 1.0), ("child", 1.0)]


def test_negative_delay_rejected():
    engine = Engine()
    with pytest.raises(ValueError):
        engine.schedule(-0.1, lambda: None)


def test_cancelled_events_do_not_fire():
    engine = Engine()
    seen = []
    event = engine.schedule(1.0, lambda: seen.append("cancelled"))
    engine.schedule(2.0, lambda: seen.append("kept"))
    event.cancel()
    engine.run()
    assert seen == ["kept"]


def test_horizon_leaves_later_events_queued():
    engine = Engine()
    seen = []
    engine.schedule(1.0, lambda: seen.append(1))
    engine.schedule(5.0, lambda: seen.append(5))
    engine.run(until=2.0)
    assert seen == [1]
    assert engine.now == 2.0
    assert engine.pending() == 1
    engine.run()
    assert seen == [1, 5]
