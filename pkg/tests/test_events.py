import datetime as dt
import io

import pytest
from hypothesis import given, strategies as st

from revisit_lab.events import (
    ALL_TASKS, BASE_TASKS, EVENT_LOG_HEADER, Action, EventLogError, EventRecord, Surface, TaskId,
    Topic, day_index, parse_event_log, write_event_log,
)

from helpers import random_log

ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-_:", min_size=1, max_size=12)


@st.composite
def records(draw):
    surface = draw(st.sampled_from(list(Surface)))
    related = surface is Surface.RELATED_PINS
    return EventRecord(
        timestamp=draw(st.integers(0, 2**40)),
        user_id=draw(ids),
        pin_id=draw(ids),
        surface=surface,
        action=draw(st.sampled_from(list(Action))),
        request_id=draw(ids) if related else draw(st.one_of(st.just(""), ids)),
        topic=draw(st.sampled_from(list(Topic))),
        slot=draw(st.one_of(st.none(), st.integers(0, 500))) if related else None,
    )


class TestCodec:
    def test_single_line(self):
        data = (EVENT_LOG_HEADER + "\n100,u1,p1,related_pins,repin,r1,travel,3\n").encode()
        (rec,) = parse_event_log(data)
        assert rec == EventRecord(100, "u1", "p1", Surface.RELATED_PINS, Action.REPIN, "r1", Topic.TRAVEL, 3)

    def test_header_only_is_empty(self):
        assert parse_event_log((EVENT_LOG_HEADER + "\n").encode()) == []

    def test_missing_header(self):
        with pytest.raises(EventLogError):
            parse_event_log(b"")

    def test_bad_header(self):
        with pytest.raises(EventLogError):
            parse_event_log(b"ts,user\n")

    @pytest.mark.parametrize("token", ["HomeFeed", "home_feed", "RelatedPins", "", "related_pins "])
    def test_unknown_surface_is_named(self, token):
        data = f"{EVENT_LOG_HEADER}\n1,u,p,{token},impression,r,unknown,\n".encode()
        with pytest.raises(EventLogError) as err:
            parse_event_log(data)
        assert repr(token) in str(err.value)
        assert err.value.field == "surface"
        assert err.value.line == 2

    def test_every_valid_surface_token_accepted(self):
        for s in Surface:
            req = "r" if s is Surface.RELATED_PINS else ""
            line = f"1,u,p,{s.value},impression,{req},unknown,"
            assert parse_event_log(f"{EVENT_LOG_HEADER}\n{line}\n")[0].surface is s

    def test_unknown_action_and_topic(self):
        with pytest.raises(EventLogError, match="save"):
            parse_event_log(f"{EVENT_LOG_HEADER}\n1,u,p,other,save,,unknown,\n")
        with pytest.raises(EventLogError, match="Travel"):
            parse_event_log(f"{EVENT_LOG_HEADER}\n1,u,p,other,repin,,Travel,\n")

    def test_malformed_line_reports_line_number(self):
        data = f"{EVENT_LOG_HEADER}\n1,u,p,other,repin,,unknown,\n2,u,p,other\n"
        with pytest.raises(EventLogError) as err:
            parse_event_log(data)
        assert err.value.line == 3

    def test_bad_integer(self):
        with pytest.raises(EventLogError) as err:
            parse_event_log(f"{EVENT_LOG_HEADER}\nabc,u,p,other,repin,,unknown,\n")
        assert err.value.field == "ts"

    @pytest.mark.parametrize("line, field", [
        ("-1,u,p,other,repin,,unknown,", "ts"),
        ("1,,p,other,repin,,unknown,", "user_id"),
        ("1,u,,other,repin,,unknown,", "pin_id"),
        ("1,u,p,related_pins,repin,,unknown,", "request_id"),
        ("1,u,p,own_profile,impression,,unknown,4", "slot"),
    ])
    def test_invariant_violations(self, line, field):
        with pytest.raises(EventLogError) as err:
            parse_event_log(f"{EVENT_LOG_HEADER}\n{line}\n")
        assert err.value.field == field

    def test_own_profile_empty_request_id_round_trips(self):
        rec = EventRecord(5, "u", "p", Surface.OWN_PROFILE, Action.GRID_CLICK)
        data = write_event_log([rec])
        assert data.decode().splitlines()[1] == "5,u,p,own_profile,grid_click,,unknown,"
        assert parse_event_log(data) == [rec]

    def test_stream_and_text_inputs(self):
        recs = random_log(0, n_events=50)
        data = write_event_log(recs)
        assert parse_event_log(io.BytesIO(data)) == recs
        assert parse_event_log(io.StringIO(data.decode())) == recs
        sink = io.BytesIO()
        write_event_log(recs, sink)
        assert sink.getvalue() == data

    @given(st.lists(records(), max_size=40))
    def test_round_trip_property(self, recs):
        assert parse_event_log(write_event_log(recs)) == recs

    def test_large_random_round_trip(self):
        recs = random_log(1, n_events=100_000, n_users=500, n_pins=2000)
        assert parse_event_log(write_event_log(recs)) == recs


class TestDayIndex:
    def test_boundaries(self):
        assert day_index(0) == 0
        assert day_index(86399) == 0
        assert day_index(86400) == 1

    @given(st.integers(0, 4_000_000_000))
    def test_matches_calendar(self, t):
        epoch = dt.date(1970, 1, 1)
        date = dt.datetime.fromtimestamp(t, tz=dt.timezone.utc).date()
        assert day_index(t) == (date - epoch).days

    @given(st.integers(0, 2**40), st.integers(0, 2**40))
    def test_monotone_and_shift(self, a, b):
        lo, hi = sorted((a, b))
        assert day_index(lo) <= day_index(hi)
        assert day_index(a + 86400) == day_index(a) + 1


class TestEnums:
    def test_task_universe(self):
        assert len(TaskId) == 5
        assert TaskId.REPIN_AND_REVISIT not in BASE_TASKS
        assert ALL_TASKS[-1] is TaskId.REPIN_AND_REVISIT

    def test_topics(self):
        assert len(Topic) == 17
        assert Topic("event_planning") is Topic.EVENT_PLANNING
        assert Topic("diy_and_crafts") is Topic.DIY_AND_CRAFTS
