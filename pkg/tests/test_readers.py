import json

import pytest

from tracescope.errors import DuplicateProcess, MalformedHeader, MalformedJson, MalformedRow, UnbalancedBE
from tracescope.model import EventKind
from tracescope.readers import (format_attributes, parse_attributes, read_chrome, read_csv, read_parallel,
                                read_trace, to_csv_text, write_csv)

from synth import build, message_trace, random_nested_trace

MINIMAL = "timestamp,event_type,name,process\n0,Enter,main,0\n10,Enter,foo,0\n20,Leave,foo,0\n30,Leave,main,0\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_csv(tmp_path):
    tr = read_csv(write(tmp_path, "t.csv", MINIMAL))
    assert len(tr) == 4
    assert set(tr.events.names) == {"main", "foo"}
    assert tr.num_processes() == 1
    assert tr.metadata["source_format"] == "csv"


def test_attribute_parsing(tmp_path):
    text = "timestamp,event_type,name,process,thread,attributes\n15,Instant,MpiSend,0,0,partner=1;size=100;tag=7\n"
    tr = read_csv(write(tmp_path, "t.csv", text))
    assert tr.events.kind[0] == EventKind.Instant
    assert tr.events.attrs[0] == {"partner": 1, "size": 100, "tag": 7}


def test_bad_header(tmp_path):
    with pytest.raises(MalformedHeader):
        read_csv(write(tmp_path, "t.csv", "time,type\n1,Enter\n"))


def test_bad_row_strict_and_lenient(tmp_path):
    p = write(tmp_path, "t.csv", MINIMAL + "x,Enter,main,0\n")
    with pytest.raises(MalformedRow) as info:
        read_csv(p, strict=True)
    assert info.value.line == 6
    tr = read_csv(p)
    assert len(tr) == 4 and tr.metadata["skipped_rows"] == "1"


def test_write_minimal_and_empty(tmp_path):
    tr = read_csv(write(tmp_path, "t.csv", MINIMAL))
    out = tmp_path / "o.csv"
    write_csv(tr, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "timestamp,event_type,name,process,thread,attributes" and len(lines) == 5
    empty = tr.filter(__import__("tracescope").Atom("name", "==", "nothing"))
    write_csv(empty, out)
    assert out.read_text() == "timestamp,event_type,name,process,thread,attributes\n"


def test_attrs_sorted_keys():
    tr = build([(1, "Instant", "x", 0, 0, {"z": 1, "a": "b", "m": 2.5})])
    assert to_csv_text(tr).splitlines()[1].endswith(",a=b;m=2.5;z=1")


@pytest.mark.parametrize("attrs", [
    {"s": "a;b=c\\d"}, {"n": "12"}, {"f": "1e3"}, {"neg": -4, "x": 0.1}, {"e": ""}, {"u": "héllo, \"q\""},
])
def test_attribute_round_trip(attrs):
    assert parse_attributes(format_attributes(attrs)) == attrs


def test_csv_round_trip_random(tmp_path):
    for seed in range(20):
        tr = random_nested_trace(seed, counters=seed % 2 == 0)
        p = tmp_path / f"r{seed}.csv"
        write_csv(tr, p)
        assert read_csv(p).events.equals(tr.events)


def test_chrome_x_expansion(tmp_path):
    p = write(tmp_path, "t.json", json.dumps([{"ph": "X", "name": "k", "pid": 0, "tid": 1, "ts": 2, "dur": 3}]))
    ev = read_chrome(p).events
    assert ev.timestamp.tolist() == [2000, 5000]
    assert ev.kind.tolist() == [EventKind.Enter, EventKind.Leave]
    assert ev.process.tolist() == [0, 0] and ev.thread.tolist() == [1, 1]


def test_chrome_container_equivalence(tmp_path):
    evs = [{"ph": "B", "name": "a", "pid": 0, "tid": 0, "ts": 1}, {"ph": "E", "name": "a", "pid": 0, "tid": 0, "ts": 4}]
    a = read_chrome(write(tmp_path, "a.json", json.dumps(evs)))
    b = read_chrome(write(tmp_path, "b.json", json.dumps({"traceEvents": evs})))
    assert a.events.equals(b.events)


def test_chrome_skips_counter(tmp_path):
    evs = [{"ph": "B", "name": "a", "pid": 0, "tid": 0, "ts": 1}, {"ph": "C", "name": "c", "pid": 0, "ts": 2},
           {"ph": "E", "name": "a", "pid": 0, "tid": 0, "ts": 4}]
    tr = read_chrome(write(tmp_path, "a.json", json.dumps(evs)))
    assert len(tr) == 2 and tr.metadata["skipped_events"] == "1"


def test_chrome_flows_become_messages(tmp_path):
    evs = [{"ph": "s", "name": "m", "pid": 0, "tid": 0, "ts": 1, "id": 7, "args": {"size": 64}},
           {"ph": "f", "name": "m", "pid": 1, "tid": 0, "ts": 3, "id": 7}]
    ev = read_chrome(write(tmp_path, "f.json", json.dumps(evs))).events
    assert [ev.name_of(i) for i in range(2)] == ["MpiSend", "MpiRecv"]
    assert ev.attrs[0] == {"partner": 1, "size": 64, "tag": 7}
    assert ev.attrs[1]["partner"] == 0


def test_chrome_fractional_microseconds(tmp_path):
    evs = [{"ph": "i", "name": "x", "pid": 0, "tid": 0, "ts": 1.0005}]
    assert read_chrome(write(tmp_path, "x.json", json.dumps(evs))).events.timestamp.tolist() == [1001]


def test_chrome_malformed(tmp_path):
    with pytest.raises(MalformedJson):
        read_chrome(write(tmp_path, "bad.json", "{not json"))


def test_chrome_unbalanced_strict(tmp_path):
    evs = [{"ph": "E", "name": "a", "pid": 0, "tid": 0, "ts": 4}]
    p = write(tmp_path, "u.json", json.dumps(evs))
    with pytest.raises(UnbalancedBE):
        read_chrome(p, strict=True)


def test_metadata_names(tmp_path):
    evs = [{"ph": "M", "name": "process_name", "pid": 3, "args": {"name": "rank3"}},
           {"ph": "i", "name": "x", "pid": 3, "tid": 0, "ts": 0}]
    tr = read_chrome(write(tmp_path, "m.json", json.dumps(evs)))
    assert tr.metadata["process_name.3"] == "rank3"


def test_format_equivalence(tmp_path):
    """The same logical trace in CSV and Chrome form reads identically."""
    csv_path = write(tmp_path, "t.csv", MINIMAL)
    evs = [{"ph": "B", "name": "main", "pid": 0, "tid": 0, "ts": 0},
           {"ph": "X", "name": "foo", "pid": 0, "tid": 0, "ts": 0.01, "dur": 0.01},
           {"ph": "E", "name": "main", "pid": 0, "tid": 0, "ts": 0.03}]
    js = write(tmp_path, "t.json", json.dumps(evs))
    assert read_trace(csv_path).events.equals(read_trace(js).events)


def _split_by_rank(tmp_path, tr):
    ev = tr.events
    paths = []
    for p in ev.processes().tolist():
        sub = build([(int(ev.timestamp[i]), int(ev.kind[i]), ev.name_of(i), int(ev.process[i]),
                      int(ev.thread[i]), ev.attrs[i]) for i in range(len(ev)) if ev.process[i] == p])
        path = tmp_path / f"rank{p}.csv"
        write_csv(sub, path)
        paths.append(path)
    return paths


def test_read_parallel_matches_sequential(tmp_path):
    tr, _ = message_trace(3, max_procs=4)
    paths = _split_by_rank(tmp_path, tr)
    one = read_parallel(paths, workers=1)
    two = read_parallel(paths, workers=2)
    assert to_csv_text(one) == to_csv_text(two) == to_csv_text(tr)
    assert to_csv_text(read_parallel(list(reversed(paths)), workers=2)) == to_csv_text(tr)


def test_read_parallel_single_file(tmp_path):
    p = write(tmp_path, "t.csv", MINIMAL)
    assert read_parallel([p], workers=4).events.equals(read_csv(p).events)


def test_read_parallel_duplicate_rank(tmp_path):
    a = write(tmp_path, "a.csv", MINIMAL)
    b = write(tmp_path, "b.csv", MINIMAL)
    with pytest.raises(DuplicateProcess):
        read_parallel([a, b], workers=1)


def test_read_parallel_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("TRACE_WORKERS", "1")
    p = write(tmp_path, "t.csv", MINIMAL)
    assert len(read_parallel([p])) == 4
