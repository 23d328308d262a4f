import copy
import json
from importlib import resources

import numpy as np
import pytest

from bdimarket.errors import ParseError, ValidationError
from bdimarket.scenario import (
    TraceSpec,
    load_scenario,
    loads_scenario,
    parse_scenario,
    render_trace,
    render_traces,
    trace_generator,
)

from fuzzgen import random_scenario


def bundled(name):
    return json.loads((resources.files("bdimarket") / "scenarios" / f"{name}.json").read_text())


def test_minimal_loads():
    s = parse_scenario(bundled("minimal"))
    assert s.seed == 7 and s.ttl == 10 and s.agent_ids() == ["b1", "s1"]
    assert s.enterprises == {"acme": ["b1"]}
    assert s.buyers[0].triggers == {"cpu": 0.8}


@pytest.mark.parametrize("name", ["minimal", "reference_coordination", "determinism"])
def test_bundled_scenarios_valid(name):
    assert parse_scenario(bundled(name)).name == name


def test_load_from_path(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(bundled("minimal")))
    assert load_scenario(path).name == "minimal"


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "absent.json")


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as exc:
        loads_scenario('{\n  "seed": 1,\n  "ttl": \n}')
    assert exc.value.line == 4


def mutate(fn):
    data = copy.deepcopy(bundled("minimal"))
    fn(data)
    return data


def buyer_of(data):
    return data["enterprises"][0]["agents"][0]


def test_weight_violation_names_agent():
    data = mutate(lambda d: buyer_of(d)["issues"][0].update(weight=1.2))
    with pytest.raises(ValidationError, match="b1"):
        parse_scenario(data)


def test_dangling_target_seller():
    data = mutate(lambda d: buyer_of(d).update(target_seller="ghost"))
    with pytest.raises(ValidationError, match="ghost"):
        parse_scenario(data)


def test_unknown_field_rejected():
    with pytest.raises(ValidationError, match="colour"):
        parse_scenario(mutate(lambda d: buyer_of(d).update(colour="red")))


def test_duplicate_agent_id():
    def dup(d):
        d["enterprises"][0]["agents"].append(copy.deepcopy(buyer_of(d)))
    with pytest.raises(ValidationError, match="duplicate"):
        parse_scenario(mutate(dup))


def test_unknown_product():
    with pytest.raises(ValidationError, match="unknown product"):
        parse_scenario(mutate(lambda d: buyer_of(d).update(product_id="vm.huge")))


def test_missing_trace():
    with pytest.raises(ValidationError, match="trace"):
        parse_scenario(mutate(lambda d: buyer_of(d).update(traces={})))


def test_bad_ttl():
    with pytest.raises(ValidationError):
        parse_scenario(mutate(lambda d: d.update(ttl=0)))


@pytest.mark.parametrize("seed", range(25))
def test_fuzz_generator_produces_valid_scenarios(seed):
    parse_scenario(random_scenario(seed))


class TestTraces:
    def test_constant(self):
        assert render_trace(TraceSpec("constant", value=0.4), 3, trace_generator(1, "a")) == [0.4] * 3

    def test_series_holds_last_value(self):
        out = render_trace(TraceSpec("series", values=(0.1, 0.9)), 3, trace_generator(1, "a"))
        assert out == [0.1, 0.9, 0.9]

    def test_same_seed_same_traces(self):
        s = parse_scenario(bundled("reference_coordination"))
        assert render_traces(s, 5) == render_traces(s, 5)
        assert render_traces(s, 5) != render_traces(s, 6)

    def test_streams_independent_of_other_agents(self):
        a = trace_generator(9, "x").random(4)
        trace_generator(9, "y").random(4)
        assert np.array_equal(a, trace_generator(9, "x").random(4))

    def test_values_in_unit_interval(self):
        s = parse_scenario(bundled("reference_coordination"))
        for series in render_traces(s).values():
            for values in series.values():
                assert all(0.0 <= v <= 1.0 for v in values)
                assert len(values) == s.max_ticks + 1
