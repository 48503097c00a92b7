import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_array_equal

from incubation.data import (
    CONTINUOUS,
    DISCRETE_DAYS,
    Observation,
    ObservationSet,
    ParseError,
    ValidationError,
    format_observations,
    format_triples,
    load_wuhan,
    parse_observations,
    parse_raw_records,
    parse_triples,
    read_sample,
    reduce,
)


def test_observation_delta_and_interval():
    ob = Observation(10, 5)
    assert ob.delta == 1
    assert ob.interval == (0, 5)
    ob = Observation(3, 7)
    assert ob.delta == 0
    assert ob.interval == (4, 7)


def test_observation_rejects_inconsistent_delta():
    with pytest.raises(ValidationError):
        Observation(3, 7, delta=1)
    with pytest.raises(ValidationError):
        Observation(0, 7)
    with pytest.raises(ValidationError):
        Observation(3, 0)


def test_raw_records_shift_and_clip():
    # arrival 2, departure 12, onset 9 -> E = 10 clipped to S = 7
    sample = parse_raw_records("2 12 9\n0 4 10\n")
    assert_array_equal(sample.exits, [7, 4])
    assert_array_equal(sample.symptoms, [7, 10])
    assert_array_equal(sample.deltas, [1, 0])


def test_raw_records_unknown_arrival_is_plain_number():
    sample = parse_raw_records("-18 5 10\n")
    assert_array_equal(sample.exits, [23])
    assert_array_equal(sample.symptoms, [28])


def test_raw_records_departure_before_arrival():
    with pytest.raises(ValidationError):
        parse_raw_records("5 4 10\n")


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as err:
        parse_observations("0 5\n1 x\n")
    assert err.value.line == 2
    with pytest.raises(ParseError):
        parse_observations("0 5 3\n")
    with pytest.raises(ParseError):
        parse_observations("# only a comment\n")


def test_parse_observations_validates_interval():
    with pytest.raises(ValidationError):
        parse_observations("5 5\n")


def test_scale_inference():
    assert parse_observations("0 5\n2 7\n").scale == DISCRETE_DAYS
    assert parse_observations("0 5.5\n").scale == CONTINUOUS
    with pytest.raises(ValidationError):
        ObservationSet([1.5], [2.0], DISCRETE_DAYS)


def test_wuhan_fixture():
    sample = load_wuhan()
    assert len(sample) == 88
    assert sample.scale == DISCRETE_DAYS
    assert sample.symptoms.min() == 3
    assert sample.symptoms.max() == 43
    assert sample.deltas.sum() == 8


def test_set_is_read_only_and_indexable():
    sample = load_wuhan()
    with pytest.raises(ValueError):
        sample.exits[0] = 1.0
    assert isinstance(sample[0], Observation)
    assert len(sample[:10]) == 10
    assert ObservationSet.from_records(sample.records) == sample


def test_format_roundtrip_wuhan(tmp_path):
    sample = load_wuhan()
    assert parse_observations(format_observations(sample)) == sample
    assert parse_triples(format_triples(sample)) == sample
    path = tmp_path / "wuhan3.txt"
    path.write_text(format_triples(sample))
    assert read_sample(path) == sample


times = st.floats(0.01, 50, allow_nan=False).map(lambda x: round(x, 3))


@given(st.lists(st.tuples(times, times), min_size=1, max_size=30))
def test_triples_roundtrip(pairs):
    sample = ObservationSet([p[0] for p in pairs], [p[1] for p in pairs], CONTINUOUS)
    back = parse_triples(format_triples(sample), CONTINUOUS)
    assert back == sample


# -- reduction -----------------------------------------------------------------

WUHAN_ARRAY = [
    [1, 3, 4, 0, 0, 2, 0],
    [2, 1, 0, 0, 0, 9],
    [0, 1, 1, 0, 4],
    [1, 0, 2, 3],
    [1, 0, 6],
    [1, 3],
    [3],
]


def test_reduce_wuhan():
    problem = reduce(load_wuhan())
    assert_array_equal(problem.grid, [3, 4, 5, 6, 7, 8])
    assert problem.upper == 9
    assert problem.triangular() == WUHAN_ARRAY
    # intervals containing all of [3, 9) carry no information; they sit in N_07
    assert problem.n_uninformative == 40
    assert problem.count_matrix().sum() + problem.n_uninformative == 88


def test_reduce_single_observation():
    problem = reduce(ObservationSet([4], [6]))
    assert problem.m == 0
    assert problem.upper == 6
    assert problem.n_uninformative == 1


def test_reduce_all_lefts_zero():
    # every interval starts at 0: the CDF jumps to 1 at the smallest onset
    problem = reduce(ObservationSet([5, 6, 9], [2, 4, 7]))
    assert problem.m == 0
    assert problem.upper == 2


@given(st.lists(st.tuples(st.integers(1, 20), st.integers(1, 30)), min_size=1, max_size=40))
def test_reduce_counts_every_observation(pairs):
    sample = ObservationSet([p[0] for p in pairs], [p[1] for p in pairs])
    problem = reduce(sample)
    assert problem.cell_n.sum() + problem.n_uninformative == len(sample)
    assert np.all(problem.cell_i < problem.cell_j)
    assert np.all(problem.grid < problem.upper)
