import pytest

from dcwc import crypto
from dcwc.channel import ChannelParams, make_update, new_channel
from dcwc.crypto import keygen


@pytest.fixture(params=crypto.SCHEMES)
def scheme(request):
    """Run the test once per signature backend."""
    previous = crypto.default_scheme()
    crypto.set_default_scheme(request.param)
    yield request.param
    crypto.set_default_scheme(previous)


@pytest.fixture
def parties(scheme):
    return keygen(1), keygen(2)


@pytest.fixture
def channel(parties):
    """(params, keys_a, keys_b, [seq0, seq1, seq2]) with A paying B 3 then 2."""
    a, b = parties
    params = ChannelParams("c0", a.public, b.public, 10, 10, 60, 2, 2, 1, 10)
    _, first = new_channel(params, a, b)
    second = make_update(params, first, 3, a, b)
    third = make_update(params, second, 2, a, b)
    return params, a, b, [first, second, third]


CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the terminal summary prints them all."""

    def record(number: int, ok: bool, detail: str) -> None:
        CRITERIA[number] = (ok, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} - {detail}")
