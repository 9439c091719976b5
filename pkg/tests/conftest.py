import pytest

from stagger.corpus import LabeledSequence

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def green_pet_shop():
    toks = "The Green Pet Shop Self Cooling Dog Pad".split()
    return LabeledSequence(tuple(toks), ("B", "I", "I", "I", "O", "O", "O", "O"))
