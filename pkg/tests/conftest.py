import pytest

from opentab.tables import RawTable, Table, normalize_table

FIXTURES_DIR = "tests/fixtures"


def make_fabrice() -> Table:
    # Raw headers use the literal backslash-n form found in wiki table dumps,
    # which sanitizes to the career_nsr / career_nwin_loss identifiers.
    header = [
        "Name", "2001", "2002", "2003", "2004", "2005", "2006", "2007",
        "2008", "2009", "2010", "Career\\nSR", "Career\\nWin-Loss",
    ]
    rows = [
        ["australian open", "2r", "1r", "3r", "2r", "1r", "qf", "3r", "2r", "3r", "1r", "0 / 18", "22–18"],
        ["french open", "4r", "2r", "2r", "3r", "1r", "1r", "1r", "2r", "1r", "a", "0 / 20", "17–20"],
        ["wimbledon", "3r", "2r", "2r", "2r", "2r", "2r", "2r", "1r", "2r", "a", "0 / 14", "11–14"],
    ]
    table = normalize_table(
        RawTable(id="fabrice-santoro", title="Fabrice Santoro", header=header, rows=rows)
    )
    assert isinstance(table, Table)
    return table


def make_airport() -> Table:
    header = ["Rank", "City", "Passengers", "Ranking", "Airline"]
    rows = [
        ["1", "united states, los angeles", "14,749", "nan", "alaska airlines"],
        ["2", "united states, houston", "5,465", "nan", "united express"],
        ["3", "canada, calgary", "3,761", "nan", "air transat, westjet"],
    ]
    table = normalize_table(
        RawTable(
            id="playa-de-oro-international-airport",
            title="Playa de Oro International Airport",
            header=header,
            rows=rows,
        )
    )
    assert isinstance(table, Table)
    return table


@pytest.fixture
def fabrice() -> Table:
    return make_fabrice()


@pytest.fixture
def airport() -> Table:
    return make_airport()
