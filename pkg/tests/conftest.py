from __future__ import annotations

import logging

import pytest

from essvi.samples import spx_days, spx_params, synthetic_chain


@pytest.fixture(autouse=True)
def _quiet_dropped_quotes(caplog):
    # every synthetic chain drops deep-wing quotes below two ticks
    caplog.set_level(logging.ERROR, logger="essvi.market_data")


@pytest.fixture(scope="session")
def spx_times():
    return [d / 365 for d in spx_days()]


@pytest.fixture(scope="session")
def spx_chain(spx_times):
    return synthetic_chain(spx_times, spx_params())


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
