from pathlib import Path

import pytest

from ctxrec.collab import RatingMatrix
from ctxrec.store import load_transactions

DATA = Path(__file__).parent / "data"


def load_toy(name: str, grouped: bool):
    txs = load_transactions((DATA / name).read_text(), name)
    users = sorted({t.user for t in txs}, key=lambda u: int(u[1:]))
    items = sorted({t.item for t in txs} | set(range(max(t.item for t in txs) + 1)))
    group_of = {u: ("g0" if not grouped or int(u[1:]) < len(users) // 2 else "g1") for u in users}
    return txs, users, items, group_of


@pytest.fixture(params=[("toy_3x3.tsv", False), ("toy_10x20.tsv", False), ("toy_10x20.tsv", True)],
                ids=["3x3", "10x20", "10x20-groups"])
def toy(request):
    txs, users, items, group_of = load_toy(*request.param)
    return RatingMatrix(users, items, group_of, txs), txs, users, items, group_of


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
