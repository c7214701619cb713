import math
from dataclasses import replace

import pytest

from teamplan.config import default_sim_config
from teamplan.tasks import load_tasks


@pytest.fixture(scope="session")
def sim():
    return default_sim_config()


@pytest.fixture(scope="session")
def quiet_sim(sim):
    """Simulation with stochastic failures switched off."""
    return replace(sim, skills=sim.skills.without_failures())


@pytest.fixture(scope="session")
def tasks():
    return load_tasks()


def inside_rect(x, y, rect):
    """Strictly inside an (x0, y0, x1, y1) rectangle; independent of CollisionMap."""
    x0, y0, x1, y1 = rect
    return x0 < x < x1 and y0 < y < y1


def grid_shortest_path(start, goal, rects, domain, h=0.1):
    """Dijkstra on an 8-connected grid over free cells (oracle for planner quality)."""
    import heapq

    x0, x1, y0, y1 = domain
    nx, ny = int(round((x1 - x0) / h)) + 1, int(round((y1 - y0) / h)) + 1

    def free(i, j):
        x, y = x0 + i * h, y0 + j * h
        return not any(inside_rect(x, y, r) for r in rects)

    def cell(p):
        return int(round((p[0] - x0) / h)), int(round((p[1] - y0) / h))

    s, g = cell(start), cell(goal)
    dist = {s: 0.0}
    pq = [(0.0, s)]
    moves = [(di, dj, h * math.hypot(di, dj)) for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]
    while pq:
        d, u = heapq.heappop(pq)
        if u == g:
            return d
        if d > dist.get(u, math.inf):
            continue
        for di, dj, w in moves:
            v = (u[0] + di, u[1] + dj)
            if not (0 <= v[0] < nx and 0 <= v[1] < ny) or not free(*v):
                continue
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(pq, (nd, v))
    return math.inf


LABELS = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL/SKIP line per acceptance criterion, in collection order."""
    rows = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when in ("call", "setup"):
                rows.append((props.get("order", 99), LABELS[outcome], props["criterion"], props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for _, outcome, name, detail in sorted(rows):
        terminalreporter.write_line(f"{outcome}  {name}" + (f"  [{detail}]" if detail else ""))
