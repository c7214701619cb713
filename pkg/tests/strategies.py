"""Hypothesis generators for commands over the canonical grammar."""

from hypothesis import strategies as st

from teamplan.command import StructuredCommand, default_grammar
from teamplan.state import VERBS, Pose2D

ident = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,11}", fullmatch=True)
coord = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
locations = st.one_of(
    ident,
    st.sampled_from(["assembly_zone", "staging_3", "wheel_socket_1", "clearing_w", "lookout_ne"]),
    st.builds(Pose2D, coord, coord),
    st.builds(Pose2D, coord, coord, st.floats(-3.1, 3.1).filter(lambda h: h != 0.0)),
)


@st.composite
def structured_commands(draw, verbs=VERBS):
    verb = draw(st.sampled_from(verbs))
    needs = default_grammar().requires[verb]
    n = draw(st.integers(1, 3))
    ids = draw(st.lists(st.integers(0, 999), min_size=n + 1, max_size=n + 1, unique=True))
    agents = tuple((draw(ident), i) for i in ids[:n])
    obj = (draw(ident), ids[n]) if "object" in needs else None
    loc = draw(locations) if "location" in needs else None
    return StructuredCommand(draw(st.integers(0, 99)), agents, verb, obj, loc)
