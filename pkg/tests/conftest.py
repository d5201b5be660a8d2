from __future__ import annotations

import pytest

from ozforge.fixtures import FixtureSpec, gen_fixtures


@pytest.fixture(scope="session")
def fixture_tree(tmp_path_factory):
    """One small generated corpus + scripted session shared by fast tests."""
    out = tmp_path_factory.mktemp("fx") / "tree"
    gen_fixtures(out, FixtureSpec(n_messages=48, session_seconds=12, seed=3))
    return out
