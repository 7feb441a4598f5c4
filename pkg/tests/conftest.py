import json

import pytest


def election_doc(N=200, shares=None, invalid=0.0, C=2, alpha=0.1, rlv=None, **over):
    shares = shares or {"0": 1.0}
    d = {
        "contest": {"num_candidates": C, "num_ballots": N, "risk_limit": alpha, "max_reveal_fraction": 0.5},
        "vote_distribution": {"candidates": shares, "invalid": invalid},
        "seeds": {"election": "test-election", "ballots": "test-ballots", "beacon_contributors": 2},
        "output": {"dir": "out"},
    }
    if rlv is not None:
        d["rlv"] = rlv
    d.update(over)
    return d


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="election.json"):
        p = tmp_path / name
        p.write_text(json.dumps(doc, indent=2))
        return p
    return write
