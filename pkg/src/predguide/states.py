"""Three-way predicate states and the score-to-state map."""

SATISFIED = "satisfied"
UNCERTAIN = "uncertain"
VIOLATED = "violated"
STATES = (SATISFIED, UNCERTAIN, VIOLATED)

# Higher is better; used by the improvement test and severity ordering.
STATE_RANK = {VIOLATED: 0, UNCERTAIN: 1, SATISFIED: 2}


def state_from_score(q: float, sat: float = 0.60, unc: float = 0.35) -> str:
    """Closed lower bounds: q >= sat is satisfied, unc <= q < sat is uncertain."""
    if q >= sat:
        return SATISFIED
    if q >= unc:
        return UNCERTAIN
    return VIOLATED
