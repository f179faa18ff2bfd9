import pytest

from poolsim.engine import PoolRoundStat, RoundOutcome
from poolsim.tree import HONEST, Block, RoundTree, SubChain, select_main_chain, sorted_lengths


def build_outcome(winner, honest_len, pools, released=0, first_block_owner=HONEST, duration=1.0):
    """Assemble a RoundOutcome for classifier/allocator tests.

    pools is one (forked, fork_position, length) triple per dishonest pool;
    a bare (fork_position, length) pair means forked. States need not be
    reachable by the engine; the classifier is a pure function of them.
    """
    honest_blocks = tuple(Block(HONEST, h, h) for h in range(1, honest_len + 1))
    subchains = []
    stats = []
    for i, entry in enumerate(pools, start=1):
        forked, fork_pos, length = entry if len(entry) == 3 else (True, *entry)
        if forked:
            blocks = tuple(Block(i, fork_pos + j, j) for j in range(1, length + 1))
            subchains.append(SubChain(i, fork_pos, blocks, True))
        else:
            subchains.append(SubChain(i))
        stats.append(PoolRoundStat(forked, fork_pos if forked else 0, length))
    tree = RoundTree(SubChain(HONEST, 0, honest_blocks, False), tuple(subchains))

    if winner == HONEST:
        pegged = honest_blocks
        rel = 0
        reserved = 0
    else:
        rel = released
        reserved = stats[winner - 1].length - released
        pegged = select_main_chain(tree, winner, released)
    lengths = sorted_lengths(tree)
    return RoundOutcome(
        winner=winner,
        honest_length=honest_len,
        per_pool=tuple(stats),
        released=rel,
        reserved=reserved,
        duration=duration,
        pegged=pegged,
        tree=tree,
        first_block_owner=first_block_owner,
        fork_order=tuple(i for i, s in enumerate(stats, start=1) if s.forked),
        longest=lengths.omega1,
        second=lengths.omega2,
        events=honest_len + sum(s.length for s in stats),
    )


@pytest.fixture
def outcome_builder():
    return build_outcome
