"""Per-round reward booking.

Regular rewards go to the round in which the blocks peg: the winner is paid
its pegged blocks, and when a dishonest pool wins, the honest pool is still
paid for the pegged honest prefix. Uncle rewards are booked to the round the
uncles were mined in. The nephew reference reward is booked one round later,
to the round the nephew block lives in, paid to whoever owns that round's
first block. All amounts are exact rationals.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

from .classify import Classification, NephewUnavailable, nephew_reward
from .engine import RoundOutcome
from .tree import HONEST

_ZERO = Fraction(0)


@dataclass(frozen=True)
class PoolReward:
    regular: Fraction = _ZERO
    uncle: Fraction = _ZERO
    nephew: Fraction = _ZERO

    @property
    def total(self) -> Fraction:
        return self.regular + self.uncle + self.nephew


@dataclass(frozen=True)
class RewardVector:
    round_index: int
    per_pool: Tuple[PoolReward, ...]  # indexed by pool id

    @property
    def totals(self) -> Tuple[Fraction, ...]:
        return tuple(p.total for p in self.per_pool)


def allocate(
    outcome: RoundOutcome,
    classification: Classification,
    prev_uncle_count: int,
) -> RewardVector:
    """Book one round's rewards for every pool.

    prev_uncle_count is the uncle count of the previous round; this round's
    first block is that round's nephew, so its owner collects the reference
    reward here. Pass 0 for the first round.
    """
    n_pools = len(outcome.per_pool) + 1
    regular = [_ZERO] * n_pools
    uncle = [_ZERO] * n_pools
    nephew = [_ZERO] * n_pools

    if outcome.winner == HONEST:
        regular[HONEST] = Fraction(outcome.honest_length)
    else:
        stat = outcome.per_pool[outcome.winner - 1]
        regular[outcome.winner] = Fraction(outcome.released)
        regular[HONEST] = Fraction(stat.fork_position)

    for record in classification.uncles:
        uncle[record.owner] += record.reward

    if prev_uncle_count:
        nephew[outcome.first_block_owner] += nephew_reward(prev_uncle_count)

    return RewardVector(
        round_index=classification.round_index,
        per_pool=tuple(
            PoolReward(regular=regular[p], uncle=uncle[p], nephew=nephew[p]) for p in range(n_pools)
        ),
    )


def settle_uncle_rewards(classification: Classification) -> List[Tuple[int, Fraction]]:
    """Uncle payments of a closed round, in (height, pool) order."""
    if classification.nephew is None:
        raise NephewUnavailable("round not closed: nephew unknown")
    return [(u.owner, u.reward) for u in classification.uncles]
