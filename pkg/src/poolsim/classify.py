"""Block classification across consecutive rounds.

When a round ends, every observed block gets exactly one label: blocks on
the pegged main chain are regular, the rest are orphans. An orphan is an
uncle if it is the first block of a losing sub-chain and sits within the
reward distance of the nephew block; other orphans are stale. The nephew is
the first block after the round's main chain: the first block of the next
round, or, when the winner reserved part of its chain, the first reserved
block. Uncle and nephew rewards are exact rationals (eighths and
thirty-seconds), so the per-round identities can be checked exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, Optional, Tuple

from .engine import RoundOutcome
from .tree import HONEST, Block

MAX_UNCLE_DISTANCE = 6
NEPHEW_REFERENCE_UNIT = Fraction(1, 32)

_ZERO = Fraction(0)


class NotAnUncle(ValueError):
    """Distance outside the rewarded uncle range."""


class NephewUnavailable(RuntimeError):
    """No nephew source: nothing reserved and the next round's first block unknown."""


@dataclass(frozen=True)
class BlockClass:
    kind: str  # "regular" | "uncle" | "stale" | "nephew"
    distance: Optional[int] = None  # set for uncles
    uncle_count: Optional[int] = None  # set for nephews


REGULAR = BlockClass("regular")
STALE = BlockClass("stale")


@dataclass(frozen=True)
class UncleRecord:
    owner: int
    height: int
    distance: int
    reward: Fraction


@dataclass(frozen=True)
class NephewRecord:
    owner: int
    height: int  # in the closed round's local heights (main chain length + 1)
    uncle_count: int
    from_reserve: bool


@dataclass(frozen=True)
class Classification:
    round_index: int
    regular_count: int
    orphan_count: int
    uncles: Tuple[UncleRecord, ...]
    stale_count: int
    nephew: NephewRecord
    labels: Dict[Block, BlockClass]

    @property
    def uncle_count(self) -> int:
        return len(self.uncles)


@dataclass(frozen=True)
class RoundRatios:
    """Per-round ratios over the observed tree; always main + orphan = 1."""

    chain_quality: Fraction
    main_chain: Fraction
    orphan: Fraction
    uncle: Fraction
    stale: Fraction


def uncle_reward(distance: int) -> Fraction:
    """Reward of an uncle at the given generation distance from its nephew."""
    if not 1 <= distance <= MAX_UNCLE_DISTANCE:
        raise NotAnUncle(f"distance {distance} outside 1..{MAX_UNCLE_DISTANCE}")
    return Fraction(8 - distance, 8)


def nephew_reward(uncle_count: int) -> Fraction:
    """Reference reward a nephew earns for the uncles it names."""
    if uncle_count < 0:
        raise ValueError("uncle count cannot be negative")
    return uncle_count * NEPHEW_REFERENCE_UNIT


def determine_nephew(
    outcome: RoundOutcome, next_first_owner: Optional[int] = None
) -> NephewRecord:
    """Locate the nephew block that closes this round's classification.

    If the winner reserved blocks, the nephew is the first reserved block;
    otherwise it is the next round's first mined block, whose owner the
    caller must supply. The uncle count is filled in by classify_round.
    """
    if outcome.reserved >= 1:
        fork = outcome.per_pool[outcome.winner - 1].fork_position
        return NephewRecord(
            owner=outcome.winner,
            height=fork + outcome.released + 1,
            uncle_count=0,
            from_reserve=True,
        )
    if next_first_owner is None:
        raise NephewUnavailable("nothing reserved and no next-round first block given")
    return NephewRecord(
        owner=next_first_owner,
        height=outcome.pegged_count + 1,
        uncle_count=0,
        from_reserve=False,
    )


def find_uncles(
    outcome: RoundOutcome,
    nephew_height: int,
    max_distance: int = MAX_UNCLE_DISTANCE,
) -> Tuple[UncleRecord, ...]:
    """Orphans of this round that qualify as uncles of the nephew.

    Candidates are the first block of each losing dishonest sub-chain, plus
    the first orphaned honest block when a dishonest pool won. A candidate
    qualifies when its distance to the nephew is within the reward range.
    When the honest candidate qualifies, dishonest first blocks forked at or
    above it are disqualified (their parent is itself an orphan).
    """
    candidates = []  # (height, owner)
    if outcome.winner == HONEST:
        for i, stat in enumerate(outcome.per_pool, start=1):
            if stat.length >= 1:
                candidates.append((stat.fork_position + 1, i))
    else:
        win_fork = outcome.per_pool[outcome.winner - 1].fork_position
        honest_candidate = None
        if outcome.honest_length > win_fork:
            honest_candidate = win_fork + 1
            candidates.append((honest_candidate, HONEST))
        honest_qualifies = (
            honest_candidate is not None
            and 1 <= nephew_height - honest_candidate <= max_distance
        )
        for i, stat in enumerate(outcome.per_pool, start=1):
            if i == outcome.winner or stat.length < 1:
                continue
            if honest_qualifies and stat.fork_position >= win_fork + 1:
                continue
            candidates.append((stat.fork_position + 1, i))

    records = []
    for height, owner in sorted(candidates):
        distance = nephew_height - height
        if 1 <= distance <= max_distance:
            records.append(
                UncleRecord(owner=owner, height=height, distance=distance, reward=Fraction(8 - distance, 8))
            )
    return tuple(records)


def _observed_blocks(outcome: RoundOutcome):
    """Blocks visible on this round's tree; a winner's reserved tail is not."""
    yield from outcome.tree.honest.blocks
    for sub in outcome.tree.dishonest:
        if sub.owner == outcome.winner:
            yield from sub.blocks[: outcome.released]
        else:
            yield from sub.blocks


def classify_round(
    outcome: RoundOutcome,
    nephew: NephewRecord,
    uncles: Tuple[UncleRecord, ...],
    round_index: int = 0,
) -> Classification:
    """Label every observed block of a closed round."""
    uncle_at = {(u.owner, u.height): u for u in uncles}
    pegged = set(outcome.pegged)
    labels: Dict[Block, BlockClass] = {}
    regular = 0
    stale = 0
    for block in _observed_blocks(outcome):
        if block in pegged:
            labels[block] = REGULAR
            regular += 1
        else:
            uncle = uncle_at.get((block.owner, block.height))
            if uncle is not None:
                labels[block] = BlockClass("uncle", distance=uncle.distance)
            else:
                labels[block] = STALE
                stale += 1
    orphan = stale + len(uncles)
    return Classification(
        round_index=round_index,
        regular_count=regular,
        orphan_count=orphan,
        uncles=uncles,
        stale_count=stale,
        nephew=replace(nephew, uncle_count=len(uncles)),
        labels=labels,
    )


def round_ratios(outcome: RoundOutcome, classification: Classification) -> RoundRatios:
    """Chain quality and main/orphan/uncle/stale ratios for one round."""
    n_uncles = classification.uncle_count
    if outcome.winner == HONEST:
        v = outcome.honest_length
        losing = sum(stat.length for stat in outcome.per_pool)
        total = v + losing
        quality = Fraction(1)
        main = Fraction(v, total)
        orphan = Fraction(losing, total)
    else:
        stat = outcome.per_pool[outcome.winner - 1]
        fork = stat.fork_position
        v = outcome.honest_length
        others = sum(s.length for i, s in enumerate(outcome.per_pool, start=1) if i != outcome.winner)
        total = v + outcome.released + others
        quality = Fraction(fork, fork + outcome.released)
        main = Fraction(fork + outcome.released, total)
        orphan = Fraction((v - fork) + others, total)
    uncle = Fraction(n_uncles, total)
    return RoundRatios(
        chain_quality=quality,
        main_chain=main,
        orphan=orphan,
        uncle=uncle,
        stale=orphan - uncle,
    )
