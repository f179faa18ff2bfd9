"""Stochastic round engine.

Each pool mines with an exponential clock whose mean scales as
1/alpha + 1/gamma (mining power plus communication overhead) times the mean
block time. A round is a race: the pool with the earliest pending timestamp
mines, a dishonest pool forks at the current honest tip on its first block,
and the round ends under the two-block leading criterion. A dishonest winner
may hold back part of its chain as a private lead for the next round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .tree import HONEST, Block, RoundTree, SubChain, select_main_chain

RELEASE_ALL = "release-all"
RELEASE_MIN = "release-min"
RELEASE_POLICIES = (RELEASE_ALL, RELEASE_MIN)

# Hook deciding whether an eligible dishonest leader ends the round now.
# Arguments: (longest, second, blocks mined this round). None means eager.
TerminationPolicy = Callable[[int, int, int], bool]


class ScriptExhausted(RuntimeError):
    """A scripted clock ran out of events before the round ended."""


@dataclass(frozen=True)
class PoolSpec:
    pool: int
    alpha: float


@dataclass(frozen=True)
class SimConfig:
    pools: Tuple[PoolSpec, ...]
    gamma: float = 10.0
    mean_block_time: float = 15.0
    lead_threshold: int = 2
    release_policy: str = RELEASE_ALL
    seed: int = 0
    alpha_slack: float = 1e-9

    def __post_init__(self):
        if len(self.pools) < 2:
            raise ValueError("need the honest pool plus at least one dishonest pool")
        for want, spec in enumerate(self.pools):
            if spec.pool != want:
                raise ValueError(f"pools must be indexed 0..m in order, got {spec.pool} at {want}")
            if not 0.0 <= spec.alpha <= 1.0:
                raise ValueError(f"alpha of pool {spec.pool} must be in [0, 1], got {spec.alpha}")
        total = sum(spec.alpha for spec in self.pools)
        if total > 1.0 + self.alpha_slack:
            raise ValueError(f"pool alphas sum to {total:.6f} > 1")
        if total <= 0.0:
            raise ValueError("at least one pool needs positive mining power")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.mean_block_time <= 0.0:
            raise ValueError("mean block time must be positive")
        if self.lead_threshold < 1:
            raise ValueError("lead threshold must be a positive integer")
        if self.release_policy not in RELEASE_POLICIES:
            raise ValueError(f"unknown release policy {self.release_policy!r}")

    @classmethod
    def from_alphas(cls, alphas: Sequence[float], **kwargs) -> "SimConfig":
        return cls(pools=tuple(PoolSpec(i, a) for i, a in enumerate(alphas)), **kwargs)

    @property
    def num_dishonest(self) -> int:
        return len(self.pools) - 1

    @property
    def alphas(self) -> Tuple[float, ...]:
        return tuple(spec.alpha for spec in self.pools)


@dataclass(frozen=True)
class PoolRoundStat:
    """Final state of one dishonest sub-chain: forked flag, fork position, length."""

    forked: bool
    fork_position: int
    length: int


@dataclass(frozen=True)
class RoundOutcome:
    winner: int
    honest_length: int
    per_pool: Tuple[PoolRoundStat, ...]  # index i-1 holds dishonest pool i
    released: int  # winner's own blocks pegged this round (0 on an honest win)
    reserved: int  # winner's blocks held back as next round's private lead
    duration: float
    pegged: Tuple[Block, ...]
    tree: RoundTree
    first_block_owner: int  # owner of the round's first block (carried or mined)
    fork_order: Tuple[int, ...]  # dishonest pools in the order they forked
    longest: int  # leader's generalized length at termination
    second: int  # runner-up generalized length at termination
    events: int  # blocks mined this round (carryover blocks excluded)

    @property
    def pegged_count(self) -> int:
        return len(self.pegged)


@dataclass(frozen=True)
class Carryover:
    """Private blocks a dishonest winner brings into the next round.

    The first private block is the nephew that closes the finished round's
    classification.
    """

    owner: int
    private_blocks: int
    pending_nephew: bool = True

    def __post_init__(self):
        if self.owner == HONEST:
            raise ValueError("only a dishonest pool can reserve blocks")
        if self.private_blocks < 1:
            raise ValueError("carryover requires at least one private block")


def interarrival_scale(alpha: float, gamma: float, mean_block_time: float) -> float:
    """Mean block-generating-plus-pegging time for one pool; inf if alpha is 0."""
    if alpha == 0.0:
        return math.inf
    return mean_block_time * (1.0 / alpha + 1.0 / gamma)


def sample_interarrival(rng, pool: PoolSpec, config: SimConfig) -> float:
    """One inter-arrival draw for a pool: exponential via inverse transform.

    rng needs a .random() method returning uniforms in [0, 1). A zero-alpha
    pool is never scheduled and gets an infinite sentinel without consuming
    randomness.
    """
    scale = interarrival_scale(pool.alpha, config.gamma, config.mean_block_time)
    if scale == math.inf:
        return math.inf
    return -scale * math.log1p(-rng.random())


class _PoolStream:
    """Batched exponential gaps for one pool, on its own counter-based stream."""

    __slots__ = ("_gen", "scale", "_buf", "_pos", "_batch")

    def __init__(self, seed_seq: np.random.SeedSequence, scale: float, batch: int = 1024):
        self._gen = np.random.Generator(np.random.Philox(seed_seq))
        self.scale = scale
        self._batch = batch
        self._buf: list = []
        self._pos = 0

    def next_gap(self) -> float:
        if self.scale == math.inf:
            return math.inf
        if self._pos >= len(self._buf):
            u = self._gen.random(self._batch)
            self._buf = (-self.scale * np.log1p(-u)).tolist()
            self._pos = 0
        gap = self._buf[self._pos]
        self._pos += 1
        return gap


class MiningClock:
    """Event source for run_round: per-pool timestamps, earliest pool mines.

    Each pool draws from its own child stream of the master seed, so results
    do not depend on how replications are scheduled across workers. Create
    one clock per replication and reuse it across rounds.
    """

    def __init__(self, config: SimConfig, seed=None, batch: int = 1024):
        if seed is None:
            seed = config.seed
        seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = seed_seq.spawn(len(config.pools))
        self._streams = [
            _PoolStream(child, interarrival_scale(spec.alpha, config.gamma, config.mean_block_time), batch)
            for child, spec in zip(children, config.pools)
        ]
        self._next: list = []

    def begin_round(self) -> None:
        # Fresh timestamps each round; the round clock restarts at zero.
        self._next = [s.next_gap() for s in self._streams]

    def next_event(self) -> Tuple[int, float]:
        nxt = self._next
        pool = 0
        at = nxt[0]
        for i in range(1, len(nxt)):
            if nxt[i] < at:
                at = nxt[i]
                pool = i
        if at == math.inf:
            raise RuntimeError("no pool can mine (all alphas zero?)")
        nxt[pool] = at + self._streams[pool].next_gap()
        return pool, at


class ScriptClock:
    """Deterministic event source replaying a fixed pool order with unit gaps."""

    def __init__(self, events: Sequence[int]):
        self._events = list(events)
        self._pos = 0
        self._now = 0.0

    def begin_round(self) -> None:
        self._now = 0.0

    def next_event(self) -> Tuple[int, float]:
        if self._pos >= len(self._events):
            raise ScriptExhausted(f"script ended after {self._pos} events")
        pool = self._events[self._pos]
        self._pos += 1
        self._now += 1.0
        return pool, self._now

    @property
    def consumed(self) -> int:
        return self._pos


def run_round(
    config: SimConfig,
    carryover: Optional[Carryover] = None,
    clock=None,
    termination_policy: Optional[TerminationPolicy] = None,
) -> RoundOutcome:
    """Play one round of mining competition and return its outcome.

    Termination is re-evaluated after every single-block event; an honest
    leader at the threshold ends the round outright, a dishonest leader ends
    it when the policy fires (eagerly by default). A round must contain at
    least one mined block before a dishonest leader may end it, so a round
    that starts with a large private lead still has positive duration.
    """
    if clock is None:
        clock = MiningClock(config)
    m = config.num_dishonest
    threshold = config.lead_threshold

    v = 0
    forked = [False] * (m + 1)
    fork_pos = [0] * (m + 1)
    length = [0] * (m + 1)
    fork_order: list = []
    first_owner = -1

    if carryover is not None:
        z = carryover.owner
        if not 1 <= z <= m:
            raise ValueError(f"carryover owner {z} not a dishonest pool of this config")
        forked[z] = True
        fork_pos[z] = 0
        length[z] = carryover.private_blocks
        fork_order.append(z)
        first_owner = z

    clock.begin_round()
    mined = 0
    now = 0.0
    winner = -1
    longest = 0
    second = 0

    while True:
        pool, now = clock.next_event()
        mined += 1
        if first_owner < 0:
            first_owner = pool
        if pool == HONEST:
            v += 1
        else:
            if not forked[pool]:
                forked[pool] = True
                fork_pos[pool] = v
                fork_order.append(pool)
            length[pool] += 1

        # Top-two scan over generalized lengths; starting from the honest
        # pool with strict > keeps the honest-first, lowest-index tie-break.
        longest = v
        leader = HONEST
        second = 0
        for i in range(1, m + 1):
            gen = fork_pos[i] + length[i] if forked[i] else 0
            if gen > longest:
                second = longest
                longest = gen
                leader = i
            elif gen > second:
                second = gen

        if longest - second >= threshold:
            if leader == HONEST:
                winner = leader
                break
            if termination_policy is None or termination_policy(longest, second, mined):
                winner = leader
                break

    if winner == HONEST:
        released = 0
        reserved = 0
    else:
        own = length[winner]
        if config.release_policy == RELEASE_ALL:
            released = own
        else:
            # Smallest release that keeps the pegged part a full lead ahead.
            released = max(1, second + threshold - fork_pos[winner])
            released = min(released, own)
        reserved = own - released

    honest_blocks = tuple(Block(HONEST, h, h) for h in range(1, v + 1))
    subchains = []
    for i in range(1, m + 1):
        if forked[i]:
            blocks = tuple(Block(i, fork_pos[i] + j, j) for j in range(1, length[i] + 1))
            subchains.append(SubChain(owner=i, fork_position=fork_pos[i], blocks=blocks, forked=True))
        else:
            subchains.append(SubChain(owner=i))
    tree = RoundTree(
        honest=SubChain(owner=HONEST, blocks=honest_blocks),
        dishonest=tuple(subchains),
    )
    pegged = select_main_chain(tree, winner, released if winner != HONEST else v)

    return RoundOutcome(
        winner=winner,
        honest_length=v,
        per_pool=tuple(PoolRoundStat(forked[i], fork_pos[i] if forked[i] else 0, length[i]) for i in range(1, m + 1)),
        released=released,
        reserved=reserved,
        duration=now,
        pegged=pegged,
        tree=tree,
        first_block_owner=first_owner,
        fork_order=tuple(fork_order),
        longest=longest,
        second=second,
        events=mined,
    )


def make_carryover(outcome: RoundOutcome) -> Optional[Carryover]:
    """Private lead the winner takes into the next round, if any."""
    if outcome.reserved < 1:
        return None
    return Carryover(owner=outcome.winner, private_blocks=outcome.reserved)
