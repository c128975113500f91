"""Synthetic long-tail view/add-to-cart logs with planted taste communities.

Item ``i`` has global popularity proportional to ``(i + 1) ** -zipf_exponent``.
Items are dealt into ``n_communities`` taste groups by a seeded shuffle, so
every group mixes head and tail items.  Each user belongs to one group;
views come from the group's (renormalised Zipf) distribution with
probability ``community_affinity`` and from the global distribution
otherwise.  Every session ends with an add-to-cart drawn from the user's
group with probability ``add_to_cart_prob``, else from the global
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig
from .ingest import EventRecord, EventType


@dataclass(frozen=True)
class SynthConfig:
    n_items: int = 2000
    n_users: int = 5000
    views_per_user: tuple = (8, 40)
    sessions_per_user: tuple = (1, 4)
    zipf_exponent: float = 1.1
    n_communities: int = 20
    community_affinity: float = 0.8
    add_to_cart_prob: float = 0.9
    seed: int = 0
    horizon_ms: int = 30 * 24 * 3600 * 1000

    def validate(self) -> None:
        if not self.n_items >= self.n_communities >= 1:
            raise InvalidConfig("need n_items >= n_communities >= 1")
        if self.n_users < 1:
            raise InvalidConfig("need n_users >= 1")
        if not self.zipf_exponent > 0:
            raise InvalidConfig("zipf_exponent must be > 0")
        for name in ("add_to_cart_prob", "community_affinity"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise InvalidConfig(f"{name} must lie in (0, 1]")
        for name in ("views_per_user", "sessions_per_user"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise InvalidConfig(f"{name} must be a range with 1 <= lo <= hi")
        if self.views_per_user[0] < self.sessions_per_user[1]:
            raise InvalidConfig("views_per_user minimum must cover one view per session")


def item_name(i: int) -> str:
    return f"item{i:05d}"


def user_name(u: int) -> str:
    return f"user{u:05d}"


@dataclass
class World:
    """The hidden structure behind a generated log."""

    popularity: np.ndarray      # global view distribution
    community_of_item: np.ndarray
    community_of_user: np.ndarray
    community_dist: np.ndarray  # (n_communities, n_items)


def make_world(config: SynthConfig, rng: np.random.Generator) -> World:
    n, C = config.n_items, config.n_communities
    pop = (np.arange(1, n + 1, dtype=np.float64)) ** -config.zipf_exponent
    pop /= pop.sum()
    comm_item = np.empty(n, dtype=np.int64)
    comm_item[rng.permutation(n)] = np.arange(n) % C
    dist = np.zeros((C, n))
    for c in range(C):
        m = comm_item == c
        dist[c, m] = pop[m] / pop[m].sum()
    comm_user = rng.integers(0, C, size=config.n_users)
    return World(pop, comm_item, comm_user, dist)


def generate(config: SynthConfig = SynthConfig(), return_world: bool = False):
    """Event records sorted by timestamp (ties keep generation order)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    world = make_world(config, rng)
    gcdf = np.cumsum(world.popularity)
    ccdf = np.cumsum(world.community_dist, axis=1)
    n = config.n_items

    def draw(cdf, size):
        return np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), n - 1)

    events = []
    vlo, vhi = config.views_per_user
    slo, shi = config.sessions_per_user
    for u in range(config.n_users):
        c = world.community_of_user[u]
        n_views = int(rng.integers(vlo, vhi + 1))
        n_sess = int(rng.integers(slo, shi + 1))
        # split views across sessions, each session non-empty
        cuts = np.sort(rng.choice(np.arange(1, n_views), size=n_sess - 1, replace=False)) if n_sess > 1 else []
        sizes = np.diff(np.concatenate([[0], cuts, [n_views]])).astype(int)
        from_comm = rng.random(n_views) < config.community_affinity
        views = np.where(from_comm, draw(ccdf[c], n_views), draw(gcdf, n_views))
        carts_comm = rng.random(n_sess) < config.add_to_cart_prob
        carts = np.where(carts_comm, draw(ccdf[c], n_sess), draw(gcdf, n_sess))
        t = int(rng.integers(0, config.horizon_ms))
        uname = user_name(u)
        pos = 0
        for s, size in enumerate(sizes):
            for item in views[pos:pos + size]:
                t += int(rng.integers(1_000, 60_000))
                events.append(EventRecord(t, uname, item_name(int(item)), EventType.View))
            pos += size
            t += int(rng.integers(1_000, 60_000))
            events.append(EventRecord(t, uname, item_name(int(carts[s])), EventType.AddToCart))
            t += int(rng.integers(3_600_000, 3 * 24 * 3_600_000))
    events.sort(key=lambda e: e.timestamp)
    return (events, world) if return_world else events
