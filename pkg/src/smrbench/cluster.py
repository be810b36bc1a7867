"""Cluster sizing formulas: fault-tolerance thresholds and quorum sizes.

All quantities derive from the cluster size n:

* ``crash_tolerance(n)``  = floor((n - 1) / 2)   -- max crash faults a
  majority-based protocol survives.
* ``byz_tolerance(n)``    = floor((n - 1) / 3)   -- max Byzantine faults a
  BFT protocol survives.
* ``raft_majority(n)``    = ceil((n - 1) / 2 + 1) = floor(n / 2) + 1 --
  votes/acks needed; the ceiling keeps even-sized clusters safe (any two
  majorities intersect), and it equals crash_tolerance + 1 for odd n.
* ``bft_write_quorum(n)`` = ceil((n + byz_tolerance(n) + 1) / 2) -- matching
  WRITE (and ACCEPT) messages needed; any two such quorums intersect in at
  least byz_tolerance(n) + 1 nodes, i.e. at least one correct node beyond
  the faulty ones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class InvalidClusterError(ValueError):
    """Raised for cluster sizes the formulas are not defined on (n < 1)."""


class Protocol(enum.Enum):
    RAFT = "raft"
    BFT = "bft"


def _check_n(n: int) -> None:
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise InvalidClusterError(f"cluster size must be an integer >= 1, got {n!r}")


def crash_tolerance(n: int) -> int:
    """Max number of crash (fail-stop) faults tolerated by a cluster of n."""
    _check_n(n)
    return (n - 1) // 2


def byz_tolerance(n: int) -> int:
    """Max number of Byzantine faults tolerated by a cluster of n."""
    _check_n(n)
    return (n - 1) // 3


def raft_majority(n: int) -> int:
    """Votes (or acknowledgements) that constitute a majority."""
    _check_n(n)
    return n // 2 + 1


def bft_write_quorum(n: int) -> int:
    """Matching WRITE messages required before a replica sends ACCEPT.

    Defined for any n >= 1; clusters with n < 4 have byz_tolerance 0 and
    degenerate BFT behaviour, which callers may flag but is still computed.
    """
    return math.ceil((n + byz_tolerance(n) + 1) / 2)


@dataclass(frozen=True)
class ToleranceBounds:
    """Derived per-cluster thresholds, computed once from n."""

    n: int
    f_crash: int
    f_byz: int
    raft_majority: int
    bft_write_quorum: int

    @classmethod
    def for_cluster(cls, n: int) -> "ToleranceBounds":
        _check_n(n)
        return cls(
            n=n,
            f_crash=crash_tolerance(n),
            f_byz=byz_tolerance(n),
            raft_majority=raft_majority(n),
            bft_write_quorum=bft_write_quorum(n),
        )

    def __post_init__(self) -> None:
        # Quorum intersection sanity: two write quorums share > f_byz nodes.
        if 2 * self.bft_write_quorum - self.n < self.f_byz + 1:
            raise InvalidClusterError(
                f"write quorum {self.bft_write_quorum} of {self.n} does not "
                f"guarantee intersection beyond {self.f_byz} faults"
            )


@dataclass(frozen=True)
class ClusterConfig:
    """Static description of a replicated master-node cluster."""

    n: int
    protocol: Protocol
    node_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        _check_n(self.n)
        ids = self.node_ids or tuple(range(self.n))
        object.__setattr__(self, "node_ids", ids)
        if len(ids) != self.n or sorted(ids) != list(range(self.n)):
            raise InvalidClusterError(f"node ids must be exactly 0..{self.n - 1}")

    @property
    def degenerate_bft(self) -> bool:
        """True when a BFT run cannot tolerate a single Byzantine fault."""
        return self.protocol is Protocol.BFT and byz_tolerance(self.n) == 0

    @property
    def bounds(self) -> ToleranceBounds:
        return ToleranceBounds.for_cluster(self.n)
