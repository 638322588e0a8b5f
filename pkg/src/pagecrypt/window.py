"""Per-client FIFO sliding window over plaintext-resident page addresses.

The window never exceeds its capacity: admission of the W+1'th address
evicts the oldest entry within the same call, so the plaintext exposure
bound holds at every observable point.  Pure FIFO by insertion order; the
server only ever observes faults, never hits, so no recency information
exists to act on.
"""

from collections import deque

from .errors import ContractViolation


class SlidingWindow:
    """Bounded FIFO of page virtual addresses, no duplicates."""

    __slots__ = ("capacity", "_queue", "_members")

    MAX_CAPACITY = 4096

    def __init__(self, capacity: int = 16):
        if not 1 <= capacity <= self.MAX_CAPACITY:
            raise ContractViolation(
                f"window capacity {capacity} outside 1..{self.MAX_CAPACITY}"
            )
        self.capacity = capacity
        self._queue = deque()
        self._members = set()

    def admit(self, vaddr: int):
        """Append vaddr; return the evicted oldest address, or None.

        A fault cannot occur on a resident page, so admitting a duplicate is
        a caller bug.
        """
        if vaddr in self._members:
            raise ContractViolation(f"page {vaddr:#x} already in window")
        evicted = None
        if len(self._queue) == self.capacity:
            evicted = self._queue.popleft()
            self._members.discard(evicted)
        self._queue.append(vaddr)
        self._members.add(vaddr)
        return evicted

    def remove(self, vaddr: int) -> bool:
        """Drop vaddr if present (free path); preserves FIFO order of the rest."""
        if vaddr not in self._members:
            return False
        self._members.discard(vaddr)
        self._queue.remove(vaddr)
        return True

    def resident(self, vaddr: int) -> bool:
        return vaddr in self._members

    def clear(self) -> None:
        self._queue.clear()
        self._members.clear()

    def __len__(self) -> int:
        return len(self._queue)

    def __iter__(self):
        """Oldest-first iteration."""
        return iter(self._queue)
