"""Brute-force FIFO page cache simulator, independent of the package.

Replays a sequence of page accesses against a capacity-W FIFO and reports
fault count, eviction count, and the eviction sequence.  The only data
structures are a list used as a queue and a set, operated in the most
literal way possible.
"""


def simulate_fifo(accesses, capacity):
    """Return (faults, evictions, evicted_pages) for the page access list."""
    queue = []
    resident = set()
    faults = 0
    evicted_pages = []
    for page in accesses:
        if page in resident:
            continue
        faults += 1
        if len(queue) == capacity:
            old = queue.pop(0)
            resident.remove(old)
            evicted_pages.append(old)
        queue.append(page)
        resident.add(page)
    return faults, len(evicted_pages), evicted_pages


def simulate_fifo_with_frees(events, capacity):
    """Like simulate_fifo but events may be ('access', p) or ('free', p).

    A freed page leaves the cache immediately without an eviction.
    """
    queue = []
    resident = set()
    faults = 0
    evicted_pages = []
    for kind, page in events:
        if kind == "free":
            if page in resident:
                resident.remove(page)
                queue.remove(page)
            continue
        if page in resident:
            continue
        faults += 1
        if len(queue) == capacity:
            old = queue.pop(0)
            resident.remove(old)
            evicted_pages.append(old)
        queue.append(page)
        resident.add(page)
    return faults, len(evicted_pages), evicted_pages
