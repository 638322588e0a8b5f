"""Flat unprotected memory model: the coherence oracle.

Replays the same trace text against plain byte arrays, no paging, no
faults, no encryption.  Region ids index a dict; memory is zero on first
use; free drops the region.  Completely independent of the package.
"""


def round_up_page(n):
    return (n + 4095) // 4096 * 4096


class FlatMemory:
    def __init__(self):
        self.regions = {}  # id -> bytearray

    def apply_line(self, line):
        line = line.strip()
        if not line or line.startswith("#"):
            return
        parts = line.split()
        op = parts[0]
        if op == "alloc":
            rid = int(parts[1])
            self.regions[rid] = bytearray(round_up_page(int(parts[2])))
        elif op == "free":
            del self.regions[int(parts[1])]
        elif op == "write":
            rid, off = int(parts[1]), int(parts[2])
            data = bytes.fromhex(parts[3])
            self.regions[rid][off : off + len(data)] = data
        elif op == "read":
            rid, off, ln = int(parts[1]), int(parts[2]), int(parts[3])
            assert off + ln <= len(self.regions[rid])
        elif op == "stack":
            pass  # protection toggles do not change contents
        else:
            raise AssertionError(f"oracle: unknown op {op}")

    def run(self, trace_text):
        for line in trace_text.splitlines():
            self.apply_line(line)
        return self

    def final_contents(self):
        """id -> bytes for every region still mapped."""
        return {rid: bytes(data) for rid, data in self.regions.items()}
