import random

import pytest

from pagecrypt.client import ClientSpace, parse_trace, replay
from pagecrypt.errors import ContractViolation, ProtocolError
from pagecrypt.orchestrator import Orchestrator
from pagecrypt.ram import TaggedRam
from pagecrypt.store import ClientId
from pagecrypt.workers import WorkerPool

from fifo_oracle import simulate_fifo
from flat_memory import FlatMemory

KEY = bytes(range(31, -1, -1))


def keysource(n):
    return KEY


def make_stack(window=4, pool_workers=None):
    ram = TaggedRam()
    pool = None
    if pool_workers:
        pool = WorkerPool(n_workers=pool_workers, keysource=keysource, ram=ram)
    orch = Orchestrator(ram, pool=pool, window_capacity=window)
    return ram, pool, orch


class TestRegistration:
    def test_pid_reuse_bumps_epoch(self):
        ram, _, orch = make_stack()
        a = ClientSpace(orch, ram, pid=100)
        b = ClientSpace(orch, ram, pid=100)
        assert a.client_id == ClientId(100, 0)
        assert b.client_id == ClientId(100, 1)

    def test_fresh_client_has_zero_metrics(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=5)
        m = orch.metrics(space.client_id)
        assert (m.faults, m.evictions, m.encrypt_ops, m.decrypt_ops) == (0, 0, 0, 0)

    def test_metrics_survive_unregister_frozen(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=5)
        r = space.alloc(4096)
        space.write_region(r, 0, b"\x01")
        space.close()
        m = orch.metrics(space.client_id)
        assert m.faults == 1 and m.frozen

    def test_double_unregister_harmless(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=5)
        space.close()
        orch.unregister_client(space.client_id)

    def test_unregister_wipes_all_client_ram(self):
        ram, _, orch = make_stack(window=2)
        space = ClientSpace(orch, ram, pid=5)
        marker = bytes([0xBE, 0xEF] * 32)
        r = space.alloc(6 * 4096)
        for i in range(6):
            space.write_region(r, i * 4096, marker)
        space.close()
        for buf in ram.buffers():
            assert marker not in bytes(buf.data)

    def test_fault_for_unknown_client_rejected(self):
        _, _, orch = make_stack()
        with pytest.raises(ProtocolError):
            orch.fault(ClientId(1, 0), 0x1000)


class TestFaultFlow:
    def test_first_touch_serves_zero_page_store_untouched(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=7)
        r = space.alloc(4096)
        assert space.read_region(r, 0, 4096) == bytes(4096)
        m = orch.metrics(space.client_id)
        assert m.first_touch_faults == 1
        assert orch.store.page_count(space.client_id) == 0

    def test_five_reads_w4_counts(self):
        # pages A..E with W=4: 5 faults, 1 eviction, 1 encrypt, 0 decrypts
        ram, _, orch = make_stack(window=4)
        space = ClientSpace(orch, ram, pid=7)
        r = space.alloc(5 * 4096)
        for i in range(5):
            space.read_region(r, i * 4096, 1)
        m = orch.metrics(space.client_id)
        assert m.faults == 5
        assert m.evictions == 1
        assert m.encrypt_ops == 1
        assert m.decrypt_ops == 0
        assert m.first_touch_faults == 5

    def test_refault_restores_pre_eviction_bytes_with_real_crypto(self):
        ram, pool, orch = make_stack(window=1, pool_workers=2)
        space = ClientSpace(orch, ram, pid=9)
        r = space.alloc(2 * 4096)
        payload = bytes(random.Random(3).randrange(256) for _ in range(4096))
        space.write_region(r, 0, payload)
        space.write_region(r, 4096, b"\x01")  # evicts page 0 (encrypted)
        stored = orch.store.lookup(space.client_id, r.base)
        assert stored is not None and stored != payload  # ciphertext, not plaintext
        assert space.read_region(r, 0, 4096) == payload  # decrypt roundtrip
        pool.shutdown()

    def test_fault_on_unregistered_vaddr_rejected(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=7)
        with pytest.raises(ProtocolError):
            orch.fault(space.client_id, 0x123000)

    def test_fault_on_resident_page_rejected(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=7)
        r = space.alloc(4096)
        space.read_region(r, 0, 1)
        with pytest.raises(ContractViolation):
            orch.fault(space.client_id, r.base)

    def test_metrics_identities_hold_on_random_run(self):
        ram, _, orch = make_stack(window=3)
        space = ClientSpace(orch, ram, pid=7)
        r = space.alloc(16 * 4096)
        rng = random.Random(1)
        for _ in range(500):
            page = rng.randrange(16)
            if rng.random() < 0.5:
                space.write_region(r, page * 4096 + rng.randrange(4000), bytes([rng.randrange(256)]))
            else:
                space.read_region(r, page * 4096 + rng.randrange(4000), 1)
            orch.metrics(space.client_id).check_identities()


class TestEviction:
    def test_eviction_leaves_ciphertext_not_plaintext(self):
        ram, pool, orch = make_stack(window=1, pool_workers=1)
        space = ClientSpace(orch, ram, pid=11)
        marker = bytes([0xCA, 0xFE] * 16)  # 32 bytes
        r = space.alloc(2 * 4096)
        space.write_region(r, 0, marker)
        space.write_region(r, 4096, b"\x00")  # force eviction of page 0
        found_plain = any(marker in bytes(b.data) for b in ram.buffers() if b.tag == "store_ciphertext")
        assert not found_plain
        assert orch.store.page_count(space.client_id) == 1
        pool.shutdown()

    def test_w1_evicts_on_every_fault(self):
        ram, _, orch = make_stack(window=1)
        space = ClientSpace(orch, ram, pid=11)
        r = space.alloc(8 * 4096)
        pages = [0, 1, 2, 3, 0, 1, 2, 3]
        for p in pages:
            space.read_region(r, p * 4096, 1)
        o_faults, o_evicts, _ = simulate_fifo(pages, 1)
        m = orch.metrics(space.client_id)
        assert m.faults == o_faults
        assert m.evictions == o_evicts

    def test_direct_evict_page_api(self):
        ram, _, orch = make_stack(window=4)
        space = ClientSpace(orch, ram, pid=11)
        r = space.alloc(4096)
        space.write_region(r, 0, b"\x42")
        orch.evict_page(space.client_id, r.base)
        assert space.resident_pages() == 0
        assert orch.store.page_count(space.client_id) == 1
        # refault brings it back
        assert space.read_region(r, 0, 1) == b"\x42"

    def test_evict_non_window_page_rejected(self):
        ram, _, orch = make_stack(window=4)
        space = ClientSpace(orch, ram, pid=11)
        space.alloc(4096)
        with pytest.raises(ContractViolation):
            orch.evict_page(space.client_id, 0x1000)


class TestCoherence:
    @pytest.mark.parametrize("window", [1, 4, 16])
    def test_final_memory_equals_flat_oracle(self, window):
        rng = random.Random(window * 7)
        for round_ in range(6):
            lines = ["alloc 0 32768"]  # 8 pages
            for _ in range(120):
                page = rng.randrange(8)
                off = page * 4096 + rng.randrange(4000)
                if rng.random() < 0.6:
                    data = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 9)))
                    lines.append(f"write 0 {off} {data.hex()}")
                else:
                    lines.append(f"read 0 {off} {rng.randrange(1, 9)}")
            trace = "\n".join(lines)

            ram, _, orch = make_stack(window=window)
            space = ClientSpace(orch, ram, pid=50)
            replay(space, parse_trace(trace))
            oracle = FlatMemory().run(trace).final_contents()

            regions = {r.region_id: r for r in space.regions()}
            assert regions.keys() == oracle.keys()
            for rid, expect in oracle.items():
                got = space.read_region(regions[rid], 0, len(expect))
                assert got == expect

    def test_coherence_with_real_crypto_and_evictions(self):
        rng = random.Random(77)
        lines = ["alloc 0 16384"]
        for _ in range(150):
            off = rng.randrange(4) * 4096 + rng.randrange(4090)
            if rng.random() < 0.7:
                data = bytes(rng.randrange(256) for _ in range(4))
                lines.append(f"write 0 {off} {data.hex()}")
            else:
                lines.append(f"read 0 {off} 4")
        trace = "\n".join(lines)
        ram, pool, orch = make_stack(window=1, pool_workers=2)
        space = ClientSpace(orch, ram, pid=51)
        replay(space, parse_trace(trace))
        oracle = FlatMemory().run(trace).final_contents()
        region = space.regions()[0]
        assert space.read_region(region, 0, 16384) == oracle[0]
        pool.shutdown()


class TestMetricsExport:
    def test_csv_shape(self):
        ram, _, orch = make_stack()
        space = ClientSpace(orch, ram, pid=60)
        r = space.alloc(4096)
        space.write_region(r, 0, b"\x01")
        csv = orch.metrics_csv()
        lines = csv.strip().splitlines()
        assert lines[0] == (
            "client,faults,first_touch,evictions,encrypts,decrypts,"
            "fault_ns_total,crypto_ns_total"
        )
        fields = lines[1].split(",")
        assert fields[0] == "60:0"
        assert fields[1] == "1"
