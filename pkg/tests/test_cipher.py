import random
from pathlib import Path

import numpy as np
import pytest

from pagecrypt import cipher
from pagecrypt.cipher import (
    BlockSeed,
    MasterKey,
    chacha20_block,
    crypt_page,
    page_keystream,
    parallel_crypt_page,
)
from pagecrypt.errors import ContractViolation

from reference_chacha import chacha20_block_ref, crypt_page_ref, seed_bytes_ref

VECTOR_FILE = Path(__file__).parent / "vectors" / "chacha_blocks.txt"


def rand_key(rng):
    return bytes(rng.randrange(256) for _ in range(32))


def rand_page(rng):
    return bytes(rng.randrange(256) for _ in range(4096))


class TestBlock:
    def test_frozen_vectors(self):
        for line in VECTOR_FILE.read_text().splitlines():
            key_hex, vaddr_hex, pid, idx, expect = line.split()
            seed = BlockSeed(int(vaddr_hex, 16), int(pid), int(idx))
            got = chacha20_block(bytes.fromhex(key_hex), seed)
            assert got.hex() == expect

    def test_zero_input_block_matches_reference(self):
        got = chacha20_block(b"\x00" * 32, BlockSeed(0, 0, 0))
        assert got == chacha20_block_ref(b"\x00" * 32, seed_bytes_ref(0, 0, 0))

    def test_against_reference_random(self):
        rng = random.Random(1)
        for _ in range(300):
            key = rand_key(rng)
            vaddr = rng.randrange(2**52) * 4096
            pid = rng.randrange(2**32)
            idx = rng.randrange(64)
            got = chacha20_block(key, BlockSeed(vaddr, pid, idx))
            assert got == chacha20_block_ref(key, seed_bytes_ref(vaddr, pid, idx))

    def test_deterministic(self):
        seed = BlockSeed(0x7000, 9, 3)
        assert chacha20_block(b"\x42" * 32, seed) == chacha20_block(b"\x42" * 32, seed)

    def test_block_index_changes_output(self):
        a = chacha20_block(b"\x00" * 32, BlockSeed(0, 0, 0))
        b = chacha20_block(b"\x00" * 32, BlockSeed(0, 0, 1))
        assert a != b

    def test_bad_block_index_rejected(self):
        with pytest.raises(ContractViolation):
            BlockSeed(0, 0, 64)
        with pytest.raises(ContractViolation):
            BlockSeed(0, 0, -1)

    def test_unaligned_vaddr_rejected(self):
        with pytest.raises(ContractViolation):
            BlockSeed(0x1001, 0, 0)

    def test_seed_serializes_to_16_bytes(self):
        s = BlockSeed(0x2000, 77, 5)
        raw = s.to_bytes()
        assert len(raw) == 16
        assert BlockSeed.from_bytes(raw) == s


class TestPageKeystream:
    def test_first_block_is_block_zero(self):
        key = b"\x05" * 32
        ks = page_keystream(key, 0x4000, 11)
        assert ks[:64] == chacha20_block(key, BlockSeed(0x4000, 11, 0))

    def test_lane_units_are_consecutive_block_pairs(self):
        key = b"\x06" * 32
        ks = page_keystream(key, 0x8000, 3)
        for i in (0, 7, 31):
            unit = ks[128 * i : 128 * (i + 1)]
            assert unit[:64] == chacha20_block(key, BlockSeed(0x8000, 3, 2 * i))
            assert unit[64:] == chacha20_block(key, BlockSeed(0x8000, 3, 2 * i + 1))

    def test_distinct_vaddrs_distinct_streams(self):
        k = b"\x01" * 32
        assert page_keystream(k, 0x1000, 42) != page_keystream(k, 0x2000, 42)

    def test_matches_reference(self):
        rng = random.Random(2)
        key = rand_key(rng)
        assert page_keystream(key, 0x3000, 5) == b"".join(
            chacha20_block_ref(key, seed_bytes_ref(0x3000, 5, i)) for i in range(64)
        )


class TestCryptPage:
    def test_involution_random_pages(self):
        rng = random.Random(3)
        for _ in range(50):
            key, page = rand_key(rng), rand_page(rng)
            vaddr = rng.randrange(2**40) * 4096
            pid = rng.randrange(2**32)
            assert crypt_page(key, vaddr, pid, crypt_page(key, vaddr, pid, page)) == page

    def test_zero_page_gives_keystream(self):
        key = b"\x09" * 32
        assert crypt_page(key, 0x5000, 8, bytes(4096)) == page_keystream(key, 0x5000, 8)

    def test_pid_separates_ciphertexts(self):
        rng = random.Random(4)
        key, page = rand_key(rng), rand_page(rng)
        assert crypt_page(key, 0x1000, 1, page) != crypt_page(key, 0x1000, 2, page)

    def test_matches_reference(self):
        rng = random.Random(5)
        key, page = rand_key(rng), rand_page(rng)
        assert crypt_page(key, 0x6000, 123, page) == crypt_page_ref(key, 0x6000, 123, page)

    def test_wrong_page_size_rejected(self):
        with pytest.raises(ContractViolation):
            crypt_page(b"\x00" * 32, 0, 0, b"short")


class TestParallelCryptPage:
    @pytest.mark.parametrize("lanes", [1, 7, 32, 64])
    def test_equals_sequential(self, lanes):
        rng = random.Random(100 + lanes)
        for _ in range(10):
            key, page = rand_key(rng), rand_page(rng)
            vaddr = rng.randrange(2**30) * 4096
            pid = rng.randrange(2**32)
            assert parallel_crypt_page(key, vaddr, pid, page, lanes) == crypt_page(
                key, vaddr, pid, page
            )

    def test_zero_lanes_rejected(self):
        with pytest.raises(ContractViolation):
            parallel_crypt_page(b"\x00" * 32, 0, 0, bytes(4096), 0)


class TestMasterKey:
    def test_generate_is_32_bytes_and_random(self):
        a, b = MasterKey.generate(), MasterKey.generate()
        assert len(a) == 32
        assert bytes(a.view()) != bytes(b.view())

    def test_destroy_zeroizes(self):
        k = MasterKey(b"\xAA" * 32)
        k.destroy()
        assert bytes(k.view()) == bytes(32)
        assert k.destroyed

    def test_wrong_size_rejected(self):
        with pytest.raises(ContractViolation):
            MasterKey(b"\x00" * 16)


class TestProperties:
    def test_keystream_injectivity_in_practice(self):
        # >= 10^4 distinct (vaddr, pid, block_index) triples, no block collision
        rng = random.Random(6)
        key = rand_key(rng)
        seen_triples = set()
        seen_blocks = set()
        while len(seen_triples) < 10_000:
            t = (rng.randrange(2**40) * 4096, rng.randrange(2**32), rng.randrange(64))
            if t in seen_triples:
                continue
            seen_triples.add(t)
        for vaddr, pid, idx in seen_triples:
            blk = cipher._keystream_words(key, vaddr, pid, np.array([idx], dtype=np.int64))
            digest = blk.tobytes()
            assert digest not in seen_blocks, "keystream collision"
            seen_blocks.add(digest)

    def test_numpy_and_numba_paths_agree(self):
        if cipher._chacha_numba is None:
            pytest.skip("numba kernel unavailable")
        rng = random.Random(7)
        for _ in range(20):
            key = rand_key(rng)
            kw = np.frombuffer(key, dtype="<u4")
            vaddr = rng.randrange(2**45) * 4096
            pid = rng.randrange(2**32)
            idx = np.arange(64, dtype=np.int64)
            out = np.empty(16 * 64, dtype=np.uint32)
            cipher._chacha_numba.keystream_words(
                kw, np.uint64(vaddr), np.uint32(pid), idx, out
            )
            fallback = cipher._keystream_numpy(kw, vaddr, pid, idx)
            assert np.array_equal(out, fallback)
