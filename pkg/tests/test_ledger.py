"""Chain mechanics: mempool, gas packing, mining, validation, replay."""

from __future__ import annotations

import random

import pytest

from caltrace.canonical import leading_zero_bits
from caltrace.clock import FixedClock
from caltrace.errors import (
    ChainIntegrityError,
    EmptyMempoolError,
    ForkRejectedError,
    InvalidBlockError,
    InvalidInputError,
    InvalidPowError,
    OversizedTransactionError,
    ReadOnlyCallError,
    UnknownCallError,
)
from caltrace.hierarchy import HierarchySpec, bundle_calls, export_bundle, generate_hierarchy
from caltrace.identity import generate_keypair
from caltrace.ledger import (
    Call,
    Ledger,
    LedgerConfig,
    block_hash_of,
    load_ledger,
    tx_id_of,
    validate_chain_file,
)

from conftest import T0

SENDER = "ab" * 20
NMI_SEED = b"ledger-tests:nmi-seed-0000000000"


def make_ledger(tmp_path, difficulty=0, config=None):
    clock = FixedClock(T0)
    nmi = generate_keypair(NMI_SEED)
    if config is None:
        config = LedgerConfig(difficulty_bits=difficulty)
    led = Ledger(config, clock=clock, path=tmp_path / "chain.ndjson", nmi_keypair=nmi)
    return led, nmi, clock


def populate(led, nmi, clock, n=4, levels=2, seed=7):
    """Commit a small generated hierarchy through the transaction pipeline."""
    spec = HierarchySpec(n_devices=n, levels=levels, n_orgs=2, seed=seed)
    built = generate_hierarchy(spec, nmi_keypair=nmi, clock=clock)
    for fn, args in bundle_calls(export_bundle(built)):
        led.submit_transaction(Call(fn, args), SENDER)
    while led.mempool:
        led.mine_pending()
    return built


class TestGenesis:
    def test_fresh_chain_shape(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        assert led.height == 1
        assert led.head.index == 0
        assert led.head.prev_hash == "0" * 64
        assert led.head.config_hash == led.config_hash
        assert led.validate_chain() == (True, None)
        assert len((tmp_path / "chain.ndjson").read_bytes().splitlines()) == 2

    def test_root_org_queryable_at_genesis(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        assert led.read_state("getOrgName", {"org_id": "NPL"}) == "National Physical Laboratory"

    def test_in_memory_ledger_validates(self):
        led = Ledger(LedgerConfig(difficulty_bits=0), clock=FixedClock(T0),
                     nmi_keypair=generate_keypair(NMI_SEED))
        assert led.path is None
        assert led.validate_chain() == (True, None)


class TestSubmission:
    def test_read_call_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        with pytest.raises(ReadOnlyCallError):
            led.submit_transaction(Call("traceCalRead", {"device_id": "d"}), SENDER)

    def test_unknown_call_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        with pytest.raises(UnknownCallError):
            led.submit_transaction(Call("mintTokens", {}), SENDER)

    def test_bad_sender_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        for sender in ("", "0x12", "Z" * 40, "ab" * 21):
            with pytest.raises(InvalidInputError):
                led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), sender)

    def test_oversized_transaction_rejected(self, tmp_path):
        config = LedgerConfig(difficulty_bits=0, block_gas_limit=150_000)
        led, _, _ = make_ledger(tmp_path, config=config)
        with pytest.raises(OversizedTransactionError):
            led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        # at exactly the limit the call is admissible
        led.submit_transaction(
            Call("revokeReport", {"report_id": "r", "revoker_org_id": "NPL"}), SENDER
        )

    def test_tx_ids_are_distinct_and_deterministic(self):
        a = tx_id_of(SENDER, "traceCalWrite", {"device_id": "d"}, 0)
        b = tx_id_of(SENDER, "traceCalWrite", {"device_id": "d"}, 1)
        assert a != b and len(a) == 64
        assert a == tx_id_of(SENDER, "traceCalWrite", {"device_id": "d"}, 0)


class TestMining:
    def test_pipeline_commits_hierarchy(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        built = populate(led, nmi, clock)
        for block in led.blocks[1:]:
            assert all(tx.status == "ok" for tx in block.transactions)
        leaf = built.leaves[0]
        assert led.read_state("traceCalRead", {"device_id": leaf})["device_id"] == built.root_device
        assert led.validate_chain() == (True, None)

    def test_empty_mempool(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        with pytest.raises(EmptyMempoolError):
            led.assemble_block()
        with pytest.raises(EmptyMempoolError):
            led.mine_pending()

    def test_gas_packing_forty_writes_per_block(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        built = populate(led, nmi, clock)
        device = built.leaves[0]
        for _ in range(41):
            led.submit_transaction(Call("traceCalWrite", {"device_id": device}), SENDER)
        first = led.mine_pending()
        assert len(first.transactions) == 40
        assert first.gas_used == led.config.block_gas_limit
        assert len(led.mempool) == 1
        second = led.mine_pending()
        assert len(second.transactions) == 1
        assert second.index == first.index + 1

    def test_failed_transaction_pays_gas_and_changes_nothing(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        digest = led.state_digest()
        led.submit_transaction(Call("traceCalWrite", {"device_id": "ghost"}), SENDER)
        block = led.mine_pending()
        tx = block.transactions[0]
        assert tx.status == "failed:not-found"
        assert tx.gas_used == 200_000
        assert block.gas_used == 200_000
        assert led.state_digest() == digest
        assert led.validate_chain() == (True, None)

    def test_arrival_order_preserved(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        for name in ("a", "b", "c"):
            led.submit_transaction(Call("traceCalWrite", {"device_id": name}), SENDER)
        block = led.mine_pending()
        assert [t.call.args["device_id"] for t in block.transactions] == ["a", "b", "c"]
        seqs = [t.arrival_seq for t in block.transactions]
        assert seqs == sorted(seqs)

    def test_difficulty_zero_takes_one_attempt(self, tmp_path):
        led, _, _ = make_ledger(tmp_path, difficulty=0)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        led.mine_pending()
        assert led.last_mining_attempts == 1

    def test_mined_hash_meets_difficulty(self, tmp_path):
        led, _, _ = make_ledger(tmp_path, difficulty=10)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        block = led.mine_pending()
        assert leading_zero_bits(block.block_hash) >= 10

    def test_attempts_scale_with_difficulty(self, tmp_path):
        """Mining work doubles per difficulty bit; 3 extra bits is ~8x."""
        totals = {}
        for bits in (3, 6):
            led, _, _ = make_ledger(tmp_path / f"d{bits}", difficulty=bits)
            attempts = 0
            for _ in range(80):
                led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
                led.mine_pending()
                attempts += led.last_mining_attempts
            totals[bits] = attempts
        ratio = totals[6] / totals[3]
        assert 2.5 < ratio < 24.0


class TestAppendChecks:
    def test_stale_index_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        block = led.mine_block(led.assemble_block())
        led.append_block(block)
        with pytest.raises(ForkRejectedError):
            led.append_block(block)

    def test_wrong_prev_hash_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        block = led.assemble_block()
        block.prev_hash = "1" * 64
        block = led.mine_block(block)
        with pytest.raises(ForkRejectedError):
            led.append_block(block)

    def test_tampered_gas_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        block = led.mine_block(led.assemble_block())
        block.transactions[0].gas_used += 1
        with pytest.raises(InvalidBlockError):
            led.append_block(block)

    def test_wrong_difficulty_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        block = led.mine_block(led.assemble_block())
        block.difficulty_bits += 1
        with pytest.raises(InvalidBlockError):
            led.append_block(block)

    def test_unmined_block_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path, difficulty=12)
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        block = led.assemble_block()
        obj = block.to_json()
        for nonce in range(10_000):
            obj["nonce"] = nonce
            digest = block_hash_of(obj)
            if leading_zero_bits(digest) < 12:
                block.nonce = nonce
                block.block_hash = digest
                break
        with pytest.raises(InvalidPowError):
            led.append_block(block)


class TestFileValidation:
    def _chain_with_blocks(self, tmp_path, blocks=4):
        led, nmi, clock = make_ledger(tmp_path)
        populate(led, nmi, clock)
        for i in range(blocks):
            led.submit_transaction(Call("traceCalWrite", {"device_id": f"dev-{i}"}), SENDER)
            led.mine_pending()
        return led

    def test_intact_file_validates(self, tmp_path):
        led = self._chain_with_blocks(tmp_path)
        assert validate_chain_file(led.path) == (True, None)

    def test_random_byte_flips_detected(self, tmp_path):
        led = self._chain_with_blocks(tmp_path)
        original = led.path.read_bytes()
        rng = random.Random(42)
        for _ in range(30):
            offset = rng.randrange(len(original))
            mask = rng.randrange(1, 256)
            mutated = bytearray(original)
            mutated[offset] ^= mask
            led.path.write_bytes(bytes(mutated))
            ok, bad = validate_chain_file(led.path)
            assert not ok, f"flip at {offset} went unnoticed"
            assert bad is not None
        led.path.write_bytes(original)
        assert validate_chain_file(led.path) == (True, None)

    def test_header_tamper_reported_at_genesis(self, tmp_path):
        led = self._chain_with_blocks(tmp_path)
        lines = led.path.read_bytes().split(b"\n")
        lines[0] = lines[0].replace(b"National", b"Nationa1")
        led.path.write_bytes(b"\n".join(lines))
        assert validate_chain_file(led.path) == (False, 0)

    def test_truncated_tail_detected(self, tmp_path):
        led = self._chain_with_blocks(tmp_path)
        data = led.path.read_bytes()
        led.path.write_bytes(data[:-1])  # drop the final newline
        ok, bad = validate_chain_file(led.path)
        assert not ok and bad == led.height - 1

    def test_dropped_block_detected(self, tmp_path):
        led = self._chain_with_blocks(tmp_path)
        lines = led.path.read_bytes().split(b"\n")
        del lines[3]
        led.path.write_bytes(b"\n".join(lines))
        ok, bad = validate_chain_file(led.path)
        assert not ok and bad == 2

    def test_missing_file_invalid(self, tmp_path):
        assert validate_chain_file(tmp_path / "nope.ndjson") == (False, 0)


class TestReplay:
    def test_round_trip_reproduces_state(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        built = populate(led, nmi, clock)
        led.submit_transaction(
            Call("traceCalWrite", {"device_id": built.leaves[0]}), SENDER
        )
        led.mine_pending()

        again = load_ledger(led.path, clock=FixedClock(T0))
        assert again.height == led.height
        assert again.head.block_hash == led.head.block_hash
        assert again.state_digest() == led.state_digest()
        assert again.config == led.config

    def test_reloaded_ledger_can_extend_chain(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        built = populate(led, nmi, clock)
        again = load_ledger(led.path, clock=FixedClock(T0))
        again.submit_transaction(
            Call("traceCalWrite", {"device_id": built.root_device}), SENDER
        )
        block = again.mine_pending()
        assert block.transactions[0].status == "ok"
        assert validate_chain_file(again.path) == (True, None)

    def test_corrupt_file_refuses_to_load(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        populate(led, nmi, clock)
        data = bytearray(led.path.read_bytes())
        data[len(data) // 2] ^= 0x10
        led.path.write_bytes(bytes(data))
        with pytest.raises(ChainIntegrityError):
            load_ledger(led.path, clock=FixedClock(T0))

    def test_mempool_sidecar_removed_when_drained(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        sidecar = led.path.with_name(led.path.name + ".mempool")
        led.submit_transaction(Call("traceCalWrite", {"device_id": "d"}), SENDER)
        assert sidecar.exists()
        led.mine_pending()
        assert not sidecar.exists()

    def test_mempool_survives_reload(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        built = populate(led, nmi, clock)
        led.submit_transaction(
            Call("traceCalWrite", {"device_id": built.root_device}), SENDER
        )
        assert len(led.mempool) == 1

        again = load_ledger(led.path, clock=FixedClock(T0))
        assert len(again.mempool) == 1
        block = again.mine_pending()
        assert block.transactions[0].status == "ok"


class TestReads:
    def test_reads_touch_neither_state_nor_file(self, tmp_path):
        led, nmi, clock = make_ledger(tmp_path)
        built = populate(led, nmi, clock)
        file_bytes = led.path.read_bytes()
        digest = led.state_digest()
        for _ in range(100):
            led.read_state("traceCalRead", {"device_id": built.leaves[0]})
            led.read_state("traceCalRead", {"device_id": "ghost"})
            led.read_state("getOrgName", {"org_id": "NPL"})
        assert led.state_digest() == digest
        assert led.path.read_bytes() == file_bytes

    def test_unknown_read_rejected(self, tmp_path):
        led, _, _ = make_ledger(tmp_path)
        with pytest.raises(UnknownCallError):
            led.read_state("traceCalWrite", {"device_id": "d"})


class TestConfig:
    def test_round_trip(self):
        config = LedgerConfig(difficulty_bits=8, signature_checks=False, strict_alg1=True)
        assert LedgerConfig.from_json(config.to_json()) == config

    def test_bad_values_rejected(self):
        with pytest.raises(InvalidInputError):
            LedgerConfig(difficulty_bits=-1)
        with pytest.raises(InvalidInputError):
            LedgerConfig(difficulty_bits=256)
        with pytest.raises(InvalidInputError):
            LedgerConfig(block_gas_limit=0)
        with pytest.raises(InvalidInputError):
            LedgerConfig(target_block_interval=0)

    def test_gas_schedule_must_cover_write_functions(self):
        with pytest.raises(InvalidInputError):
            LedgerConfig(gas_schedule={"traceCalWrite": 1})
        with pytest.raises(InvalidInputError):
            LedgerConfig(gas_schedule={**LedgerConfig().gas_schedule, "extra": 5})
