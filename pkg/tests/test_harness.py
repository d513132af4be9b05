"""Simulated-pipe transfers and the benchmark driver."""

import random

import pytest

from revquic import harness
from revquic.harness import (
    PipeConfig,
    _Pipe,
    _PreparedBatch,
    _bootstrap_median_ci,
    bench_batch,
    bench_pair,
    run_transfer,
    sweep_buffered_lengths,
)
from revquic.mode import WireMode


class TestPipe:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            PipeConfig(loss_prob=1.5)
        with pytest.raises(ValueError):
            PipeConfig(reorder_prob=-0.1)
        with pytest.raises(ValueError):
            PipeConfig(reorder_depth=0)

    def test_perfect_pipe_preserves_order(self):
        pipe = _Pipe(PipeConfig(), random.Random(0))
        grams = [bytes([i]) for i in range(20)]
        got = []
        for g in grams:
            pipe.send(g)
            got += pipe.ready()
        assert got == grams

    def test_reordered_packet_held_until_flush(self):
        pipe = _Pipe(PipeConfig(reorder_prob=1.0, reorder_depth=3), random.Random(0))
        pipe.send(b"a")
        assert pipe.ready() == []
        assert len(pipe) == 1
        assert pipe.ready(flush=True) == [b"a"]

    def test_loss_drops(self):
        pipe = _Pipe(PipeConfig(loss_prob=1.0), random.Random(0))
        for i in range(10):
            pipe.send(bytes([i]))
        assert pipe.ready(flush=True) == []

    def test_duplicate_delivers_twice(self):
        pipe = _Pipe(PipeConfig(duplicate_prob=1.0), random.Random(0))
        pipe.send(b"a")
        assert pipe.ready(flush=True) == [b"a", b"a"]


class TestRunTransfer:
    def test_perfect_pipe_reverso(self):
        r = run_transfer(WireMode.REVERSO, 512 * 1024)
        assert r.bytes_transferred == 512 * 1024
        assert r.ordered_ratio == 1.0
        assert r.payload_bytes_copied == 0
        assert r.payload_bytes_zero_copy == 512 * 1024
        assert r.decrypt_failures == 0

    def test_perfect_pipe_baseline_copy_floor(self):
        r = run_transfer(WireMode.BASELINE, 512 * 1024)
        assert r.payload_bytes_copied >= 512 * 1024
        assert r.payload_bytes_zero_copy == 0
        assert r.ordered_ratio == 1.0

    def test_deterministic_given_seed(self):
        cfg = PipeConfig(seed=123, reorder_prob=0.1)
        a = run_transfer(WireMode.REVERSO, 256 * 1024, pipe=cfg)
        b = run_transfer(WireMode.REVERSO, 256 * 1024, pipe=PipeConfig(seed=123, reorder_prob=0.1))
        for field in (
            "bytes_transferred",
            "payload_bytes_copied",
            "payload_bytes_zero_copy",
            "ordered_ratio",
            "decrypt_failures",
            "retransmissions",
        ):
            assert getattr(a, field) == getattr(b, field), field

    def test_reordering_degrades_ordered_ratio_monotonically(self):
        ratios = []
        for p in (0.0, 0.01, 0.1):
            r = run_transfer(
                WireMode.REVERSO, 256 * 1024, pipe=PipeConfig(seed=7, reorder_prob=p)
            )
            ratios.append(r.ordered_ratio)
            # reorder-only pipe: every byte arrives exactly once, so the
            # copied bytes are exactly the ones that missed the tail
            assert (
                r.payload_bytes_copied
                == r.bytes_transferred - r.payload_bytes_zero_copy
            )
        assert ratios[0] == 1.0
        assert ratios[0] >= ratios[1] >= ratios[2]
        assert ratios[2] < 1.0

    def test_ordered_ratio_one_iff_no_copies(self):
        clean = run_transfer(WireMode.REVERSO, 128 * 1024, pipe=PipeConfig(seed=3))
        assert clean.ordered_ratio == 1.0 and clean.payload_bytes_copied == 0
        messy = run_transfer(
            WireMode.REVERSO, 128 * 1024, pipe=PipeConfig(seed=3, reorder_prob=0.2)
        )
        assert messy.ordered_ratio < 1.0 and messy.payload_bytes_copied > 0

    def test_loss_recovery_both_modes(self):
        for mode in WireMode:
            r = run_transfer(mode, 128 * 1024, pipe=PipeConfig(seed=11, loss_prob=0.2))
            assert r.bytes_transferred == 128 * 1024
            assert r.retransmissions > 0

    def test_duplicates_are_harmless(self):
        r = run_transfer(
            WireMode.REVERSO, 128 * 1024, pipe=PipeConfig(seed=13, duplicate_prob=0.3)
        )
        assert r.bytes_transferred == 128 * 1024

    def test_multi_stream_split(self):
        r = run_transfer(WireMode.REVERSO, 100_001, n_streams=3)
        assert r.bytes_transferred == 100_001
        assert r.payload_bytes_copied == 0  # perfect pipe keeps every tail hot

    def test_multi_stream_with_reordering(self):
        r = run_transfer(
            WireMode.BASELINE,
            100_000,
            n_streams=2,
            pipe=PipeConfig(seed=17, reorder_prob=0.1, loss_prob=0.02),
        )
        assert r.bytes_transferred == 100_000

    def test_needs_a_stream(self):
        with pytest.raises(ValueError):
            run_transfer(WireMode.REVERSO, 1024, n_streams=0)

    def test_report_invariants(self):
        r = run_transfer(
            WireMode.REVERSO,
            64 * 1024,
            pipe=PipeConfig(seed=19, reorder_prob=0.15, duplicate_prob=0.1),
        )
        assert 0.0 <= r.ordered_ratio <= 1.0
        assert r.payload_bytes_zero_copy + r.payload_bytes_copied >= r.bytes_transferred


class TestBench:
    def test_prepared_batch_replays_cleanly(self):
        prep = _PreparedBatch(WireMode.REVERSO, 3)
        for _ in range(2):
            conn, appbuf = prep.fresh_receiver()
            prep.restore()
            elapsed = prep.run_once(conn, appbuf)
            assert elapsed > 0
            m = conn.metrics()
            assert m.decrypt_failures == 0
            assert m.payload_bytes_zero_copy > 0
            assert m.payload_bytes_copied == 0
            # streams drained after the clock stopped
            assert conn.readable() == []

    def test_batch_result_shape(self):
        res = bench_batch(WireMode.REVERSO, 2, repetitions=6, scenario="smoke")
        assert res.mode == "reverso"
        assert res.scenario == "smoke"
        assert res.reps == 6 and len(res.times_ns) == 6
        assert 0 < res.bytes_per_rep <= 2 * 1350
        assert res.p5_ns <= res.median_ns <= res.p95_ns
        assert res.throughput_mbps > 0
        assert res.copied_bytes == 0 and res.zero_copy_bytes > 0
        assert 0 <= res.calibration_ns < res.median_ns

    def test_baseline_batch_counts_copies(self):
        res = bench_batch(WireMode.BASELINE, 2, repetitions=4)
        assert res.copied_bytes > 0 and res.zero_copy_bytes == 0

    def test_datagram_size_is_fixed(self):
        with pytest.raises(ValueError):
            bench_batch(WireMode.REVERSO, 2, datagram_size=1200, repetitions=2)

    def test_bench_pair_interleaves_modes(self):
        base, rev = bench_pair(2, repetitions=3, scenario="pairsmoke")
        assert (base.mode, rev.mode) == ("baseline", "reverso")
        assert base.scenario == rev.scenario == "pairsmoke"
        # header geometry differs slightly between modes; sizes stay close
        assert abs(base.bytes_per_rep - rev.bytes_per_rep) < 32
        assert len(base.times_ns) == len(rev.times_ns) == 3

    def test_sweep_lengths_floor_to_packets(self):
        results = sweep_buffered_lengths(WireMode.REVERSO, lengths=(1350, 13500), repetitions=2)
        assert [r.scenario for r in results] == ["sweep-1350", "sweep-13500"]
        assert results[1].bytes_per_rep == 10 * results[0].bytes_per_rep

    def test_bootstrap_ci_deterministic(self):
        times = [random.Random(1).randrange(1000, 2000) for _ in range(50)]
        assert _bootstrap_median_ci(times) == _bootstrap_median_ci(times)
        lo, hi = _bootstrap_median_ci([500] * 20)
        assert lo == hi == 500
