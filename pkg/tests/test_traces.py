from __future__ import annotations

import json
import random

import pytest

from ragmt.traces import (
    IdiomSpan,
    Segment,
    TargetToken,
    Trace,
    TraceError,
    align_idiom_span,
    attention_allocation,
    read_traces,
    span_confidence,
    token_role,
    write_traces,
)

LABEL_SHARES = {
    "I": {"idiom": 0.7, "context": 0.2, "other": 0.1},
    "C": {"idiom": 0.2, "context": 0.7, "other": 0.1},
    "O": {"idiom": 0.1, "context": 0.2, "other": 0.7},
}


def make_trace(labels: str = "IIC", entropies=None, shares=None) -> Trace:
    tokens = []
    for index, label in enumerate(labels):
        share = dict(shares[index]) if shares else dict(LABEL_SHARES[label])
        entropy = entropies[index] if entropies else 0.5
        tokens.append(TargetToken(token=f"w{index}", entropy_nats=entropy, attn_share=share))
    return Trace(
        instance_id="fi-en-0001",
        condition="opposite",
        model_id="test-model",
        input_segments=[
            Segment("other", 0, 4),
            Segment("idiom", 4, 6),
            Segment("context", 6, 9),
        ],
        target_tokens=tokens,
    )


class TestAttentionAllocation:
    def test_constant_shares(self):
        shares = [{"idiom": 0.3, "context": 0.6, "other": 0.1}] * 3
        allocation = attention_allocation(make_trace("XXX", shares=shares))
        assert allocation.idiom_share == pytest.approx(0.3)
        assert allocation.context_share == pytest.approx(0.6)
        assert allocation.other_share == pytest.approx(0.1)
        assert allocation.token_count == 3

    def test_all_mass_on_other(self):
        shares = [{"idiom": 0.0, "context": 0.0, "other": 1.0}] * 2
        allocation = attention_allocation(make_trace("XX", shares=shares))
        assert (allocation.idiom_share, allocation.context_share, allocation.other_share) == (
            0.0,
            0.0,
            1.0,
        )

    def test_mean_of_two_tokens(self):
        shares = [
            {"idiom": 1.0, "context": 0.0, "other": 0.0},
            {"idiom": 0.0, "context": 1.0, "other": 0.0},
        ]
        allocation = attention_allocation(make_trace("XX", shares=shares))
        assert allocation.idiom_share == pytest.approx(0.5)
        assert allocation.context_share == pytest.approx(0.5)
        assert allocation.other_share == 0.0

    def test_order_invariance(self):
        shares = [LABEL_SHARES[label] for label in "ICOIC"]
        base = attention_allocation(make_trace("ICOIC", shares=shares))
        rng = random.Random(3)
        for _ in range(5):
            shuffled = list(shares)
            rng.shuffle(shuffled)
            other = attention_allocation(make_trace("XXXXX", shares=shuffled))
            assert other.idiom_share == pytest.approx(base.idiom_share)
            assert other.context_share == pytest.approx(base.context_share)

    def test_empty_target_errors(self):
        with pytest.raises(TraceError, match="no target tokens"):
            attention_allocation(make_trace(""))


class TestAlignIdiomSpan:
    def test_longest_run(self):
        span = align_idiom_span(make_trace("IICI"))
        assert (span.start, span.end) == (0, 2)

    def test_tie_breaks_to_earliest(self):
        span = align_idiom_span(make_trace("ICI"))
        assert (span.start, span.end) == (0, 1)

    def test_no_idiom_tokens_flagged_empty(self):
        span = align_idiom_span(make_trace("CCC"))
        assert span.empty

    def test_run_at_end(self):
        span = align_idiom_span(make_trace("CIII"))
        assert (span.start, span.end) == (1, 4)

    def test_maximality(self):
        labels = "ICIICCIIIOC"
        span = align_idiom_span(make_trace(labels))
        assert (span.start, span.end) == (6, 9)
        run = 0
        longest = 0
        for label in labels:
            run = run + 1 if label == "I" else 0
            longest = max(longest, run)
        assert len(span) == longest

    def test_argmax_tie_prefers_non_idiom(self):
        tie = {"idiom": 0.5, "context": 0.5, "other": 0.0}
        token = TargetToken("w", 0.1, tie)
        assert token_role(token) == "context"
        three_way = TargetToken("w", 0.1, {"idiom": 1 / 3, "context": 1 / 3, "other": 1 / 3})
        assert token_role(three_way) == "other"


class TestSpanConfidence:
    def test_mean_entropy(self):
        trace = make_trace("II", entropies=[0.2, 0.4])
        report = span_confidence(trace, IdiomSpan(0, 2))
        assert report.mean_entropy == pytest.approx(0.3)

    def test_single_token(self):
        trace = make_trace("I", entropies=[0.7])
        report = span_confidence(trace, IdiomSpan(0, 1))
        assert report.mean_entropy == pytest.approx(0.7)

    def test_empty_span_errors(self):
        with pytest.raises(TraceError, match="empty idiom span"):
            span_confidence(make_trace("CC"), IdiomSpan(0, 0))

    def test_span_outside_target_errors(self):
        with pytest.raises(TraceError, match="outside"):
            span_confidence(make_trace("II"), IdiomSpan(0, 5))

    def test_carries_paired_fidelity(self):
        report = span_confidence(make_trace("I"), IdiomSpan(0, 1), fidelity=2.0)
        assert report.fidelity == 2.0


class TestValidationAndIo:
    def test_roundtrip(self, tmp_path):
        traces = [make_trace("IIC"), make_trace("CIO")]
        path = tmp_path / "traces.jsonl"
        write_traces(traces, path)
        loaded = read_traces(path)
        assert [t.to_record() for t in loaded] == [t.to_record() for t in traces]

    def test_bad_share_sum_rejected_with_line_number(self, tmp_path):
        trace = make_trace("I")
        record = trace.to_record()
        record["target_tokens"][0]["attn_share"]["idiom"] = 0.9
        path = tmp_path / "traces.jsonl"
        path.write_text(
            json.dumps(make_trace("I").to_record())
            + "\n"
            + json.dumps(record)
            + "\n"
        )
        with pytest.raises(TraceError, match=":2:"):
            read_traces(path)

    def test_wrong_schema_version_rejected(self, tmp_path):
        record = make_trace("I").to_record()
        record["schema"] = "trace/v0"
        path = tmp_path / "traces.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(TraceError, match="schema"):
            read_traces(path)

    def test_segment_gap_rejected(self):
        trace = make_trace("I")
        trace.input_segments = [Segment("other", 0, 2), Segment("idiom", 3, 4)]
        with pytest.raises(TraceError, match="gap"):
            trace.validate()

    def test_negative_entropy_rejected(self):
        trace = make_trace("I", entropies=[-0.1])
        with pytest.raises(TraceError, match="entropy"):
            trace.validate()
