import io
import json

import pytest

from tcfprobe.corpus import UnknownEntryError
from tcfprobe.reward import (
    MalformedRequestError,
    RewardRequest,
    discrete_reward,
    locate_time_step,
    request_from_dict,
    score,
    score_batch,
    serve,
    smooth_penalty,
    smooth_reward,
)

from _factories import make_corpus


# ---------------------------------------------------------------------------
# locate_time_step
# ---------------------------------------------------------------------------

def test_locate_exact_name(mini_corpus):
    assert locate_time_step(mini_corpus, "linkin-park-release", "Meteora") == 1


def test_locate_normalized_variant(mini_corpus):
    assert locate_time_step(mini_corpus, "linkin-park-release", "the meteora.") == 1


def test_locate_off_corpus(mini_corpus):
    assert locate_time_step(mini_corpus, "linkin-park-release", "nevermind") is None


def test_locate_unknown_entry(mini_corpus):
    with pytest.raises(UnknownEntryError):
        locate_time_step(mini_corpus, "nope", "Meteora")


# ---------------------------------------------------------------------------
# discrete rewards
# ---------------------------------------------------------------------------

def test_k1_correct_weights():
    result = discrete_reward(RewardRequest(id="1", task="k1", generated="Meteora", gold="meteora"))
    assert result.temporal_component == 1.0
    assert result.consistency_component is None
    assert result.total == pytest.approx(0.34, abs=1e-12)
    assert result.matched


def test_k2_correct_weights():
    result = discrete_reward(RewardRequest(id="2", task="k2", generated="true", gold="True"))
    assert result.consistency_component == 1.0
    assert result.total == pytest.approx(0.66, abs=1e-12)


def test_paired_both_correct_total_one():
    result = discrete_reward(
        RewardRequest(
            id="3", task="both", generated="Froyo", gold="froyo",
            k2_generated="false", k2_gold="false",
        )
    )
    assert result.total == pytest.approx(1.0, abs=1e-12)
    assert result.matched


def test_wrong_answers_zero():
    result = discrete_reward(RewardRequest(id="4", task="k1", generated="Honeycomb", gold="Froyo"))
    assert result.total == 0.0
    assert not result.matched


def test_alpha_out_of_range():
    with pytest.raises(MalformedRequestError):
        discrete_reward(RewardRequest(id="5", task="k1", generated="a", gold="a", alpha=1.5))


def test_k2_requires_boolean_values():
    with pytest.raises(MalformedRequestError):
        discrete_reward(RewardRequest(id="6", task="k2", generated="yes", gold="true"))


def test_paired_requires_k2_fields():
    with pytest.raises(MalformedRequestError):
        discrete_reward(RewardRequest(id="7", task="both", generated="a", gold="a"))


def test_argmax_invariant_to_alpha():
    candidates = ["Eclair", "Froyo", "Honeycomb"]
    rankings = []
    for alpha in (0.0, 0.25, 0.5, 0.66, 0.9):
        totals = [
            discrete_reward(
                RewardRequest(id=str(i), task="k1", generated=c, gold="Froyo", alpha=alpha)
            ).total
            for i, c in enumerate(candidates)
        ]
        rankings.append(max(range(len(candidates)), key=lambda i: totals[i]))
    assert rankings == [1] * len(rankings)


# ---------------------------------------------------------------------------
# smooth rewards
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def line_corpus():
    # one entry, timeline indices 0..10 named "item 0 <t>"
    return make_corpus(n_entries=1, timeline_len=11)


def smooth_req(generated, gold_index, **kwargs):
    return RewardRequest(
        id="s",
        task="k1",
        mode="smooth",
        generated=generated,
        gold=f"item 0 {gold_index}",
        sr_id="sr-000",
        gold_time_index=gold_index,
        timeline_end=10,
        **kwargs,
    )


def test_smooth_overshoot_case(line_corpus):
    # distance 3 over remaining span 8
    result = smooth_reward(smooth_req("item 0 5", 2), line_corpus)
    assert result.temporal_component == pytest.approx(-0.375, abs=1e-12)
    assert result.t_og == 5


def test_smooth_undershoot_case(line_corpus):
    # distance 1 over the 2 steps below the gold
    result = smooth_reward(smooth_req("item 0 1", 2), line_corpus)
    assert result.temporal_component == pytest.approx(-0.5, abs=1e-12)


def test_smooth_exact_match(line_corpus):
    result = smooth_reward(smooth_req("The item 0 2.", 2), line_corpus)
    assert result.temporal_component == 1.0
    assert result.total == 1.0
    assert result.matched


def test_smooth_off_corpus_maximal_penalty(line_corpus):
    result = smooth_reward(smooth_req("some unheard of thing", 2), line_corpus)
    assert result.temporal_component == -1.0
    assert result.t_og is None


def test_smooth_k2_is_discrete(line_corpus):
    result = smooth_reward(
        RewardRequest(id="k2", task="k2", mode="smooth", generated="true", gold="true"),
        line_corpus,
    )
    assert result.consistency_component == 1.0
    assert result.total == 1.0


def test_smooth_penalty_degenerate_denominator():
    assert smooth_penalty(5, 6, 5) == 1.0


def test_smooth_penalty_plain_ratios():
    assert smooth_penalty(0, 3, 4) == pytest.approx(0.75)
    assert smooth_penalty(4, 1, 4) == pytest.approx(0.75)


def test_smooth_penalty_bounded():
    for t_n in range(1, 17):
        for t_ol in range(t_n + 1):
            for t_og in range(t_n + 1):
                if t_og == t_ol:
                    continue
                assert 0 < smooth_penalty(t_ol, t_og, t_n) <= 1.0


def test_smooth_gold_index_bounds(line_corpus):
    req = RewardRequest(
        id="bad", task="k1", mode="smooth", generated="zzz", gold="item 0 2",
        sr_id="sr-000", gold_time_index=12, timeline_end=10,
    )
    with pytest.raises(MalformedRequestError):
        smooth_reward(req, line_corpus)


# ---------------------------------------------------------------------------
# batch and line protocol
# ---------------------------------------------------------------------------

def test_batch_empty():
    assert score_batch([]) == []


def test_batch_mixed_modes_order_preserved(line_corpus):
    requests = [
        RewardRequest(id="a", task="k1", generated="x", gold="x"),
        smooth_req("item 0 5", 2),
        RewardRequest(id="c", task="k2", generated="false", gold="false"),
    ]
    scores = score_batch(requests, line_corpus)
    assert [s.id for s in scores] == ["a", "s", "c"]
    reversed_scores = score_batch(list(reversed(requests)), line_corpus)
    assert [s.id for s in reversed_scores] == ["c", "s", "a"]
    assert reversed_scores[0] == scores[2]


def test_batch_reports_first_malformed_id():
    requests = [
        RewardRequest(id="ok", task="k1", generated="x", gold="x"),
        RewardRequest(id="boom", task="k1", generated="x", gold="x", alpha=9.0),
    ]
    with pytest.raises(MalformedRequestError) as err:
        score_batch(requests)
    assert err.value.request_id == "boom"


def test_request_from_dict_round_trip():
    req = request_from_dict({"id": "r1", "task": "k2", "generated": "true", "gold": "false"})
    assert score(req).total == 0.0
    with pytest.raises(MalformedRequestError):
        request_from_dict({"task": "k1"})
    with pytest.raises(MalformedRequestError):
        request_from_dict({"id": "r2", "bogus": 1})


def test_serve_three_valid_lines(line_corpus):
    lines = [
        json.dumps({"id": "1", "task": "k1", "generated": "a", "gold": "a"}),
        json.dumps({"id": "2", "task": "k2", "generated": "true", "gold": "true"}),
        json.dumps(
            {
                "id": "3", "task": "k1", "mode": "smooth", "generated": "item 0 5",
                "gold": "item 0 2", "sr_id": "sr-000", "gold_time_index": 2, "timeline_end": 10,
            }
        ),
    ]
    out = io.StringIO()
    code = serve(io.StringIO("\n".join(lines) + "\n"), out, line_corpus)
    assert code == 0
    rows = [json.loads(line) for line in out.getvalue().splitlines()]
    assert [r["id"] for r in rows] == ["1", "2", "3"]
    assert rows[2]["temporal_component"] == pytest.approx(-0.375)
    assert rows[2]["t_og"] == 5


def test_serve_malformed_middle_line_continues():
    lines = [
        json.dumps({"id": "1", "task": "k1", "generated": "a", "gold": "a"}),
        "{this is not json",
        json.dumps({"id": "3", "task": "k1", "generated": "b", "gold": "c"}),
    ]
    out = io.StringIO()
    assert serve(io.StringIO("\n".join(lines) + "\n"), out, None) == 0
    rows = [json.loads(line) for line in out.getvalue().splitlines()]
    assert len(rows) == 3
    assert "error" in rows[1] and "total" not in rows[1]
    assert rows[0]["total"] == pytest.approx(0.34)
    assert rows[2]["total"] == 0.0


def test_serve_end_of_input_clean():
    out = io.StringIO()
    assert serve(io.StringIO(""), out, None) == 0
    assert out.getvalue() == ""
