import json
import math

import pytest

from opentab.llm import TranscriptReplayer
from opentab.orchestrator import (
    FAILURE_ALL_SQL,
    FAILURE_OVERFLOW,
    FAILURE_PROVIDER,
    LexicalScorer,
    PipelineSettings,
    ReasoningPipeline,
    ScorerUnavailable,
    Strategy,
    lexical_score,
)
from opentab.retrieval import RetrievalResult, build_index
from opentab.tables import RawTable, TableCorpus, normalize_table

from scripted_llm import ScriptedResponder


def table(tid, title, header, rows):
    t = normalize_table(RawTable(tid, title, header, rows))
    assert not hasattr(t, "reason")
    return t


@pytest.fixture
def corpus(fabrice, airport):
    return TableCorpus(
        [
            fabrice,
            airport,
            table("medals", "Olympic Medals Norway", ["nation", "gold"],
                  [["norway", "14"], ["germany", "11"]]),
            table("films", "Best Film Winners", ["year", "film"],
                  [["2019", "parasite"], ["2020", "nomadland"]]),
            table("lure", "Distractor Collection", ["note"], [["junk text here"]]),
        ]
    )


def results(*ids):
    return [RetrievalResult(tid, 10.0 - i, i + 1) for i, tid in enumerate(ids)]


FABRICE_Q = "did he win more at the australian open or indian wells?"
FABRICE_CASCADE = (
    "SELECT name, career_nwin_loss FROM fabrice_santoro; [SQLSEP] "
    "SELECT name, career_nwin_loss FROM fabrice_santoro WHERE name LIKE \"%australian open%\"; [SQLSEP] "
    "SELECT name, career_nsr FROM fabrice_santoro WHERE name LIKE \"%australian open%\""
)


class TestLexicalScore:
    def test_full_overlap(self):
        sql = "SELECT passengers FROM t WHERE city LIKE '%los angeles%'"
        assert lexical_score([("los angeles passengers", sql)]) == [1.0]

    def test_disjoint(self):
        assert lexical_score([("alpha beta", "SELECT one FROM two")]) == [0.0]

    def test_half_overlap(self):
        sql = "SELECT gold FROM medals WHERE nation = 'norway'"
        assert lexical_score([("norway gold score count", sql)]) == [0.5]

    def test_grammar_tokens_ignored(self):
        assert lexical_score([("select from where", "SELECT a FROM b WHERE c")]) == [0.0]

    def test_empty_query(self):
        assert lexical_score([("", "SELECT 1")]) == [0.0]


class TestAnswerClosed:
    def test_fabrice_answer(self, corpus):
        provider = ScriptedResponder(
            coder_script={(FABRICE_Q, "fabrice_santoro"): FABRICE_CASCADE},
            reader_script={(FABRICE_Q, "fabrice_santoro"): "A:\nindian wells"},
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro", query_id="q1")
        assert trace.answer.items == ["indian wells"]
        assert trace.chosen_table_id == "fabrice-santoro"
        assert trace.failure is None
        assert trace.per_table["fabrice-santoro"].result.chosen_tier == "advanced"

    def test_fallback_tier_still_answers(self, corpus):
        cascade = (
            "SELECT name FROM fabrice_santoro; [SQLSEP] "
            "SELECT name FROM fabrice_santoro WHERE name LIKE '%open%'; [SQLSEP] "
            "SELEC broken FROM fabrice_santoro"
        )
        provider = ScriptedResponder(
            coder_script={(FABRICE_Q, "fabrice_santoro"): cascade},
            reader_script={(FABRICE_Q, "fabrice_santoro"): "australian open"},
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro")
        assert trace.per_table["fabrice-santoro"].result.chosen_tier == "intermediate"
        assert trace.answer.items == ["australian open"]

    def test_missing_transcript_is_provider_error(self, corpus, tmp_path):
        transcript = tmp_path / "empty.jsonl"
        transcript.write_text("")
        pipeline = ReasoningPipeline(corpus, provider=TranscriptReplayer(transcript))
        trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro")
        assert trace.failure == FAILURE_PROVIDER
        assert trace.answer is None

    def test_all_fail_abstains(self, corpus):
        provider = ScriptedResponder()  # default cascade fails verification
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro")
        assert trace.failure == FAILURE_ALL_SQL
        assert trace.answer is None
        assert trace.chosen_table_id is None


class TestAnswerSequential:
    def test_first_ok_stops_iteration(self, corpus):
        q = "which nation won the most gold medals?"
        provider = ScriptedResponder(
            coder_script={(q, "olympic_medals_norway"): "SELECT nation, gold FROM olympic_medals_norway"},
            reader_script={(q, "olympic_medals_norway"): "norway"},
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_sequential(q, results("medals", "films", "lure"), query_id="s1")
        assert trace.chosen_table_id == "medals"
        assert list(trace.per_table) == ["medals"]  # rank 2+ never attempted
        assert trace.answer.items == ["norway"]

    def test_rank1_fails_rank2_chosen(self, corpus):
        q = "which film won in 2019?"
        provider = ScriptedResponder(
            coder_script={(q, "best_film_winners"): "SELECT film FROM best_film_winners WHERE year = '2019'"},
            reader_script={(q, "best_film_winners"): "parasite"},
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_sequential(q, results("lure", "films"))
        assert trace.chosen_table_id == "films"
        assert list(trace.per_table) == ["lure", "films"]
        assert trace.per_table["lure"].result.chosen_tier is None

    def test_all_fail(self, corpus):
        pipeline = ReasoningPipeline(corpus, provider=ScriptedResponder())
        trace = pipeline.answer_sequential("q?", results("lure", "films"))
        assert trace.failure == FAILURE_ALL_SQL
        assert set(trace.per_table) == {"lure", "films"}


class TestAnswerJoint:
    Q = "which nation won the most gold medals?"

    def _provider(self, sql):
        names = ("olympic_medals_norway", "distractor_collection")
        return ScriptedResponder(
            coder_script={(self.Q, names): sql},
            reader_script={(self.Q, names): "norway"},
        )

    def test_attribution_from_referenced_name(self, corpus):
        provider = self._provider("SELECT nation FROM olympic_medals_norway")
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_joint(self.Q, results("medals", "lure"))
        assert trace.chosen_table_id == "medals"
        assert trace.multi_table is False
        assert trace.answer.items == ["norway"]
        # joint prompt contained both schema blocks
        kind, _, targets = provider.seen[0]
        assert kind == "coder"
        assert targets == ("olympic_medals_norway", "distractor_collection")

    def test_join_flags_multi_table_first_reference_wins(self, corpus):
        provider = self._provider(
            "SELECT m.nation FROM olympic_medals_norway m, distractor_collection d"
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_joint(self.Q, results("medals", "lure"))
        assert trace.multi_table is True
        assert trace.chosen_table_id == "medals"

    def test_prompt_overflow_failure(self, corpus):
        provider = self._provider("SELECT nation FROM olympic_medals_norway")
        pipeline = ReasoningPipeline(
            corpus, provider=provider, settings=PipelineSettings(char_budget=200)
        )
        trace = pipeline.answer_joint(self.Q, results("medals", "lure"))
        assert trace.failure == FAILURE_OVERFLOW
        assert trace.answer is None


class GoldBeatsLureScript(ScriptedResponder):
    """Coder yields a verified-but-irrelevant SQL on the lure table and a
    query-overlapping SQL on the gold table."""

    def __init__(self, question, gold_name, gold_sql, lure_name):
        super().__init__(
            coder_script={
                (question, gold_name): gold_sql,
                (question, lure_name): f"SELECT note FROM {lure_name}",
            },
            reader_script={
                (question, gold_name): "norway",
                (question, lure_name): "junk",
            },
        )


class TestAnswerGrsr:
    Q = "how many gold medals did norway win?"
    GOLD_SQL = "SELECT nation, gold FROM olympic_medals_norway WHERE nation LIKE '%norway%'"

    def _pipeline(self, corpus, scorer=None):
        provider = GoldBeatsLureScript(
            self.Q, "olympic_medals_norway", self.GOLD_SQL, "distractor_collection"
        )
        return ReasoningPipeline(corpus, provider=provider, scorer=scorer)

    def test_reranking_beats_retriever_order(self, corpus):
        pipeline = self._pipeline(corpus)
        candidates = results("lure", "medals")  # lure ranked first
        grsr = pipeline.answer_grsr(self.Q, candidates, query_id="g1")
        seq = pipeline.answer_sequential(self.Q, candidates, query_id="g1")
        assert seq.chosen_table_id == "lure"
        assert grsr.chosen_table_id == "medals"
        assert grsr.answer.items == ["norway"]

    def test_every_candidate_attempted_and_scored(self, corpus):
        pipeline = self._pipeline(corpus)
        trace = pipeline.answer_grsr(self.Q, results("lure", "medals", "films"))
        assert set(trace.per_table) == {"lure", "medals", "films"}
        assert trace.per_table["medals"].score is not None
        assert trace.per_table["lure"].score is not None
        assert trace.per_table["films"].score is None  # unverified, never scored

    def test_single_verified_chosen_regardless_of_score(self, corpus):
        q = "which film won in 2019?"
        provider = ScriptedResponder(
            coder_script={(q, "best_film_winners"): "SELECT year FROM best_film_winners"},
            reader_script={(q, "best_film_winners"): "parasite"},
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        trace = pipeline.answer_grsr(q, results("lure", "films"))
        assert trace.chosen_table_id == "films"

    def test_argmax_with_tie_prefers_better_rank(self, corpus):
        class ConstantScorer:
            def score_pairs(self, pairs):
                return [0.5] * len(pairs)

        pipeline = self._pipeline(corpus, scorer=ConstantScorer())
        trace = pipeline.answer_grsr(self.Q, results("lure", "medals"))
        assert trace.chosen_table_id == "lure"  # tie -> retriever rank wins

    def test_scorer_unavailable_falls_back_to_lexical(self, corpus):
        class BrokenScorer:
            def score_pairs(self, pairs):
                raise ScorerUnavailable("down")

        pipeline = self._pipeline(corpus, scorer=BrokenScorer())
        trace = pipeline.answer_grsr(self.Q, results("lure", "medals"))
        assert trace.scorer_fallback is True
        assert trace.chosen_table_id == "medals"

    def test_argmax_invariant_under_monotone_transforms(self, corpus):
        import random

        rng = random.Random(99)
        transforms = [
            lambda x, a=rng.uniform(0.5, 3.0), b=rng.uniform(-1, 1): a * x + b
            for _ in range(2)
        ] + [lambda x: x**3 + x, math.expm1, math.atan]
        base = self._pipeline(corpus)
        baseline = base.answer_grsr(self.Q, results("lure", "medals")).chosen_table_id

        class Transformed:
            def __init__(self, fn):
                self.fn = fn

            def score_pairs(self, pairs):
                return [self.fn(s) for s in lexical_score(pairs)]

        assert len(transforms) == 5
        for fn in transforms:
            pipeline = self._pipeline(corpus, scorer=Transformed(fn))
            trace = pipeline.answer_grsr(self.Q, results("lure", "medals"))
            assert trace.chosen_table_id == baseline

    def test_all_fail(self, corpus):
        pipeline = ReasoningPipeline(corpus, provider=ScriptedResponder())
        trace = pipeline.answer_grsr("q?", results("lure", "films"))
        assert trace.failure == FAILURE_ALL_SQL


class TestFallbackRowsMode:
    def test_disabled_by_default(self, corpus):
        pipeline = ReasoningPipeline(corpus, provider=ScriptedResponder())
        trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro")
        assert trace.failure == FAILURE_ALL_SQL
        assert trace.used_fallback_rows is False

    def test_reads_from_sampled_rows_when_enabled(self, corpus):
        provider = ScriptedResponder(
            reader_script={(FABRICE_Q, "fabrice_santoro"): "indian wells"}
        )
        pipeline = ReasoningPipeline(
            corpus, provider=provider, settings=PipelineSettings(fallback_rows=True)
        )
        trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro")
        assert trace.used_fallback_rows is True
        assert trace.failure is None
        assert trace.answer.items == ["indian wells"]
        assert trace.chosen_table_id == "fabrice-santoro"
        kinds = [kind for kind, _, _ in provider.seen]
        assert kinds == ["coder", "reader"]  # coder failed, reader fed rows instead


class TestDispatchAndTrace:
    def test_answer_dispatch_with_retrieval(self, corpus):
        q = "how many gold medals did norway win?"
        provider = GoldBeatsLureScript(
            q, "olympic_medals_norway", TestAnswerGrsr.GOLD_SQL, "distractor_collection"
        )
        index = build_index(corpus)
        pipeline = ReasoningPipeline(corpus, index=index, provider=provider)
        trace = pipeline.answer("qx", q, Strategy("grsr", 3))
        assert trace.query_id == "qx"
        assert len(trace.candidates) == 3
        assert trace.chosen_table_id == "medals"

    def test_closed_requires_gold(self, corpus):
        pipeline = ReasoningPipeline(corpus, provider=ScriptedResponder())
        with pytest.raises(ValueError):
            pipeline.answer("q", "text", Strategy("closed"))

    def test_trace_serialization_is_deterministic(self, corpus):
        provider = ScriptedResponder(
            coder_script={(FABRICE_Q, "fabrice_santoro"): FABRICE_CASCADE},
            reader_script={(FABRICE_Q, "fabrice_santoro"): "indian wells"},
        )
        pipeline = ReasoningPipeline(corpus, provider=provider)
        dumps = []
        for _ in range(2):
            trace = pipeline.answer_closed(FABRICE_Q, "fabrice-santoro", query_id="q1")
            dumps.append(json.dumps(trace.to_dict(), sort_keys=True, ensure_ascii=False))
        assert dumps[0] == dumps[1]
        payload = json.loads(dumps[0])
        assert payload["chosen_table_id"] == "fabrice-santoro"
        assert payload["per_table"]["fabrice-santoro"]["result"]["chosen_tier"] == "advanced"
        assert "elapsed" not in json.dumps(payload)
