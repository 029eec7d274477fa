from __future__ import annotations

import math
import random
from collections import Counter
from types import SimpleNamespace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from occmatch.consolidate import (
    DEFAULT_RULES,
    ConsolidationRules,
    OccupationGroup,
    UnresolvablePosting,
    bin_label,
    canonical_title,
    consolidate,
    frequency_distribution,
    histogram_csv,
    pluralize,
    read_top_table,
    top_n,
    top_table_csv,
)
from occmatch.matcher import MatchResult


def posting(title, company=None, location=None):
    return SimpleNamespace(title=title, company=company, location=location)


def match(pid, score, title=""):
    return MatchResult(pid, title, score, "cloud-computing")


# --- canonical titles ------------------------------------------------------------


@pytest.mark.parametrize(
    "raw, canon",
    [
        ("Senior Cloud Engineer", "Cloud Engineers"),
        ("Lead Cloud Engineer", "Cloud Engineers"),
        ("Cloud Engineer", "Cloud Engineers"),
        ("Data Scientist ", "Data Scientists"),
        ("senior  cloud   engineer", "Cloud Engineers"),
        ("Head of Data Engineering", "Data Engineering"),
        ("Cloud Engineer Lead", "Cloud Engineers"),
        ("Principal Technical Sales Specialist", "Technical Sales Specialists"),
        ("Security", "Security"),
        ("Analyst - Cloud Platforms", "Analysts - Cloud Platforms"),
        ("Software Engineer (Python)", "Software Engineers (Python)"),
        ("Delivery Lead", "Deliveries"),
        ("Lead", "Leads"),
        ("Chief of Staff", "Chiefs of Staff"),
        ("IT Manager", "IT Managers"),
        ("Salesperson", "Salespeople"),
        ("Sales Person", "Sales People"),
        ("Ways of Working Consultant", "Ways of Working Consultants"),
        ("Director of Engineering", "Directors of Engineering"),
        ("Cloud Engineers", "Cloud Engineers"),
        ("", ""),
    ],
)
def test_canonical_title_examples(raw, canon):
    assert canonical_title(raw) == canon


def test_custom_merges_and_plurals():
    rules = ConsolidationRules.parse(
        """
        # comment
        [seniority]
        Senior
        [plural]
        Seamstress => Seamstresses
        [merges]
        Cloud Ops Engineer => Cloud Operations Engineers
        SRE => Site Reliability Engineers
        """
    )
    assert rules.seniority_tokens == ("Senior",)
    assert canonical_title("Senior Cloud Ops Engineer", rules) == "Cloud Operations Engineers"
    assert canonical_title("Cloud Operations Engineers", rules) == "Cloud Operations Engineers"
    assert canonical_title("sre", rules) == "Site Reliability Engineers"
    assert canonical_title("Seamstress", rules) == "Seamstresses"
    assert canonical_title("Lead Cloud Engineer", rules) == "Lead Cloud Engineers"


@pytest.mark.parametrize("bad", ["Senior\n", "[colours]\n", "[merges]\nno arrow\n", "[merges]\n => x\n"])
def test_rules_parse_errors(bad):
    with pytest.raises(ValueError):
        ConsolidationRules.parse(bad)


def test_rules_default_seniority_when_section_absent():
    assert ConsolidationRules.parse("[merges]\nA => B\n").seniority_tokens == DEFAULT_RULES.seniority_tokens


def test_pluralize():
    r = DEFAULT_RULES
    assert [pluralize(w, r) for w in ("Engineer", "Secretary", "Coach", "Box", "Day", "Analysis", "Staff", "ML")] == [
        "Engineers", "Secretaries", "Coaches", "Boxes", "Days", "Analysis", "Staff", "MLs"]


vocab_title = st.lists(
    st.sampled_from(["Senior", "Lead", "junior", "Head", "of", "Chief", "Cloud", "Data", "Engineer", "Engineers",
                     "Scientist", "Security", "Staff", "Analyst", "-", "(AWS)", "Sales", "Person", "Man", "Ops",
                     "Principal", "Graduate", "Entry-Level", "Associate", "and", "Policy"]),
    max_size=6,
).map(" ".join)


@given(vocab_title)
def test_canonical_title_idempotent(t):
    once = canonical_title(t)
    assert canonical_title(once) == once


@given(st.sampled_from(DEFAULT_RULES.seniority_tokens), st.sampled_from([str.lower, str.upper, str.title]),
       st.sampled_from(["Cloud Engineer", "Data Scientist", "Security Analyst", "Scrum Master"]),
       st.booleans())
def test_seniority_stripping_is_case_insensitive(token, case, base, trailing):
    t = f"{base} {case(token)}" if trailing else f"{case(token)} {base}"
    assert canonical_title(t) == canonical_title(base)


@given(vocab_title)
def test_canonical_title_with_merge_rules_idempotent(t):
    rules = ConsolidationRules.parse("[merges]\nData Engineer => Data Engineering Staff\nOps => Operations\n")
    once = canonical_title(t, rules)
    assert canonical_title(once, rules) == once


# --- groups -----------------------------------------------------------------------


def test_acme_beta_example():
    postings = {
        "1": posting("Senior Cloud Engineer", "Acme", "Sydney"),
        "2": posting("Cloud Engineer", "Acme", "London"),
        "3": posting("Cloud Engineer", "Beta", "NYC"),
    }
    matches = [match("1", 0.82), match("2", 0.79), match("3", 0.75)]
    (g,) = consolidate(matches, postings)
    assert g.canonical_title == "Cloud Engineers"
    assert g.member_posting_ids == {"1", "2", "3"}
    assert g.distinct_count == 2
    assert g.best_score == 0.82
    assert g.member_titles == ("Cloud Engineer", "Senior Cloud Engineer")


def test_single_and_empty():
    (g,) = consolidate([match("1", 0.9)], {"1": posting("Data Scientist", "Acme")})
    assert g.distinct_count == 1
    assert consolidate([], {}) == []


def test_missing_company_counts_on_its_own():
    postings = {"1": posting("Cloud Engineer"), "2": posting("Cloud Engineer", " "), "3": posting("Cloud Engineer")}
    (g,) = consolidate([match("1", 0.9), match("2", 0.8), match("3", 0.7)], postings)
    assert g.distinct_count == 3


def test_company_match_ignores_case_and_spacing():
    postings = {"1": posting("Cloud Engineer", "Acme  Corp"), "2": posting("Cloud Engineer", "acme corp")}
    (g,) = consolidate([match("1", 0.9), match("2", 0.8)], postings)
    assert g.distinct_count == 1


def test_unresolvable_posting():
    with pytest.raises(UnresolvablePosting):
        consolidate([match("ghost", 0.9)], {})


def test_group_order_and_tie_break():
    postings = {"1": posting("Zoologist"), "2": posting("Architect"), "3": posting("Botanist")}
    groups = consolidate([match("1", 0.9), match("2", 0.9), match("3", 0.95)], postings)
    assert [g.canonical_title for g in groups] == ["Botanists", "Architects", "Zoologists"]


companies = st.sampled_from(["Acme", "Beta", "Gamma", None])
titles = st.sampled_from(["Cloud Engineer", "Senior Cloud Engineer", "Data Scientist", "Lead Data Scientist",
                          "DevOps Engineer"])
cities = st.sampled_from(["Sydney", "London", "Austin"])


@given(st.lists(st.tuples(titles, companies, cities, st.floats(0.7, 1.0)), max_size=30), st.randoms())
def test_group_invariants(rows, rnd):
    postings = {f"p{i}": posting(t, c, loc) for i, (t, c, loc, _) in enumerate(rows)}
    matches = [match(f"p{i}", s) for i, (*_, s) in enumerate(rows)]
    groups = consolidate(matches, postings)
    assert sum(len(g.member_posting_ids) for g in groups) == len(matches)
    for g in groups:
        assert 1 <= g.distinct_count <= len(g.member_posting_ids)
        assert g.best_score == max(m.score for m in matches if m.posting_id in g.member_posting_ids)
    keys = [(-g.best_score, g.canonical_title) for g in groups]
    assert keys == sorted(keys)
    # moving postings between locations never changes the counts
    moved = {pid: posting(p.title, p.company, rnd.choice(["Perth", "Leeds"])) for pid, p in postings.items()}
    assert [(g.canonical_title, g.distinct_count) for g in consolidate(matches, moved)] == [
        (g.canonical_title, g.distinct_count) for g in groups]


def test_top_n():
    gs = [OccupationGroup(f"T{i:02d}", frozenset({str(i)}), 1, 1 - i / 100) for i in range(15)]
    assert top_n(gs[:3]) == gs[:3]
    assert top_n(gs) == gs[:10]
    assert top_n(gs, 0) == []


@given(st.lists(st.floats(0.70, 1.0), min_size=10, max_size=20), st.floats(0.0, 0.69))
def test_top_n_stable_when_adding_low_group(scores, low):
    gs = sorted((OccupationGroup(f"T{i}", frozenset({str(i)}), 1, s) for i, s in enumerate(scores)),
                key=lambda g: (-g.best_score, g.canonical_title))
    extra = OccupationGroup("Zz", frozenset({"x"}), 1, low)
    resorted = sorted(gs + [extra], key=lambda g: (-g.best_score, g.canonical_title))
    assert top_n(resorted) == top_n(gs)


# --- histogram ---------------------------------------------------------------------


def test_histogram_examples():
    assert frequency_distribution([match("a", 0.70), match("b", 0.705), match("c", 0.71)]) == {0.70: 2, 0.71: 1}
    assert frequency_distribution([]) == {}
    with pytest.raises(ValueError):
        frequency_distribution([0.7], 0)


def test_histogram_against_sort_and_count_oracle():
    rng = random.Random(17)
    scores = [round(rng.uniform(0.70, 1.0), rng.choice([2, 3, 6, 12])) for _ in range(1000)]
    hist = frequency_distribution(scores)
    assert sum(hist.values()) == 1000
    # oracle: count by the decimal string's first two fractional digits
    oracle = Counter()
    for s in sorted(scores):
        text = f"{s:.12f}"
        oracle[float(text[:4])] += 1
    assert hist == dict(oracle)


@given(st.lists(st.floats(0.7, 1.0), max_size=50))
def test_histogram_conserves_counts(scores):
    hist = frequency_distribution(scores)
    assert sum(hist.values()) == len(scores)
    for lo in hist:
        assert math.isclose(lo * 100, round(lo * 100))


def test_csv_emitters():
    g = OccupationGroup("Cloud Engineers", frozenset({"1", "2"}), 2, 0.8123456789)
    text = top_table_csv([g])
    assert text == "rank,canonical_title,distinct_count,best_score\n1,Cloud Engineers,2,0.81234568\n"
    assert read_top_table(text)[0]["canonical_title"] == "Cloud Engineers"
    with pytest.raises(ValueError):
        read_top_table("a,b\n1,2\n")
    assert histogram_csv({0.7: 2, 0.71: 1}) == "bin,count\n0.70,2\n0.71,1\n"
    assert bin_label(0.7, 0.05) == "0.70" and bin_label(0.7, 0.1) == "0.7"


def test_group_json_round_trip():
    g = OccupationGroup("Cloud Engineers", frozenset({"1", "2"}), 2, 0.8, ("Cloud Engineer",))
    assert OccupationGroup.from_json(g.to_json()) == g
