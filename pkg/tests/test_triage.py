import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from issuetriage.classifier import Prediction
from issuetriage.errors import ConfigError
from issuetriage.triage import (COLD_START_WARNING, TriagePolicy,
                                decide_assignee, decide_labels, triage_issue)


def pred(*probs):
    return Prediction(probs=np.asarray(probs, dtype=np.float64))


class TestPolicy:
    def test_defaults(self):
        policy = TriagePolicy()
        assert policy.label_threshold == 0.5
        assert not policy.assign_enabled
        assert policy.assign_min_confidence == 0.0

    def test_enabled_needs_roster(self):
        with pytest.raises(ConfigError):
            TriagePolicy(assign_enabled=True, roster=[])

    def test_threshold_bounds(self):
        with pytest.raises(ConfigError):
            TriagePolicy(label_threshold=0.0)
        with pytest.raises(ConfigError):
            TriagePolicy(label_threshold=1.2)

    def test_json_roundtrip(self, tmp_path):
        policy = TriagePolicy(label_threshold=0.7, assign_enabled=True,
                              assign_min_confidence=0.25, roster=["a", "b"])
        path = tmp_path / "policy.json"
        path.write_text(policy.to_json())
        assert TriagePolicy.load(path) == policy


class TestDecideLabels:
    def test_threshold_and_ordering(self):
        got = decide_labels(pred(0.9, 0.2, 0.6), TriagePolicy())
        assert got == [("bug", 0.9), ("question", 0.6)]

    def test_boundary_inclusive(self):
        got = decide_labels(pred(0.5, 0.5, 0.5), TriagePolicy())
        assert [name for name, _ in got] == ["bug", "enhancement", "question"]

    def test_none_above(self):
        assert decide_labels(pred(0.1, 0.1, 0.1), TriagePolicy()) == []

    @settings(max_examples=100, deadline=None)
    @given(st.tuples(*[st.floats(min_value=0.001, max_value=0.999)] * 3),
           st.floats(min_value=0.01, max_value=1.0),
           st.floats(min_value=0.0, max_value=0.99))
    def test_monotone_in_threshold(self, probs, thr, bump):
        lower = decide_labels(pred(*probs), TriagePolicy(label_threshold=thr))
        higher_thr = min(1.0, thr + bump)
        higher = decide_labels(pred(*probs),
                               TriagePolicy(label_threshold=higher_thr))
        assert {n for n, _ in higher} <= {n for n, _ in lower}


class TestDecideAssignee:
    ROSTER = ["alice", "bob", "carol"]

    def _policy(self, min_conf=0.0):
        return TriagePolicy(assign_enabled=True, roster=self.ROSTER,
                            assign_min_confidence=min_conf)

    def test_argmax(self):
        got = decide_assignee(pred(0.1, 0.7, 0.2), self._policy())
        assert got == ("bob", 0.7)

    def test_abstain_below_min_confidence(self):
        uniform = pred(1 / 3, 1 / 3, 1 / 3)
        assert decide_assignee(uniform, self._policy(min_conf=0.5)) is None

    def test_tie_goes_to_lowest_index(self):
        policy = TriagePolicy(assign_enabled=True, roster=["x", "y"])
        assert decide_assignee(pred(0.5, 0.5), policy) == ("x", 0.5)

    def test_roster_length_mismatch(self):
        with pytest.raises(ConfigError):
            decide_assignee(pred(0.5, 0.5), self._policy())

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(min_value=0.01, max_value=10.0), min_size=3,
                    max_size=3))
    def test_argmax_invariant_under_monotone_transform(self, raw):
        probs = np.asarray(raw) / sum(raw)
        policy = self._policy()
        base = decide_assignee(Prediction(probs=probs), policy)
        squash = probs ** 3 / (probs ** 3).sum()  # strictly increasing on >0
        other = decide_assignee(Prediction(probs=squash), policy)
        assert base[0] == other[0]


class TestTriageIssue:
    def test_bug_keyword_issue_gets_bug_label(self, tiny_label_model):
        decision = triage_issue("app crashes with segfault error",
                                "traceback shows a crash", tiny_label_model,
                                None, TriagePolicy())
        assert "bug" in [name for name, _ in decision.labels]
        assert decision.assignee is None
        assert "labels" in decision.model_versions

    def test_assignment_disabled_means_no_assignee(self, tiny_label_model,
                                                   tiny_assign_model):
        decision = triage_issue("parser bug in tokenizer", "", tiny_label_model,
                                tiny_assign_model,
                                TriagePolicy(assign_enabled=False))
        assert decision.assignee is None

    def test_assignment_enabled(self, tiny_label_model, tiny_assign_model):
        policy = TriagePolicy(assign_enabled=True,
                              roster=list(tiny_assign_model.task_config.label_names))
        decision = triage_issue("parser grammar syntax ast broken", "lexer",
                                tiny_label_model, tiny_assign_model, policy)
        assert decision.assignee is not None
        assert decision.assignee[0] == "alice"
        assert decision.model_versions.keys() == {"labels", "assignee"}

    def test_empty_title_and_body_no_crash(self, tiny_label_model):
        decision = triage_issue("", "", tiny_label_model, None, TriagePolicy())
        assert isinstance(decision.labels, list)

    def test_missing_assign_model_is_config_error(self, tiny_label_model):
        policy = TriagePolicy(assign_enabled=True, roster=["a", "b"])
        with pytest.raises(ConfigError):
            triage_issue("t", "b", tiny_label_model, None, policy)

    def test_cold_start_degrades_with_warning(self, tiny_label_model):
        policy = TriagePolicy(assign_enabled=True, roster=["a", "b"])
        decision = triage_issue("crash error", "", tiny_label_model, None,
                                policy, allow_cold_start=True)
        assert decision.assignee is None
        assert COLD_START_WARNING in decision.warnings

    def test_deterministic(self, tiny_label_model, tiny_assign_model):
        policy = TriagePolicy(assign_enabled=True,
                              roster=list(tiny_assign_model.task_config.label_names))
        a = triage_issue("network socket timeout crash", "http retry",
                         tiny_label_model, tiny_assign_model, policy)
        b = triage_issue("network socket timeout crash", "http retry",
                         tiny_label_model, tiny_assign_model, policy)
        assert a == b
