import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncots.env import (
    OPERATOR_CLASS,
    REFLECTION,
    STATEMENT,
    Z_NAMES,
    EnvQuery,
    EnvSpec,
    SyntheticEnv,
    brute_force_optimal,
    decision_encoding,
    generate_queries,
    teacher_from_encoding,
    teacher_policy,
    transition,
)
from ncots.traces import FULL_SET, RANDOM8_SET

SO = FULL_SET.by_text("So").id
WAIT = FULL_SET.by_text("Wait").id
LET = FULL_SET.by_text("Let").id
ALT = FULL_SET.by_text("Alternatively").id


def walk(spec, r0, ops, seed=0):
    """Opening step followed by the given full-set operator ids."""
    env = SyntheticEnv(spec)
    s = env.begin(EnvQuery.make("x", r0, seed), seed)
    s = transition(spec, s, None)[0]
    n = 0
    for op in ops:
        if s.done:
            break
        s = transition(spec, s, op)[0]
        n += 1
    return s, n


def test_statement_path_without_errors_finishes_in_r0_steps():
    spec = EnvSpec.deterministic(fix_prob=0.0)
    s, n = walk(spec, 3, [SO] * 10)
    assert s.done and s.correct and n == 3


def test_forced_errors_without_reflection_are_fatal():
    spec = EnvSpec.deterministic(error_inject_prob=1.0, initial_q=0.0, q_levels=(0.0,))
    for seed in range(10):
        s, _ = walk(spec, 3, [SO] * 10, seed)
        assert s.done and not s.correct


def test_noise_free_features_are_reproducible():
    spec = EnvSpec(noise_sigma=0.0)
    env = SyntheticEnv(spec)
    q = EnvQuery.make("x", 3, 5)
    feats = []
    for _ in range(2):
        s = env.begin(q, 17)
        out = env.generate_step(s)
        pend, h = env.apply_operator(out.state, RANDOM8_SET.by_text("Wait"))
        feats.append((out.features, h, env.generate_step(pend).features))
    for a, b in zip(*feats):
        assert np.array_equal(a, b)


def test_operator_classes():
    assert {t for t, c in OPERATOR_CLASS.items() if c == STATEMENT} == {"The", "Thus", "Therefore", "So", "Then", "Now", "First", "I"}
    assert OPERATOR_CLASS["Wait"] == REFLECTION
    assert set(OPERATOR_CLASS) == set(FULL_SET.tokens)


def test_step_semantics():
    spec = EnvSpec.deterministic(q_levels=(0.0, 1.0), q_probs=(0.5, 0.5))
    s, _ = walk(spec, 3, [])
    after_let = transition(spec, s, LET)[0]
    assert (after_let.r, after_let.e) == (s.r, s.e)
    after_so = transition(spec, s, SO)[0]
    assert after_so.r == s.r - 1
    errored = replace(s, e=1)
    assert transition(spec, errored, WAIT)[0].e == 0
    alt = transition(spec, errored, ALT)[0]
    assert (alt.r, alt.e) == (s.r, 1) and alt.q in (0.0, 1.0)


def test_reflection_steps_are_longer():
    spec = EnvSpec()
    lo_s, hi_s = spec.step_tokens[STATEMENT]
    lo_r, hi_r = spec.step_tokens[REFLECTION]
    assert lo_r + hi_r > lo_s + hi_s
    with pytest.raises(ValueError):
        EnvSpec(step_tokens={**spec.step_tokens, REFLECTION: (10, 20)})


def test_spec_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        EnvSpec(fix_prob=1.5)
    with pytest.raises(ValueError):
        EnvSpec(q_probs=(0.5, 0.5, 0.5))
    spec = EnvSpec(seed=3, noise_sigma=0.1)
    spec.save(tmp_path / "env.json")
    assert EnvSpec.load(tmp_path / "env.json") == spec
    with pytest.raises(ValueError):
        EnvSpec.from_dict({"bogus": 1})


def test_query_generation_is_seeded():
    spec = EnvSpec()
    a, b = generate_queries(spec, 20, 3), generate_queries(spec, 20, 3)
    assert a == b
    assert all(2 <= q.r0 <= 6 for q in a)
    assert EnvQuery.from_dict(a[0].to_dict()) == a[0]
    assert generate_queries(spec, 0, 3) == []


# --- teacher -------------------------------------------------------------------

def _state(e=0, q=1.0, r=3, last_cls="opening"):
    spec = EnvSpec.deterministic()
    s, _ = walk(spec, 3, [])
    return replace(s, e=e, q=q, r=r, last_cls=last_cls), spec


def test_teacher_prefers_wait_on_error():
    for cls in ("opening", STATEMENT, REFLECTION, "setup"):
        s, spec = _state(e=1, last_cls=cls)
        assert RANDOM8_SET[int(np.argmax(teacher_policy(s, spec)))].text == "Wait"


def test_teacher_prefers_statement_when_clean():
    for cls in ("opening", REFLECTION, "setup", "divergence"):
        s, spec = _state(e=0, q=1.0, last_cls=cls)
        best = RANDOM8_SET[int(np.argmax(teacher_policy(s, spec)))].text
        assert OPERATOR_CLASS[best] == STATEMENT


def test_teacher_cautious_after_statement_by_small_margin():
    s, spec = _state(e=0, q=1.0, last_cls=STATEMENT)
    logp = np.log(teacher_policy(s, spec))
    wait, so = RANDOM8_SET.by_text("Wait").id, RANDOM8_SET.by_text("So").id
    assert 0 < logp[wait] - logp[so] < 0.1


def test_teacher_prefers_divergence_on_low_quality():
    s, spec = _state(e=0, q=0.0)
    assert RANDOM8_SET[int(np.argmax(teacher_policy(s, spec)))].text == "Alternatively"


def test_teacher_uniform_on_zero_latent():
    p = teacher_from_encoding(np.zeros(len(Z_NAMES)))
    assert np.allclose(p, 1 / 8)
    s, spec = _state()
    p = teacher_policy(s, spec, FULL_SET)
    assert p.shape == (16,) and (p > 0).all() and abs(p.sum() - 1) < 1e-12


# --- brute-force oracle ------------------------------------------------------------

def test_oracle_two_statements_when_error_free():
    res = brute_force_optimal(EnvQuery.make("a", 2, 0), EnvSpec.deterministic(), 3, 0, n_eval=2)
    assert [OPERATOR_CLASS[o.text] for o in res.sequence] == [STATEMENT, STATEMENT]
    assert res.accuracy == 1.0
    assert res.expected_length == 80 + 1 + 50 + 1 + 50


def test_oracle_uses_exactly_one_wait_for_a_forced_error():
    spec = EnvSpec.deterministic(forced_errors=(1,))
    res = brute_force_optimal(EnvQuery.make("a", 2, 0), spec, 4, 0, n_eval=2)
    assert res.accuracy == 1.0
    assert [o.text for o in res.sequence].count("Wait") == 1


def test_oracle_horizon_zero_and_bound():
    res = brute_force_optimal(EnvQuery.make("a", 2, 0), EnvSpec.deterministic(), 0, 0, n_eval=2)
    assert res.sequence == () and res.accuracy == 0.0
    with pytest.raises(ValueError, match="exceeds"):
        brute_force_optimal(EnvQuery.make("a", 2, 0), EnvSpec.deterministic(), 9, 0)


# --- properties -----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 4),
    st.lists(st.sampled_from([SO, LET, FULL_SET.by_text("Then").id]), min_size=1, max_size=8),
    st.integers(0, 2**32),
)
def test_reflection_after_error_never_hurts(r0, ops, seed):
    spec = replace(EnvSpec(), fix_prob=1.0, error_inject_prob=0.6)
    env = SyntheticEnv(spec)
    ops = ops + [SO] * r0
    s = transition(spec, env.begin(EnvQuery.make("x", r0, seed), seed), None)[0]
    with_wait, inserted = [], False
    for op in ops:
        with_wait.append(op)
        if not inserted and not s.done:
            s = transition(spec, s, op)[0]
            if s.e and not s.done:
                with_wait.append(WAIT)
                inserted = True
    base, _ = walk(spec, r0, ops, seed)
    fixed, _ = walk(spec, r0, with_wait, seed)
    assert base.done and fixed.done
    assert fixed.correct >= base.correct


def test_noise_free_features_injective_on_reachable_states():
    spec = EnvSpec(noise_sigma=0.0, q_levels=(0.0, 1.0), q_probs=(0.5, 0.5), error_inject_prob=0.5)
    env = SyntheticEnv(spec)
    seen = {}
    ids = [SO, WAIT, ALT, LET]
    for r0 in (1, 2, 3):
        for seed in range(3):
            root = transition(spec, env.begin(EnvQuery.make("x", r0, seed), seed), None)[0]
            for seq in itertools.chain.from_iterable(itertools.product(ids, repeat=k) for k in range(4)):
                s = root
                for op in seq:
                    if s.done:
                        break
                    s = transition(spec, s, op)[0]
                if s.done:
                    continue
                latent = tuple(decision_encoding(s, spec))
                key = tuple(np.round(env.decision_features(s), 9))
                seen.setdefault(key, set()).add(latent)
    assert len(seen) > 50
    assert all(len(v) == 1 for v in seen.values())


def test_backend_contract_operator_opens_the_step():
    spec = EnvSpec()
    env = SyntheticEnv(spec)
    s = env.generate_step(env.begin(EnvQuery.make("x", 4, 1), 1)).state
    for op in FULL_SET:
        pend, h = env.apply_operator(s, op)
        assert pend.tokens == s.tokens and h.shape == (spec.feature_dim,)
        out = env.generate_step(pend)
        assert out.tokens[0] == op.text and out.operator == op


def test_first_step_cannot_be_intervened():
    env = SyntheticEnv()
    with pytest.raises(ValueError):
        env.apply_operator(env.begin(EnvQuery.make("x", 2, 0), 0), RANDOM8_SET[0])
