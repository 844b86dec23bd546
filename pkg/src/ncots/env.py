"""Step-generation backends and the synthetic reasoning environment.

A backend owns model state between decision points. The engine drives it
through four calls::

    state = backend.begin(query, seed)
    out = backend.generate_step(state)            # natural step (model picks)
    pending, h_look = backend.apply_operator(out.state, op)   # one token
    out = backend.generate_step(pending)          # step continues from op

``SyntheticEnv`` stands in for a reasoning model. Its latent state is
(remaining work r, error flag e, branch quality q, step t, tokens). Operators
act by class:

* statement  -- r -= 1, may inject an error (prob ``error_inject_prob*(1-q)``);
  the step that brings r to 0 answers, correct iff e == 0
* reflection -- clears e with ``fix_prob``; long steps
* divergence -- resamples q
* setup      -- no latent effect

Features are ``E @ z(state) + noise`` with a fixed random embedding; tokens
inside a step also carry ``c * v_op`` for the operator that opened it.
All randomness is keyed by (rollout seed, step index, purpose), so states are
immutable values that can be branched, compared under common random numbers
and replayed from a stored trace.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace, asdict
from functools import cached_property
from typing import Protocol

import numpy as np

from .rng import derive_seed, stream
from .traces import FULL_SET, RANDOM8_SET, Operator, OperatorSet, Query, ReasoningTrace

STATEMENT = "statement"
REFLECTION = "reflection"
DIVERGENCE = "divergence"
SETUP = "setup"
OPENING = "opening"  # the first, un-intervened step

OPERATOR_CLASS = {
    **{t: STATEMENT for t in ("The", "Thus", "Therefore", "So", "Then", "Now", "First", "I")},
    "Wait": REFLECTION,
    "Alternatively": DIVERGENCE,
    **{t: SETUP for t in ("Let", "Option", "**", "-", "\\[", "\\")},
}

_FILLER = {
    OPENING: ("Okay", ",", "the", "problem", "asks", "for", "a", "value", "."),
    STATEMENT: ("we", "get", "x", "=", "2", "+", "y", "."),
    REFLECTION: ("let", "me", "check", "the", "previous", "result", "again", "."),
    DIVERGENCE: ("maybe", "try", "another", "approach", "instead", "."),
    SETUP: ("denote", "the", "unknown", "by", "n", "."),
}
ANSWER_TOKEN = "\\boxed{}"

# latent encoding layout
Z_NAMES = (
    "err", "clean", "q", "low_q", "rem", "rem_eff", "step", "tokens", "work",
    "c_setup", "c_stmt", "c_refl", "c_div", "pos", "size",
)
_ZI = {n: i for i, n in enumerate(Z_NAMES)}
_CLS_SLOT = {OPENING: "c_setup", SETUP: "c_setup", STATEMENT: "c_stmt", REFLECTION: "c_refl", DIVERGENCE: "c_div"}

# hand-specified linear maps from the latent encoding to operator logits
TEACHER_COEFS = {
    "So": {"clean": 2.0}, "Then": {"clean": 1.9}, "Therefore": {"clean": 1.8},
    "Thus": {"clean": 1.7}, "The": {"clean": 1.6}, "Now": {"clean": 1.5},
    "First": {"clean": 1.2}, "I": {"clean": 1.0},
    # cautious planner: slight taste for re-checking after any statement
    "Wait": {"err": 5.0, "c_stmt": 2.05},
    "Alternatively": {"low_q": 3.0, "err": -3.0},
    "Let": {"clean": 0.8},
    "Option": {"clean": 0.2}, "**": {"clean": 0.2}, "-": {"clean": 0.2},
    "\\[": {"clean": 0.2}, "\\": {"clean": 0.2},
}
# the model's own habits: blind to the error flag, over-verifies
NATURAL_COEFS = {
    "So": {"err": 2.0, "clean": 2.0}, "Then": {"err": 1.8, "clean": 1.8},
    "Therefore": {"err": 1.6, "clean": 1.6}, "Thus": {"err": 1.5, "clean": 1.5},
    "The": {"err": 1.4, "clean": 1.4}, "Now": {"err": 1.3, "clean": 1.3},
    "First": {"err": 1.0, "clean": 1.0}, "I": {"err": 1.0, "clean": 1.0},
    "Wait": {"c_stmt": 2.6},
    "Alternatively": {"err": 0.3, "clean": 0.3},
    "Let": {"err": 0.8, "clean": 0.8},
    "Option": {}, "**": {"err": 0.2, "clean": 0.2}, "-": {"err": 0.2, "clean": 0.2},
    "\\[": {}, "\\": {},
}

# stream purposes
_BEGIN, _STEP, _ERR, _NATURAL, _NOISE, _DELIM = 1, 2, 3, 4, 5, 6


def _coef_matrix(coefs: dict) -> np.ndarray:
    A = np.zeros((len(FULL_SET), len(Z_NAMES)))
    for op in FULL_SET:
        for name, v in coefs.get(op.text, {}).items():
            A[op.id, _ZI[name]] = v
    return A


TEACHER_MATRIX = _coef_matrix(TEACHER_COEFS)
NATURAL_MATRIX = _coef_matrix(NATURAL_COEFS)

DEFAULT_STEP_TOKENS = {
    OPENING: (60, 120),
    STATEMENT: (40, 80),
    REFLECTION: (80, 160),
    DIVERGENCE: (60, 120),
    SETUP: (30, 60),
}


@dataclass(frozen=True)
class EnvSpec:
    feature_dim: int = 16
    work_init_range: tuple[int, int] = (2, 6)
    error_inject_prob: float = 0.3
    fix_prob: float = 0.9
    q_levels: tuple[float, ...] = (0.0, 0.5, 1.0)
    q_probs: tuple[float, ...] = (0.3, 0.4, 0.3)
    initial_q: float | None = None  # None: draw q0 like a divergence
    forced_errors: tuple[int, ...] = ()  # statement ordinals that always err
    step_tokens: dict = field(default_factory=lambda: dict(DEFAULT_STEP_TOKENS))
    noise_sigma: float = 0.05
    low_q_threshold: float = 0.25
    natural_temperature: float = 0.6  # 0 means greedy
    top_p: float = 0.95  # honoured by model adapters; no-op here
    feature_scale: float = 4.0
    op_embedding_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "work_init_range", tuple(int(x) for x in self.work_init_range))
        object.__setattr__(self, "q_levels", tuple(float(x) for x in self.q_levels))
        object.__setattr__(self, "q_probs", tuple(float(x) for x in self.q_probs))
        object.__setattr__(self, "forced_errors", tuple(int(x) for x in self.forced_errors))
        object.__setattr__(self, "step_tokens", {k: tuple(int(x) for x in v) for k, v in self.step_tokens.items()})
        for p in (self.error_inject_prob, self.fix_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if len(self.q_levels) != len(self.q_probs) or abs(sum(self.q_probs) - 1.0) > 1e-9:
            raise ValueError("q_probs must be a distribution over q_levels")
        lo, hi = self.work_init_range
        if not 1 <= lo <= hi:
            raise ValueError("work_init_range must satisfy 1 <= lo <= hi")
        for cls in DEFAULT_STEP_TOKENS:
            a, b = self.step_tokens[cls]
            if not 1 <= a <= b:
                raise ValueError(f"bad token range for {cls}")
        if sum(self.step_tokens[REFLECTION]) <= sum(self.step_tokens[STATEMENT]):
            raise ValueError("reflection steps must be longer on average than statement steps")
        if self.feature_dim < len(Z_NAMES):
            raise ValueError(f"feature_dim must be >= {len(Z_NAMES)}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @cached_property
    def embedding(self) -> np.ndarray:
        """d x m map from latent encoding to features (orthogonal columns)."""
        g = stream(self.seed, 0xE3B)
        q, _ = np.linalg.qr(g.normal(size=(self.feature_dim, len(Z_NAMES))))
        return self.feature_scale * q

    @cached_property
    def op_vectors(self) -> np.ndarray:
        """Unit-norm per-operator directions, |full set| x d."""
        g = stream(self.seed, 0x0E7)
        v = g.normal(size=(len(FULL_SET), self.feature_dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def operator_embeddings(self, ops: OperatorSet = RANDOM8_SET) -> np.ndarray:
        return np.stack([self.op_vectors[FULL_SET.by_text(o.text).id] for o in ops])

    @classmethod
    def deterministic(cls, **kw) -> "EnvSpec":
        """Noise-free spec with fixed step lengths and q pinned at 1."""
        base = dict(
            error_inject_prob=0.0,
            fix_prob=1.0,
            q_levels=(1.0,),
            q_probs=(1.0,),
            initial_q=1.0,
            noise_sigma=0.0,
            step_tokens={OPENING: (80, 80), STATEMENT: (50, 50), REFLECTION: (120, 120), DIVERGENCE: (100, 100), SETUP: (40, 40)},
        )
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_tokens"] = {k: list(v) for k, v in self.step_tokens.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown EnvSpec fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EnvSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class EnvQuery(Query):
    r0: int = 2
    seed: int = 0

    @classmethod
    def make(cls, id: str, r0: int, seed: int) -> "EnvQuery":
        return cls(id=id, prompt=("Solve", f"task[{r0}]"), answer_key="e=0", r0=int(r0), seed=int(seed))

    def to_dict(self) -> dict:
        return {"id": self.id, "r0": self.r0, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "EnvQuery":
        return cls.make(d["id"], d["r0"], d["seed"])


def generate_queries(spec: EnvSpec, n: int, seed: int) -> list[EnvQuery]:
    lo, hi = spec.work_init_range
    out = []
    for i in range(n):
        g = stream(seed, 0x9E7, i)
        out.append(EnvQuery.make(f"q{i:05d}", int(g.integers(lo, hi + 1)), derive_seed(seed, 0x5EED, i)))
    return out


def query_key(query: Query) -> int:
    s = getattr(query, "seed", None)
    return int(s) if s is not None else zlib.crc32(query.id.encode())


@dataclass(frozen=True)
class EnvState:
    r0: int
    r: int
    e: int
    q: float
    t: int  # steps completed
    tokens: int  # tokens emitted so far, delimiters included
    seed: int
    stmt_count: int = 0
    last_cls: str | None = None
    last_op: int | None = None  # full-set id of the last step's operator
    last_len: int = 0
    pending: int | None = None  # full-set id forced as the next step's first token
    done: bool = False
    correct: bool = False


@dataclass(frozen=True, eq=False)
class StepOutcome:
    state: EnvState
    operator: Operator | None  # full-set operator that opened the step
    tokens: tuple[str, ...]
    features: np.ndarray | None  # decision-point features after the step
    done: bool


class Backend(Protocol):
    """What the search engine needs from a step-generating model."""

    feature_dim: int

    def begin(self, query: Query, seed: int): ...

    def generate_step(self, state) -> StepOutcome: ...

    def apply_operator(self, state, operator: Operator) -> tuple[object, np.ndarray]: ...

    def judge(self, state, query: Query) -> bool: ...

    def token_features(self, query: Query, trace: ReasoningTrace) -> np.ndarray: ...


def operator_class(op: Operator | str | None) -> str:
    if op is None:
        return OPENING
    text = op if isinstance(op, str) else op.text
    return OPERATOR_CLASS.get(text, SETUP)


def encode(
    *, r0: int, r: int, r_eff: int, e: int, q: float, t: int, tokens: int, cls: str | None, pos: int, low_q_threshold: float
) -> np.ndarray:
    z = np.zeros(len(Z_NAMES))
    z[_ZI["err"]] = e
    z[_ZI["clean"]] = 1 - e
    z[_ZI["q"]] = q
    z[_ZI["low_q"]] = 1.0 if q < low_q_threshold else 0.0
    z[_ZI["rem"]] = r / 8.0
    z[_ZI["rem_eff"]] = r_eff / 8.0
    z[_ZI["step"]] = t / 50.0
    z[_ZI["tokens"]] = tokens / 1000.0
    z[_ZI["work"]] = (r0 - r_eff) / r0 if r0 else 1.0
    if cls is not None:
        z[_ZI[_CLS_SLOT[cls]]] = 1.0
    z[_ZI["pos"]] = pos / 100.0
    z[_ZI["size"]] = r0 / 8.0
    return z


def decision_encoding(state: EnvState, spec: EnvSpec) -> np.ndarray:
    return encode(
        r0=state.r0, r=state.r, r_eff=state.r, e=state.e, q=state.q, t=state.t, tokens=state.tokens,
        cls=state.last_cls, pos=state.last_len, low_q_threshold=spec.low_q_threshold,
    )


def _restrict(logits_full: np.ndarray, ops: OperatorSet) -> np.ndarray:
    return np.array([logits_full[FULL_SET.by_text(o.text).id] for o in ops])


def teacher_from_encoding(z: np.ndarray, ops: OperatorSet = RANDOM8_SET) -> np.ndarray:
    from .heads import softmax

    return softmax(_restrict(TEACHER_MATRIX @ np.asarray(z, dtype=float), ops))


def teacher_policy(state: EnvState, spec: EnvSpec, ops: OperatorSet = RANDOM8_SET) -> np.ndarray:
    """Expert distribution over ``ops``: softmax of a linear map of the latent state.

    Prefers reflection when an error is pending, divergence when the branch
    quality is low, and a statement otherwise. Right after a statement step it
    leans very slightly towards re-checking (a cautious planner); the progress
    head is what prunes those checks.
    """
    return teacher_from_encoding(decision_encoding(state, spec), ops)


def natural_logits(state: EnvState, spec: EnvSpec) -> np.ndarray:
    return NATURAL_MATRIX @ decision_encoding(state, spec)


def _draw_len(spec: EnvSpec, cls: str, u: float) -> int:
    lo, hi = spec.step_tokens[cls]
    return lo + min(int(u * (hi - lo + 1)), hi - lo)


def transition(spec: EnvSpec, state: EnvState, op_id: int | None) -> tuple[EnvState, int, str]:
    """Latent effect of one step opened by full-set operator ``op_id``.

    Returns (next state, step token count, operator class).
    """
    if state.done:
        raise ValueError("cannot step a finished rollout")
    cls = OPENING if op_id is None else OPERATOR_CLASS.get(FULL_SET[op_id].text, SETUP)
    t = state.t + 1
    u_len, u_fix, u_q = stream(state.seed, t, _STEP).random(3)
    n = _draw_len(spec, cls, u_len)
    r, e, q, sc = state.r, state.e, state.q, state.stmt_count
    done = correct = False
    if cls == STATEMENT:
        sc += 1
        if sc in spec.forced_errors:
            e = 1
        elif stream(state.seed, sc, _ERR).random() < spec.error_inject_prob * (1.0 - q):
            e = 1
        r = max(r - 1, 0)
        if r == 0:
            done, correct = True, e == 0
    elif cls == REFLECTION:
        if e and u_fix < spec.fix_prob:
            e = 0
    elif cls == DIVERGENCE:
        q = _draw_q(spec, u_q)
    tokens = state.tokens + n + (0 if done else 1)
    nxt = replace(
        state, r=r, e=e, q=q, t=t, tokens=tokens, stmt_count=sc, last_cls=cls, last_op=op_id,
        last_len=n, pending=None, done=done, correct=correct,
    )
    return nxt, n, cls


def _draw_q(spec: EnvSpec, u: float) -> float:
    idx = int(np.searchsorted(np.cumsum(spec.q_probs), u, side="right"))
    return spec.q_levels[min(idx, len(spec.q_levels) - 1)]


def _step_tokens(cls: str, op: Operator | None, n: int, answers: bool) -> tuple[str, ...]:
    words = _FILLER[cls]
    toks = [] if op is None else [op.text]
    i = 0
    while len(toks) < n:
        toks.append(words[i % len(words)])
        i += 1
    if answers and n > 1:
        toks[-1] = ANSWER_TOKEN
    return tuple(toks[:n])


class SyntheticEnv:
    """Backend over the synthetic latent-state environment."""

    def __init__(self, spec: EnvSpec = EnvSpec()):
        self.spec = spec
        self.feature_dim = spec.feature_dim

    # -- features ----------------------------------------------------------
    def _project(self, Z: np.ndarray, op_id: int | None) -> np.ndarray:
        F = Z @ self.spec.embedding.T
        if op_id is not None:
            F = F + self.spec.op_embedding_scale * self.spec.op_vectors[op_id]
        return F

    def _noise(self, seed: int, t: int, purpose: int, rows: int) -> np.ndarray:
        if self.spec.noise_sigma == 0.0:
            return np.zeros((rows, self.feature_dim))
        return self.spec.noise_sigma * stream(seed, t, purpose).standard_normal((rows, self.feature_dim))

    def decision_features(self, state: EnvState) -> np.ndarray:
        # the delimiter token carries no operator identity
        z = decision_encoding(state, self.spec)
        return self._project(z[None, :], None)[0] + self._noise(state.seed, state.t, _DELIM, 1)[0]

    def _step_token_features(self, before: EnvState, op_id: int | None, cls: str, n: int) -> np.ndarray:
        stmt = cls == STATEMENT
        r_eff = before.r - 1 if stmt else before.r
        Z = np.stack([
            encode(
                r0=before.r0, r=before.r, r_eff=r_eff, e=before.e, q=before.q, t=before.t,
                tokens=before.tokens + i + 1, cls=cls, pos=i, low_q_threshold=self.spec.low_q_threshold,
            )
            for i in range(n)
        ])
        return self._project(Z, op_id) + self._noise(before.seed, before.t + 1, _NOISE, n)

    # -- backend contract ----------------------------------------------------
    def begin(self, query: Query, seed: int) -> EnvState:
        r0 = int(getattr(query, "r0"))
        if self.spec.initial_q is not None:
            q0 = float(self.spec.initial_q)
        else:
            q0 = _draw_q(self.spec, stream(seed, 0, _BEGIN).random())
        return EnvState(r0=r0, r=r0, e=0, q=q0, t=0, tokens=0, seed=int(seed))

    def natural_choice(self, state: EnvState) -> int:
        logits = natural_logits(state, self.spec)
        temp = self.spec.natural_temperature
        if temp <= 0:
            return int(np.argmax(logits))
        z = logits / temp
        p = np.exp(z - z.max())
        p /= p.sum()
        u = stream(state.seed, state.t + 1, _NATURAL).random()
        return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))

    def apply_operator(self, state: EnvState, operator: Operator) -> tuple[EnvState, np.ndarray]:
        if state.done:
            raise ValueError("rollout already answered")
        if state.t == 0:
            raise ValueError("the first step is not intervened")
        op_id = FULL_SET.by_text(operator.text).id
        cls = OPERATOR_CLASS.get(operator.text, SETUP)
        h = self._step_token_features(state, op_id, cls, 1)[0]
        return replace(state, pending=op_id), h

    def generate_step(self, state: EnvState) -> StepOutcome:
        if state.pending is not None:
            op_id = state.pending
        elif state.t == 0:
            op_id = None
        else:
            op_id = self.natural_choice(state)
        nxt, n, cls = transition(self.spec, state, op_id)
        op = None if op_id is None else FULL_SET[op_id]
        toks = _step_tokens(cls, op, n, nxt.done)
        feats = None if nxt.done else self.decision_features(nxt)
        return StepOutcome(nxt, op, toks, feats, nxt.done)

    def judge(self, state: EnvState, query: Query | None = None) -> bool:
        return bool(state.done and state.correct)

    # -- replay ------------------------------------------------------------
    def replay(self, query: Query, trace: ReasoningTrace) -> list[tuple[EnvState, EnvState, int | None, str]]:
        """Re-run the latent path of a stored trace.

        Returns (state before, state after, op id, class) per step.
        """
        state = self.begin(query, trace.seed)
        out = []
        for i, step in enumerate(trace.steps):
            op_id = None if step.operator is None else FULL_SET.by_text(step.operator.text).id
            if i == 0 and op_id is not None:
                raise ValueError("first step of a trace carries no operator")
            nxt, _, cls = transition(self.spec, state, op_id)
            out.append((state, nxt, op_id, cls))
            state = nxt
        return out

    def token_features(self, query: Query, trace: ReasoningTrace) -> np.ndarray:
        """Features at every token position of ``trace`` (delimiters included)."""
        rows = []
        path = self.replay(query, trace)
        for i, (before, after, op_id, cls) in enumerate(path):
            n = trace.steps[i].token_count
            rows.append(self._step_token_features(before, op_id, cls, n))
            if i < len(path) - 1:
                rows.append(self.decision_features(after)[None, :])
        F = np.concatenate(rows) if rows else np.zeros((0, self.feature_dim))
        if F.shape[0] != trace.total_tokens:
            raise ValueError(f"replayed {F.shape[0]} tokens, trace records {trace.total_tokens}")
        return F

    def decision_points(self, query: Query, trace: ReasoningTrace) -> list[tuple[np.ndarray, EnvState]]:
        """(h_t, latent state) at every decision point followed by a step."""
        path = self.replay(query, trace)
        return [(self.decision_features(after), after) for _, after, _, _ in path[:-1]]


def teacher_samples(env: SyntheticEnv, traces, queries, ops: OperatorSet = RANDOM8_SET):
    """Distillation pairs (H, P_T) from every decision point of ``traces``."""
    H, P = [], []
    for tr in traces:
        for h, st in env.decision_points(queries[tr.query_id], tr):
            H.append(h)
            P.append(teacher_policy(st, env.spec, ops))
    if not H:
        return np.zeros((0, env.feature_dim)), np.zeros((0, len(ops)))
    return np.stack(H), np.stack(P)


# --- brute-force oracle ------------------------------------------------------

MAX_ENUMERATION = 8**8


@dataclass(frozen=True)
class OracleResult:
    sequence: tuple[Operator, ...]
    accuracy: float
    expected_length: float
    expected_steps: float


def brute_force_optimal(
    query: EnvQuery,
    spec: EnvSpec,
    horizon: int,
    rng_seed: int,
    ops: OperatorSet = RANDOM8_SET,
    n_eval: int = 64,
) -> OracleResult:
    """Best operator sequence of length <= ``horizon`` by exhaustive enumeration.

    Every sequence is scored on the same ``n_eval`` rollout seeds. Sequences
    stop early once all rollouts have answered. Ranking: highest accuracy,
    then lowest mean length (tokens), then lexicographic operator ids.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if len(ops) ** horizon > MAX_ENUMERATION:
        raise ValueError(f"{len(ops)}^{horizon} sequences exceeds the enumeration bound {MAX_ENUMERATION}")
    env = SyntheticEnv(spec)
    full_ids = [FULL_SET.by_text(o.text).id for o in ops]
    roots = []
    for j in range(n_eval):
        s = env.begin(query, derive_seed(rng_seed, j))
        roots.append(transition(spec, s, None)[0])

    best: list = [None]

    def score(states):
        acc = sum(1 for s in states if s.done and s.correct) / len(states)
        length = sum(s.tokens - (0 if s.done else 1) for s in states) / len(states)
        steps = sum(s.t for s in states) / len(states)
        return acc, length, steps

    def consider(seq, states):
        acc, length, steps = score(states)
        key = (-acc, length, seq)
        if best[0] is None or key < best[0][0]:
            best[0] = (key, acc, length, steps)

    def dfs(seq, states):
        if len(seq) == horizon or all(s.done for s in states):
            consider(seq, states)
            return
        for k, fid in enumerate(full_ids):
            nxt = [s if s.done else transition(spec, s, fid)[0] for s in states]
            dfs(seq + (k,), nxt)

    dfs((), roots)
    (_, _, seq), acc, length, steps = best[0]
    return OracleResult(tuple(ops[k] for k in seq), acc, length, steps)
