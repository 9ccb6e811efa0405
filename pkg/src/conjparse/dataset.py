"""Corpora: synthetic grammar generation, divergence-based splits, CFQ loading.

The synthetic grammar builds questions out of attachment units, each an
active or passive verb phrase bound to its own entities:

    who funded M0 and was directed by M1 ?   ->   x0 fund M0 . M1 direct x0

Voice flips the edge direction, so parsing requires verb-voice binding, not
mere verb detection. All verbs are regular (participle == past form), which
keeps every surface form shared between voices.

Every example carries its derivation as a chain of rules: each unit's rule
(template id plus unit position, voice included) followed by the verb fills
of that unit in surface order. Atoms are single rules; compounds are adjacent
(parent, child) rule pairs along the chain, covering "verb v fills unit k of
template t" and the ordered verb bigrams inside a conjunction. Entity fills
are deliberately not rules: entity mentions are anonymized to interchangeable
slot tokens before the model ever sees them, so entity identity carries no
signal worth balancing.

Splits either sample uniformly (random baseline) or run a greedy swap search
that maximizes compound divergence between train and test while keeping atom
divergence under a target.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation, DataError

TAG_VERB = "VERB"


@dataclass(frozen=True)
class Example:
    question: str
    query: str
    derivation: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# synthetic grammar
# ---------------------------------------------------------------------------

@dataclass
class Verb:
    past: str        # "directed" (who-questions)
    infinitive: str  # "direct"   (did-questions)
    relation: str

    def surface(self, form: str) -> str:
        return self.past if form == "past" else self.infinitive


WhoUnit = tuple[str, int, int]          # (voice "a"|"p", n_verbs, n_entities)
AskShape = tuple[str, int, int, int]    # (voice, n_subjects, n_verbs, n_objects)


def _who_tid(units) -> str:
    return "who_" + "_".join(f"{v}{nv}e{ne}" for v, nv, ne in units)


def _ask_tid(shape) -> str:
    voice, ns, nv, no = shape
    return f"ask_{voice}_s{ns}v{nv}o{no}"


@dataclass
class GrammarConfig:
    entities: list[str]
    verbs: list[Verb]
    # who-questions: a sequence of attachment units, each an active verb
    # phrase "V (and V) E (and E)" or a passive one "was V (and V) by E";
    # active units emit x0 -> entity edges, passive ones entity -> x0
    who_templates: list[tuple[WhoUnit, ...]] = field(default_factory=lambda: [
        (("a", 1, 1),), (("a", 2, 1),), (("a", 3, 1),), (("a", 1, 2),),
        (("a", 2, 2),), (("p", 1, 1),), (("p", 2, 1),), (("p", 1, 2),),
        (("a", 1, 1), ("a", 1, 1)), (("a", 2, 1), ("a", 1, 1)),
        (("a", 1, 1), ("p", 1, 1)), (("p", 1, 1), ("a", 1, 1)),
        (("a", 2, 1), ("p", 1, 1)), (("p", 2, 1), ("a", 1, 1)),
        (("p", 1, 1), ("p", 1, 1)),
    ])
    # ask-questions: "did S (and S) V O (and O)" or "was O V (and V) by S
    # (and S)"; edges always run subject -> object
    ask_templates: list[AskShape] = field(default_factory=lambda: [
        ("a", 1, 1, 1), ("a", 2, 1, 1), ("p", 1, 1, 1), ("p", 2, 1, 1)])

    def template_ids(self) -> list[str]:
        return ([_who_tid(u) for u in self.who_templates]
                + [_ask_tid(s) for s in self.ask_templates])

    def pos_lexicon(self) -> dict[str, str]:
        lex = {"and": "CONJ"}
        for v in self.verbs:
            lex[v.past] = TAG_VERB
            lex[v.infinitive] = TAG_VERB
        return lex

    def entity_lexicon(self) -> dict[str, str]:
        return {e: e for e in self.entities}


DEFAULT_GRAMMAR = GrammarConfig(
    entities=["inception", "goldfinger", "vertigo", "avatar", "titanic",
              "alice", "bob", "carol", "dave", "erin", "frank", "grace"],
    verbs=[Verb("directed", "direct", "direct"),
           Verb("produced", "produce", "produce"),
           Verb("edited", "edit", "edit"),
           Verb("funded", "fund", "fund"),
           Verb("advised", "advise", "advise"),
           Verb("mentored", "mentor", "mentor"),
           Verb("praised", "praise", "praise"),
           Verb("starred", "star", "star")],
)


def grammar_from_json(payload: dict) -> GrammarConfig:
    verbs = [Verb(**v) for v in payload["verbs"]]
    kwargs = {"entities": list(payload["entities"]), "verbs": verbs}
    if "who_templates" in payload:
        kwargs["who_templates"] = [tuple(tuple(u) for u in t)
                                   for t in payload["who_templates"]]
    if "ask_templates" in payload:
        kwargs["ask_templates"] = [tuple(t) for t in payload["ask_templates"]]
    return GrammarConfig(**kwargs)


def _conj(words: list[str]) -> str:
    out = []
    for i, w in enumerate(words):
        if i:
            out.append("and")
        out.append(w)
    return " ".join(out)


def generate(grammar: GrammarConfig, n_examples: int, seed: int,
             max_vars: int = 8) -> list[Example]:
    """Deterministic synthetic corpus: uniform over templates, verbs and
    entities sampled without replacement inside one question."""
    if max_vars < 1:
        raise ConfigError("generator needs a variable budget of at least 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    templates = ([("who", units) for units in grammar.who_templates]
                 + [("ask", shape) for shape in grammar.ask_templates])
    need_entities = max(
        [sum(ne for _, _, ne in units) for units in grammar.who_templates] +
        [ns + no for _, ns, _, no in grammar.ask_templates])
    if need_entities > len(grammar.entities):
        raise ConfigError(f"templates need {need_entities} distinct entities, "
                          f"pool has {len(grammar.entities)}")
    need_verbs = max(
        [sum(nv for _, nv, _ in units) for units in grammar.who_templates] +
        [nv for _, _, nv, _ in grammar.ask_templates])
    if need_verbs > len(grammar.verbs):
        raise ConfigError(f"templates need {need_verbs} distinct verbs, "
                          f"pool has {len(grammar.verbs)}")
    if max_vars < 1:
        raise ConfigError("who-templates need a variable budget of at least 1")

    out = []
    for _ in range(n_examples):
        form, shape = templates[int(rng.integers(len(templates)))]
        if form == "who":
            units = shape
            total_v = sum(nv for _, nv, _ in units)
            total_e = sum(ne for _, _, ne in units)
            verbs = [grammar.verbs[i] for i in rng.choice(len(grammar.verbs), total_v, replace=False)]
            ents = [grammar.entities[i] for i in rng.choice(len(grammar.entities), total_e, replace=False)]
            tid = _who_tid(units)
            vi = ei = 0
            parts, clauses, derivation = [], [], []
            for k, (voice, nv, ne) in enumerate(units):
                unit_verbs = verbs[vi:vi + nv]
                slot_lo = ei
                unit_ents = ents[ei:ei + ne]
                vi += nv
                ei += ne
                vp = _conj([v.past for v in unit_verbs])
                if voice == "a":
                    parts.append(f"{vp} {_conj(unit_ents)}")
                    clauses.extend(f"x0 {v.relation} M{slot_lo + j}"
                                   for v in unit_verbs for j in range(ne))
                else:
                    parts.append(f"was {vp} by {_conj(unit_ents)}")
                    clauses.extend(f"M{slot_lo + j} {v.relation} x0"
                                   for v in unit_verbs for j in range(ne))
                derivation.append(f"{tid}:{k}")
                derivation.extend(f"v:{v.past}" for v in unit_verbs)
            question = f"who {' and '.join(parts)} ?"
            query = f"SELECT x0 WHERE {{ {' . '.join(sorted(clauses))} }}"
        else:
            voice, ns, nv, no = shape
            verbs = [grammar.verbs[i] for i in rng.choice(len(grammar.verbs), nv, replace=False)]
            ents = [grammar.entities[i] for i in rng.choice(len(grammar.entities), ns + no, replace=False)]
            tid = _ask_tid(shape)
            if voice == "a":
                subj, obj = ents[:ns], ents[ns:]
                question = (f"did {_conj(subj)} {_conj([v.infinitive for v in verbs])} "
                            f"{_conj(obj)} ?")
                clauses = [f"M{i} {v.relation} M{ns + j}"
                           for i in range(ns) for v in verbs for j in range(no)]
                verb_rules = tuple(f"v:{v.infinitive}" for v in verbs)
            else:
                # passive fronts the objects: "was O (and O) V by S (and S) ?"
                obj, subj = ents[:no], ents[no:]
                question = (f"was {_conj(obj)} {_conj([v.past for v in verbs])} "
                            f"by {_conj(subj)} ?")
                clauses = [f"M{no + i} {v.relation} M{j}"
                           for i in range(ns) for v in verbs for j in range(no)]
                verb_rules = tuple(f"v:{v.past}" for v in verbs)
            query = f"ASK WHERE {{ {' . '.join(sorted(clauses))} }}"
            derivation = [f"{tid}:0", *verb_rules]
        out.append(Example(question=question, query=query,
                           derivation=tuple(derivation)))
    return out


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

def save_examples(path: str, examples: list[Example]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            row = {"question": ex.question, "query": ex.query}
            if ex.derivation:
                row["derivation"] = list(ex.derivation)
            f.write(json.dumps(row) + "\n")


def load_examples(path: str) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: malformed JSON ({e.msg})") from None
            try:
                out.append(Example(question=row["question"], query=row["query"],
                                   derivation=tuple(row.get("derivation", ()))))
            except KeyError as e:
                raise DataError(f"{path}:{line_no}: missing field {e}") from None
    return out


# ---------------------------------------------------------------------------
# divergence and splits
# ---------------------------------------------------------------------------

def divergence(p: dict, q: dict, alpha: float = 0.5) -> float:
    """1 minus the Chernoff coefficient sum_x p(x)^a q(x)^(1-a) of the
    normalized distributions. Symmetric at a=0.5; 0 iff equal, 1 iff the
    supports are disjoint."""
    if not p or not q:
        raise ContractViolation("divergence: empty frequency map")
    tp, tq = float(sum(p.values())), float(sum(q.values()))
    if tp <= 0 or tq <= 0:
        raise ContractViolation("divergence: non-positive total mass")
    coeff = 0.0
    for x in set(p) | set(q):
        px, qx = p.get(x, 0.0) / tp, q.get(x, 0.0) / tq
        if px > 0 and qx > 0:
            coeff += (px ** alpha) * (qx ** (1.0 - alpha))
    return min(1.0, max(0.0, 1.0 - coeff))


def atom_counts(ex: Example) -> Counter:
    return Counter(ex.derivation)


def compound_counts(ex: Example) -> Counter:
    return Counter(zip(ex.derivation, ex.derivation[1:]))


@dataclass
class SplitSpec:
    train: list[int]
    test: list[int]
    atom_divergence: float
    compound_divergence: float
    method: str = "mcd"
    seed: int = 0
    warning: str | None = None

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"train": self.train, "test": self.test,
                       "atom_divergence": self.atom_divergence,
                       "compound_divergence": self.compound_divergence,
                       "method": self.method, "seed": self.seed,
                       "warning": self.warning}, f)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "SplitSpec":
        with open(path, encoding="utf-8") as f:
            row = json.load(f)
        return cls(train=list(row["train"]), test=list(row["test"]),
                   atom_divergence=row["atom_divergence"],
                   compound_divergence=row["compound_divergence"],
                   method=row.get("method", "mcd"), seed=row.get("seed", 0),
                   warning=row.get("warning"))


def _require_derivations(examples: list[Example]) -> None:
    missing = [i for i, ex in enumerate(examples) if not ex.derivation]
    if missing:
        raise DataError(f"{len(missing)} examples lack derivations "
                        f"(first at index {missing[0]}); divergence splits need them")


class _SplitState:
    """Dense count vectors over atom/compound vocabularies for fast swap search."""

    def __init__(self, examples: list[Example]):
        _require_derivations(examples)
        self.n = len(examples)
        a_vocab: dict = {}
        c_vocab: dict = {}
        self.ex_atoms = []
        self.ex_comps = []
        for ex in examples:
            ac = atom_counts(ex)
            cc = compound_counts(ex)
            self.ex_atoms.append([(a_vocab.setdefault(k, len(a_vocab)), v)
                                  for k, v in sorted(ac.items())])
            self.ex_comps.append([(c_vocab.setdefault(k, len(c_vocab)), v)
                                  for k, v in sorted(cc.items())])
        self.n_atoms = len(a_vocab)
        self.n_comps = len(c_vocab)

    def vectors(self, idxs, kind: str) -> np.ndarray:
        size = self.n_atoms if kind == "atoms" else self.n_comps
        rows = self.ex_atoms if kind == "atoms" else self.ex_comps
        v = np.zeros(size)
        for i in idxs:
            for k, c in rows[i]:
                v[k] += c
        return v


def _vec_divergence(a: np.ndarray, b: np.ndarray) -> float:
    ta, tb = a.sum(), b.sum()
    if ta <= 0 or tb <= 0:
        raise ContractViolation("divergence: non-positive total mass")
    return min(1.0, max(0.0, 1.0 - float(np.sqrt((a / ta) * (b / tb)).sum())))


def _apply(vec: np.ndarray, items, sign: float) -> None:
    for k, c in items:
        vec[k] += sign * c


def random_split(examples: list[Example], test_frac: float = 0.2,
                 seed: int = 0) -> SplitSpec:
    """Uniform random partition with measured divergences (contrast baseline)."""
    _require_derivations(examples)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
    order = rng.permutation(len(examples))
    n_test = max(1, int(round(len(examples) * test_frac)))
    test = sorted(int(i) for i in order[:n_test])
    train = sorted(int(i) for i in order[n_test:])
    st = _SplitState(examples)
    return SplitSpec(
        train=train, test=test,
        atom_divergence=_vec_divergence(st.vectors(train, "atoms"), st.vectors(test, "atoms")),
        compound_divergence=_vec_divergence(st.vectors(train, "compounds"), st.vectors(test, "compounds")),
        method="random", seed=seed)


def mcd_split(examples: list[Example], target_atom_div: float = 0.02,
              seed: int = 0, swap_budget: int = 50_000,
              test_frac: float = 0.2) -> SplitSpec:
    """Greedy swap search for a maximum-compound-divergence split.

    Starts from a random partition and repeatedly proposes train/test example
    swaps, accepting a swap iff it strictly increases compound divergence while
    keeping atom divergence at or under the target. Proposals alternate between
    uniform picks and picks biased toward examples whose compounds sit mostly
    on the other side (the bias speeds convergence without changing the
    acceptance rule).
    """
    st = _SplitState(examples)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 13)))
    order = rng.permutation(st.n)
    n_test = max(1, int(round(st.n * test_frac)))
    test = [int(i) for i in order[:n_test]]
    train = [int(i) for i in order[n_test:]]

    ta = st.vectors(train, "atoms")
    te = st.vectors(test, "atoms")
    ca = st.vectors(train, "compounds")
    ce = st.vectors(test, "compounds")

    atom_div = _vec_divergence(ta, te)
    comp_div = _vec_divergence(ca, ce)
    budget = swap_budget
    warning = None

    # repair phase: legal starting point under the atom constraint
    while atom_div > target_atom_div and budget > 0:
        budget -= 1
        i_pos = int(rng.integers(len(train)))
        j_pos = int(rng.integers(len(test)))
        i, j = train[i_pos], test[j_pos]
        for vec, a, b in ((ta, i, j), (te, j, i)):
            _apply(vec, st.ex_atoms[a], -1.0)
            _apply(vec, st.ex_atoms[b], +1.0)
        new_atom = _vec_divergence(ta, te)
        if new_atom < atom_div:
            atom_div = new_atom
            train[i_pos], test[j_pos] = j, i
            _apply(ca, st.ex_comps[i], -1.0)
            _apply(ca, st.ex_comps[j], +1.0)
            _apply(ce, st.ex_comps[j], -1.0)
            _apply(ce, st.ex_comps[i], +1.0)
            comp_div = _vec_divergence(ca, ce)
        else:  # undo
            for vec, a, b in ((ta, i, j), (te, j, i)):
                _apply(vec, st.ex_atoms[b], -1.0)
                _apply(vec, st.ex_atoms[a], +1.0)
    if atom_div > target_atom_div:
        warning = (f"atom constraint infeasible from this initialization: "
                   f"best atom divergence {atom_div:.4f} > {target_atom_div}")

    def comp_gain_scores(side_idx, own_vec, other_vec):
        # examples whose compound mass is relatively larger on the other side
        own_t, oth_t = own_vec.sum(), other_vec.sum()
        scores = np.empty(len(side_idx))
        for pos, i in enumerate(side_idx):
            s = 0.0
            for k, c in st.ex_comps[i]:
                s += c * (other_vec[k] / oth_t - own_vec[k] / own_t)
            scores[pos] = s
        return scores

    stall = 0
    while budget > 0 and stall < max(2000, swap_budget // 5):
        budget -= 1
        stall += 1
        if rng.random() < 0.5:
            i_pos = int(rng.integers(len(train)))
            j_pos = int(rng.integers(len(test)))
        else:
            # biased proposal: sample a handful and pick the most misplaced
            cand_i = rng.integers(len(train), size=8)
            cand_j = rng.integers(len(test), size=8)
            gi = comp_gain_scores([train[p] for p in cand_i], ca, ce)
            gj = comp_gain_scores([test[p] for p in cand_j], ce, ca)
            i_pos = int(cand_i[int(np.argmax(gi))])
            j_pos = int(cand_j[int(np.argmax(gj))])
        i, j = train[i_pos], test[j_pos]

        _apply(ta, st.ex_atoms[i], -1.0)
        _apply(ta, st.ex_atoms[j], +1.0)
        _apply(te, st.ex_atoms[j], -1.0)
        _apply(te, st.ex_atoms[i], +1.0)
        _apply(ca, st.ex_comps[i], -1.0)
        _apply(ca, st.ex_comps[j], +1.0)
        _apply(ce, st.ex_comps[j], -1.0)
        _apply(ce, st.ex_comps[i], +1.0)
        new_atom = _vec_divergence(ta, te)
        new_comp = _vec_divergence(ca, ce)
        if new_comp > comp_div + 1e-12 and new_atom <= target_atom_div:
            comp_div, atom_div = new_comp, new_atom
            train[i_pos], test[j_pos] = j, i
            stall = 0
        else:
            _apply(ta, st.ex_atoms[j], -1.0)
            _apply(ta, st.ex_atoms[i], +1.0)
            _apply(te, st.ex_atoms[i], -1.0)
            _apply(te, st.ex_atoms[j], +1.0)
            _apply(ca, st.ex_comps[j], -1.0)
            _apply(ca, st.ex_comps[i], +1.0)
            _apply(ce, st.ex_comps[i], -1.0)
            _apply(ce, st.ex_comps[j], +1.0)

    return SplitSpec(train=sorted(train), test=sorted(test),
                     atom_divergence=atom_div, compound_divergence=comp_div,
                     method="mcd", seed=seed, warning=warning)


# ---------------------------------------------------------------------------
# CFQ-format loading
# ---------------------------------------------------------------------------

_PREFIX_RE = re.compile(r"^[A-Za-z_][\w.-]*:")
_VAR_RE = re.compile(r"^\?x(\d+)$")
_SLOT_RE = re.compile(r"^M\d+$")


def normalize_sparql(sparql: str) -> tuple[str | None, str | None]:
    """Reduce a CFQ-style SPARQL string to the package query grammar.

    Returns (query_text, None) on success or (None, reason) when the query
    falls outside the conjunctive fragment (FILTER, type assertions, literal
    entities, property paths)."""
    s = " ".join(sparql.replace("{", " { ").replace("}", " } ").split())
    toks = s.split()
    if not toks:
        return None, "empty"
    upper = [t.upper() for t in toks]
    if upper[0] == "ASK":
        head = "ASK"
        body_start = 1
    elif upper[0] == "SELECT":
        try:
            w = upper.index("WHERE")
        except ValueError:
            return None, "no WHERE"
        proj = [t for t in toks[1:w] if t.upper() != "DISTINCT"]
        if len(proj) != 1 or not _VAR_RE.match(proj[0]):
            return None, "unsupported projection"
        head = "SELECT x0"
        body_start = w
    else:
        return None, "unsupported form"
    try:
        lo = toks.index("{", body_start)
        hi = len(toks) - 1 - toks[::-1].index("}")
    except ValueError:
        return None, "no braces"
    body = toks[lo + 1:hi]
    if any(t.upper() == "FILTER" for t in body):
        return None, "FILTER clause"

    clauses = []
    cur: list[str] = []
    for t in body:
        if t == ".":
            if cur:
                clauses.append(cur)
                cur = []
        else:
            cur.append(t)
    if cur:
        clauses.append(cur)

    out = []
    for clause in clauses:
        if len(clause) != 3:
            return None, f"non-triple clause {' '.join(clause)!r}"
        subj, pred, obj = clause
        if pred.lower() == "a":
            return None, "type assertion"

        def term(t):
            m = _VAR_RE.match(t)
            if m:
                return f"x{m.group(1)}"
            if _SLOT_RE.match(t):
                return t
            return None
        ts, to = term(subj), term(obj)
        if ts is None or to is None:
            return None, f"non-slot term in {' '.join(clause)!r}"
        if "/" in pred or "|" in pred or "*" in pred:
            return None, "property path"
        rel = _PREFIX_RE.sub("", pred).lower()
        rel = re.sub(r"[^a-z_]", "_", rel)
        if not rel or not re.fullmatch(r"[a-z_]+", rel):
            return None, f"unusable relation {pred!r}"
        out.append(f"{ts} {rel} {to}")
    if not out:
        return None, "empty body"
    return f"{head} WHERE {{ {' . '.join(out)} }}", None


def load_cfq(path: str, question_field: str = "question",
             query_field: str = "query", strict: bool = False,
             limit: int | None = None) -> tuple[list[Example], Counter]:
    """Load a CFQ-format JSONL file, normalizing queries into the package
    grammar. Out-of-fragment examples are skipped and counted by reason
    (or raise under strict)."""
    out: list[Example] = []
    skipped: Counter = Counter()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if limit is not None and len(out) >= limit:
                break
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: malformed JSON ({e.msg})") from None
            if question_field not in row or query_field not in row:
                raise DataError(f"{path}:{line_no}: missing {question_field!r} or {query_field!r}")
            query, reason = normalize_sparql(row[query_field])
            if query is None:
                if strict:
                    raise DataError(f"{path}:{line_no}: query outside conjunctive "
                                    f"fragment ({reason})")
                skipped[reason] += 1
                continue
            out.append(Example(question=row[question_field], query=query))
    return out, skipped
