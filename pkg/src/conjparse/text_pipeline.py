"""Question preprocessing: tokenization, entity anonymization, group merging.

The pipeline turns a raw question into the encoder's input layout

    g_1, ..., g_k, [SEP], x_1, ..., x_n, NIL

where each g_i is a "group": either a single token or a run of same-tag tokens
joined by "and" ("directed and produced" -> one group [directed, produced],
with the "and" tokens dropped). Entity mentions are replaced by slot tokens
M0, M1, ... before tagging, and slot tokens are always taggable (ENT), so
"M0 and M1" merges like any other same-tag run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

TAG_CONJ = "CONJ"
TAG_OTHER = "OTHER"
TAG_ENT = "ENT"

SLOT_RE = re.compile(r"^M(\d+)$")
_TOKEN_RE = re.compile(r"M\d+|[A-Za-z_'][A-Za-z_'0-9]*|\d+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Whitespace plus punctuation splitting, lowercased. Slot tokens (M0, M1,
    ...) keep their case so pre-anonymized questions pass through."""
    out = []
    for tok in _TOKEN_RE.findall(text):
        out.append(tok if SLOT_RE.match(tok) else tok.lower())
    return out


@dataclass(frozen=True)
class AnonymizedQuestion:
    tokens: tuple[str, ...]
    entity_slots: dict[int, str]          # slot id -> original surface
    mention_positions: dict[int, tuple[int, ...]]  # slot id -> token positions


@dataclass(frozen=True)
class Group:
    members: tuple[str, ...]
    positions: tuple[int, ...]  # source token positions
    tag: str


@dataclass(frozen=True)
class EncoderInput:
    groups: tuple[Group, ...]
    n_vars: int
    slot_to_group: dict[int, int]  # entity slot id -> group index

    @property
    def sep_pos(self) -> int:
        return len(self.groups)

    def var_pos(self, i: int) -> int:
        return len(self.groups) + 1 + i

    @property
    def nil_pos(self) -> int:
        return len(self.groups) + 1 + self.n_vars

    @property
    def length(self) -> int:
        return len(self.groups) + 2 + self.n_vars


def anonymize(question: str, entity_lexicon: dict[str, str]) -> AnonymizedQuestion:
    """Replace entity mentions with slot tokens M0, M1, ... by longest match.

    Repeated mentions of one canonical entity reuse the first slot id. Tokens
    that already look like slots (M0, ...) pass through as their own slots,
    so pre-anonymized corpora need no lexicon.
    """
    lex: dict[tuple[str, ...], str] = {}
    for surface, canon in entity_lexicon.items():
        lex[tuple(tokenize(surface))] = canon
    max_len = max((len(k) for k in lex), default=0)

    toks = tokenize(question)
    out: list[str] = []
    slots: dict[int, str] = {}
    canon_to_slot: dict[str, int] = {}
    positions: dict[int, list[int]] = {}

    def emit_slot(canon: str, surface: str) -> None:
        if canon not in canon_to_slot:
            canon_to_slot[canon] = len(canon_to_slot)
            slots[canon_to_slot[canon]] = surface
        sid = canon_to_slot[canon]
        positions.setdefault(sid, []).append(len(out))
        out.append(f"M{sid}")

    i = 0
    while i < len(toks):
        m = SLOT_RE.match(toks[i])
        if m:
            emit_slot(f"#{toks[i]}", toks[i])
            i += 1
            continue
        matched = 0
        for n in range(min(max_len, len(toks) - i), 0, -1):
            key = tuple(toks[i:i + n])
            if key in lex:
                emit_slot(lex[key], " ".join(key))
                matched = n
                break
        if matched:
            i += matched
        else:
            out.append(toks[i])
            i += 1

    return AnonymizedQuestion(tuple(out), slots,
                              {s: tuple(p) for s, p in positions.items()})


def deanonymize(a: AnonymizedQuestion) -> list[str]:
    """Substitute slot surfaces back; inverse of anonymize at the token level."""
    out: list[str] = []
    for tok in a.tokens:
        m = SLOT_RE.match(tok)
        if m and int(m.group(1)) in a.entity_slots:
            out.extend(tokenize(a.entity_slots[int(m.group(1))]))
        else:
            out.append(tok)
    return out


def tag_token(token: str, pos_lexicon: dict[str, str]) -> str:
    if token == "and":
        return TAG_CONJ
    if SLOT_RE.match(token):
        return TAG_ENT
    return pos_lexicon.get(token, TAG_OTHER)


def merge_groups(a: AnonymizedQuestion, pos_lexicon: dict[str, str],
                 n_vars: int = 4) -> EncoderInput:
    """Collapse maximal runs `w ("and" w)*` of same-tag tokens into one group.

    Only tags other than CONJ/OTHER merge; the "and" tokens inside a merged run
    are dropped. Everything else becomes a singleton group.
    """
    toks = a.tokens
    tags = [tag_token(t, pos_lexicon) for t in toks]
    groups: list[Group] = []
    i = 0
    while i < len(toks):
        tag = tags[i]
        members = [toks[i]]
        positions = [i]
        j = i
        if tag not in (TAG_CONJ, TAG_OTHER):
            while (j + 2 < len(toks) and tags[j + 1] == TAG_CONJ
                   and tags[j + 2] == tag):
                members.append(toks[j + 2])
                positions.append(j + 2)
                j += 2
        groups.append(Group(tuple(members), tuple(positions), tag))
        i = j + 1

    pos_to_group = {p: gi for gi, g in enumerate(groups) for p in g.positions}
    slot_to_group = {}
    for sid, mentions in a.mention_positions.items():
        gis = {pos_to_group[p] for p in mentions}
        # a slot mentioned in several groups keeps its first; the encoder sums
        # over all mention groups via the positions recorded per group
        slot_to_group[sid] = min(gis)
    return EncoderInput(tuple(groups), n_vars, slot_to_group)


def slot_group_indices(e: EncoderInput, slot: int) -> list[int]:
    """All group indices whose members mention the given slot."""
    tok = f"M{slot}"
    return [gi for gi, g in enumerate(e.groups) if tok in g.members]


def degroup(e: EncoderInput) -> EncoderInput:
    """Expand every group back to singleton tokens, restoring the dropped
    "and" tokens. Used by the group-unaware model variant."""
    groups: list[Group] = []
    pos = 0
    for g in e.groups:
        for i, member in enumerate(g.members):
            if i > 0:
                groups.append(Group(("and",), (pos,), TAG_CONJ))
                pos += 1
            groups.append(Group((member,), (pos,), g.tag))
            pos += 1
    slot_to_group = {}
    for gi, g in enumerate(groups):
        m = SLOT_RE.match(g.members[0])
        if m and int(m.group(1)) not in slot_to_group:
            slot_to_group[int(m.group(1))] = gi
    return EncoderInput(tuple(groups), e.n_vars, slot_to_group)


def read_lexicon(path: str) -> dict[str, str]:
    """One `key<TAB>value` pair per line, UTF-8. Used for both PoS lexicons
    (token -> tag) and entity lexicons (surface -> canonical id)."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected 'key<TAB>value', got {line!r}")
            out[parts[0]] = parts[1]
    return out


def write_lexicon(path: str, entries: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k in sorted(entries):
            f.write(f"{k}\t{entries[k]}\n")
