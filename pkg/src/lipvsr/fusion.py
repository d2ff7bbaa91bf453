"""Character error rate scoring and ROVER fusion of recognizer outputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

NULL = "<null>"


@dataclass(frozen=True)
class ErrorCounts:
    rate: float
    substitutions: int
    deletions: int
    insertions: int
    ref_length: int
    empty_reference: bool = False

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_ops(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """(S, D, I) along one minimum-cost Levenshtein path.

    Backtrace prefers match/substitution, then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i][j] = min(diag, d[i - 1][j] + 1, d[i][j - 1] + 1)
    s = de = ins = 0
    i, j = n, m
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            de += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, de, ins


def compute_cer(reference: Sequence, hypothesis: Sequence) -> ErrorCounts:
    """CER of ``hypothesis`` against ``reference``.

    An empty reference is scored over a denominator of 1 (so the rate equals
    the number of inserted tokens) and flagged via ``empty_reference``.
    """
    s, d, i = edit_ops(reference, hypothesis)
    n = len(reference)
    return ErrorCounts((s + d + i) / max(n, 1), s, d, i, n, empty_reference=n == 0)


def corpus_cer(refs: Mapping[str, Sequence], hyps: Mapping[str, Sequence]) -> tuple[float, dict[str, ErrorCounts]]:
    """Corpus CER (total errors over total reference tokens) and per-utterance counts."""
    missing = set(refs) - set(hyps)
    if missing:
        raise ValueError(f"no hypothesis for {len(missing)} utterance(s), e.g. {sorted(missing)[0]!r}")
    per_utt = {uid: compute_cer(refs[uid], hyps[uid]) for uid in refs}
    errors = sum(c.errors for c in per_utt.values())
    total = sum(c.ref_length for c in per_utt.values())
    return errors / max(total, 1), per_utt


def format_report(corpus: float, per_utt: Mapping[str, ErrorCounts]) -> str:
    lines = ["# utterance\tcer\tsub\tdel\tins\tref_len"]
    for uid, c in per_utt.items():
        flag = "\tEMPTY_REF" if c.empty_reference else ""
        lines.append(
            f"{uid}\t{c.rate:.6f}\t{c.substitutions}\t{c.deletions}\t{c.insertions}\t{c.ref_length}{flag}"
        )
    s = sum(c.substitutions for c in per_utt.values())
    d = sum(c.deletions for c in per_utt.values())
    i = sum(c.insertions for c in per_utt.values())
    n = sum(c.ref_length for c in per_utt.values())
    lines.append(f"CORPUS\t{corpus:.6f}\t{s}\t{d}\t{i}\t{n}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ROVER


@dataclass
class ScoredTranscript:
    utterance_id: str
    tokens: tuple[str, ...]
    source_system: str = ""

    def __post_init__(self):
        if not self.utterance_id:
            raise ValueError("utterance id must be non-empty")
        self.tokens = tuple(self.tokens)


@dataclass
class Arc:
    votes: int
    rank: int  # index of the earliest system voting for this arc


@dataclass
class WordTransitionNetwork:
    slots: list[dict[str, Arc]] = field(default_factory=list)
    num_inputs: int = 0

    def winners(self) -> list[str]:
        out = []
        for slot in self.slots:
            best = min(slot.items(), key=lambda kv: (-kv[1].votes, kv[1].rank))[0]
            if best != NULL:
                out.append(best)
        return out

    def _vote(self, slot: dict[str, Arc], token: str, system: int) -> None:
        if token in slot:
            slot[token].votes += 1
        else:
            slot[token] = Arc(1, system)

    def add(self, tokens: Sequence[str]) -> None:
        """Align ``tokens`` against the network and register one vote per slot.

        Alignment cost is compared lexicographically as (gaps, substitutions):
        a token matches a slot for free if the slot already holds it, NULL
        matches a slot for free if the slot has a NULL arc.  Minimizing gaps
        first keeps equal-length inputs position-aligned.
        """
        system = self.num_inputs
        tokens = list(tokens)
        if system == 0:
            self.slots = [{t: Arc(1, 0)} for t in tokens]
            self.num_inputs = 1
            return

        n, m = len(self.slots), len(tokens)
        inf = (float("inf"), float("inf"))

        def add_cost(c, gap, sub):
            return (c[0] + gap, c[1] + sub)

        def sub_cost(slot, tok):
            return (0, 0) if tok in slot else (0, 1)

        def del_cost(slot):
            return (0, 0) if NULL in slot else (1, 0)

        cost = [[inf] * (m + 1) for _ in range(n + 1)]
        cost[0][0] = (0, 0)
        for i in range(n + 1):
            for j in range(m + 1):
                if i == j == 0:
                    continue
                best = inf
                if i and j:
                    best = min(best, add_cost(cost[i - 1][j - 1], *sub_cost(self.slots[i - 1], tokens[j - 1])))
                if i:
                    best = min(best, add_cost(cost[i - 1][j], *del_cost(self.slots[i - 1])))
                if j:
                    best = min(best, add_cost(cost[i][j - 1], 1, 0))
                cost[i][j] = best

        # backtrace: (slot index or None, token or NULL) pairs, built in reverse
        path = []
        i, j = n, m
        while i or j:
            if i and j and cost[i][j] == add_cost(
                cost[i - 1][j - 1], *sub_cost(self.slots[i - 1], tokens[j - 1])
            ):
                path.append((i - 1, tokens[j - 1]))
                i, j = i - 1, j - 1
            elif i and cost[i][j] == add_cost(cost[i - 1][j], *del_cost(self.slots[i - 1])):
                path.append((i - 1, NULL))
                i -= 1
            else:
                path.append((None, tokens[j - 1]))
                j -= 1
        path.reverse()

        slots = []
        for idx, tok in path:
            if idx is None:
                # new slot: every earlier system implicitly voted NULL
                slot = {NULL: Arc(system, 0), tok: Arc(1, system)}
            else:
                slot = self.slots[idx]
                self._vote(slot, tok, system)
            slots.append(slot)
        self.slots = slots
        self.num_inputs += 1


def build_wtn(transcripts: Sequence[Sequence[str]]) -> WordTransitionNetwork:
    wtn = WordTransitionNetwork()
    for tokens in transcripts:
        wtn.add(tokens)
    return wtn


def rover_fuse(transcripts: Sequence[ScoredTranscript], label: str = "rover") -> ScoredTranscript:
    """Fuse one utterance's transcripts by slot-wise majority vote.

    Input order is the system order: earlier systems win ties.
    """
    if not transcripts:
        raise ValueError("nothing to fuse")
    uid = transcripts[0].utterance_id
    if any(t.utterance_id != uid for t in transcripts):
        raise ValueError("all transcripts must belong to the same utterance")
    wtn = build_wtn([t.tokens for t in transcripts])
    return ScoredTranscript(uid, tuple(wtn.winners()), label)


def two_stage_fusion(
    stage1: Sequence[ScoredTranscript], stage2_ft: Sequence[ScoredTranscript]
) -> ScoredTranscript:
    """Fuse the stage-1 outputs into R1, then fuse R1 (first) with the fine-tuned outputs."""
    if not stage1 or not stage2_ft:
        raise ValueError("both fusion stages need at least one transcript")
    r1 = rover_fuse(stage1, label="R1")
    return rover_fuse([r1, *stage2_ft], label="R2")


def fuse_systems(
    systems: Sequence[Mapping[str, Sequence[str]]],
    names: Sequence[str] | None = None,
) -> dict[str, list[str]]:
    """Corpus-level ROVER over hypothesis maps (utterance id -> tokens) in system order."""
    if not systems:
        raise ValueError("nothing to fuse")
    names = list(names) if names is not None else [f"sys{k}" for k in range(len(systems))]
    ids = list(systems[0])
    for name, hyps in zip(names, systems):
        if set(hyps) != set(ids):
            raise ValueError(f"system {name!r} does not cover the same utterances")
    return {
        uid: list(
            rover_fuse([ScoredTranscript(uid, hyps[uid], n) for n, hyps in zip(names, systems)]).tokens
        )
        for uid in ids
    }


def fuse_two_stage_systems(
    stage1: Sequence[Mapping[str, Sequence[str]]],
    stage2_ft: Sequence[Mapping[str, Sequence[str]]],
) -> dict[str, list[str]]:
    r1 = fuse_systems(stage1)
    return fuse_systems([r1, *stage2_ft])


def write_report(path: str | Path, corpus: float, per_utt: Mapping[str, ErrorCounts]) -> None:
    Path(path).write_text(format_report(corpus, per_utt), encoding="utf-8")
