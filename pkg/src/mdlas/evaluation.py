"""WER scoring, per-dialect reporting, mismatched-vector probes, and the
spelling-variant (lexical switch) analysis.

WER is word level even though the model emits graphemes: hypotheses are
stripped of control/dialect tokens and split on whitespace before the
Levenshtein alignment.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Utterance, model_inputs
from .dialects import strip_dialect_tokens
from .errors import ContractError


def edit_distance_alignment(ref: list[str], hyp: list[str]):
    """Levenshtein alignment with unit costs.

    Returns (substitutions, deletions, insertions, alignment). The
    backtrace prefers substitution over insertion over deletion on ties.
    Alignment entries are (op, ref_index, hyp_index) with op in
    match/sub/ins/del and None for the missing side.
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ri != hyp[j - 1])
            ins = dist[i, j - 1] + 1
            dele = dist[i - 1, j] + 1
            dist[i, j] = min(sub, ins, dele)
    i, j = n, m
    ops = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            op = "match" if ref[i - 1] == hyp[j - 1] else "sub"
            ops.append((op, i - 1, j - 1))
            i -= 1
            j -= 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            ops.append(("ins", None, j - 1))
            j -= 1
        else:
            ops.append(("del", i - 1, None))
            i -= 1
    ops.reverse()
    subs = sum(1 for op, _, _ in ops if op == "sub")
    dels = sum(1 for op, _, _ in ops if op == "del")
    inss = sum(1 for op, _, _ in ops if op == "ins")
    return subs, dels, inss, ops


@dataclass
class DialectCounts:
    subs: int = 0
    dels: int = 0
    inss: int = 0
    ref_words: int = 0

    @property
    def wer(self) -> float:
        errors = self.subs + self.dels + self.inss
        if self.ref_words == 0:
            return 0.0 if errors == 0 else math.inf
        return errors / self.ref_words


@dataclass
class EvalReport:
    counts: dict[str, DialectCounts]
    truncated: int
    dialect_pred_total: int
    dialect_pred_errors: int

    @property
    def per_dialect_wer(self) -> dict[str, float]:
        return {code: c.wer for code, c in self.counts.items()}

    @property
    def overall_wer(self) -> float:
        """Reference-token-weighted WER over all dialects."""
        errors = sum(c.subs + c.dels + c.inss for c in self.counts.values())
        ref = sum(c.ref_words for c in self.counts.values())
        if ref == 0:
            return 0.0 if errors == 0 else math.inf
        return errors / ref

    @property
    def dialect_prediction_error(self) -> float | None:
        if self.dialect_pred_total == 0:
            return None
        return self.dialect_pred_errors / self.dialect_pred_total

    def to_json(self) -> dict:
        return {
            "overall_wer": self.overall_wer,
            "per_dialect": {
                code: {
                    "wer": c.wer,
                    "substitutions": c.subs,
                    "deletions": c.dels,
                    "insertions": c.inss,
                    "ref_words": c.ref_words,
                }
                for code, c in self.counts.items()
            },
            "truncated": self.truncated,
            "dialect_prediction_error": self.dialect_prediction_error,
        }


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MDLAS_THREADS", "1")))
    except ValueError:
        return 1


def _feed_id(policy, utt: Utterance, model) -> int | None:
    if policy == "oracle":
        return utt.dialect_id
    if isinstance(policy, tuple) and len(policy) == 2 and policy[0] == "fixed":
        if not model.config.conditioning.needs_vector:
            raise ContractError(
                "fixed dialect feed needs a model with dialect-vector conditioning"
            )
        return policy[1]
    raise ValueError(f"unknown dialect feed policy {policy!r}")


def evaluate(model, utterances: list[Utterance], dialect_feed="oracle") -> EvalReport:
    """Greedy-decode every utterance and score word-level WER per dialect.

    ``dialect_feed`` is "oracle" (each utterance's true dialect) or
    ("fixed", id) to probe a wrong vector. Dialect-token models also get
    their hypothesis dialect prediction scored; a missing token counts as
    an error.
    """
    counts = {d.code: DialectCounts() for d in model.config.inventory.dialects}
    truncated = 0
    pred_total = 0
    pred_errors = 0
    vocab = model.vocab
    track_pred = model.config.conditioning.uses_tokens

    def decode(utt: Utterance):
        feats = model_inputs(utt, model.dtype)
        return model.greedy_decode(feats, _feed_id(dialect_feed, utt, model))

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(decode, utterances))
    else:
        results = [decode(u) for u in utterances]

    for utt, res in zip(utterances, results):
        text, predicted = strip_dialect_tokens(res.token_ids, vocab)
        s, d, i, _ = edit_distance_alignment(utt.transcript.split(), text.split())
        c = counts[utt.dialect_code]
        c.subs += s
        c.dels += d
        c.inss += i
        c.ref_words += len(utt.transcript.split())
        truncated += res.truncated
        if track_pred:
            pred_total += 1
            pred_errors += predicted != utt.dialect_code
    return EvalReport(counts, truncated, pred_total, pred_errors)


@dataclass
class MismatchMatrix:
    codes: list[str]
    values: np.ndarray  # [D, D]; rows = fed vector, columns = test dialect

    def mean_off_diagonal(self) -> float:
        d = len(self.codes)
        mask = ~np.eye(d, dtype=bool)
        return float(self.values[mask].mean())

    def write_csv(self, path: str):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["fed\\test"] + self.codes)
            for code, rowvals in zip(self.codes, self.values):
                w.writerow([code] + [f"{v:.6f}" for v in rowvals])


def mismatch_matrix(model, test_utterances: list[Utterance], injection_site: str) -> MismatchMatrix:
    """Relative WER change when feeding vector r (rows) on test dialect c
    (columns), against the matched-vector WER. Diagonal is exactly zero."""
    cond = model.config.conditioning
    site_ok = {
        "encoder": cond.encoder_vector or cond.cat_encoder,
        "decoder": cond.decoder_vector,
        "both": cond.encoder_vector and cond.decoder_vector,
    }
    if injection_site not in site_ok:
        raise ValueError(f"unknown injection site {injection_site!r}")
    if not site_ok[injection_site]:
        raise ContractError(f"model does not inject dialect vectors at {injection_site}")
    inv = model.config.inventory
    codes = inv.codes
    by_dialect = {code: [u for u in test_utterances if u.dialect_code == code] for code in codes}
    wer = np.zeros((len(codes), len(codes)))
    for r in range(len(codes)):
        for c, code in enumerate(codes):
            report = evaluate(model, by_dialect[code], dialect_feed=("fixed", r))
            wer[r, c] = report.per_dialect_wer[code]
    values = np.zeros_like(wer)
    for c in range(len(codes)):
        base = wer[c, c]
        for r in range(len(codes)):
            if r == c:
                continue
            values[r, c] = (wer[r, c] - base) / base if base > 0 else 0.0
    return MismatchMatrix(codes, values)


@dataclass
class LexicalSwitchResult:
    pair: tuple[str, str, str, str]  # dialect_a, spelling_a, dialect_b, spelling_b
    occurrences: int
    switched: int

    @property
    def measurable(self) -> bool:
        return self.occurrences > 0

    @property
    def switch_rate(self) -> float | None:
        return self.switched / self.occurrences if self.measurable else None


def lexical_switch_analysis(
    model, minimal_pairs, test_utterances: list[Utterance]
) -> list[LexicalSwitchResult]:
    """Decode pair-word utterances twice (true vector, swapped vector) and
    count how many pair-word occurrences flip to the other spelling.

    Both directions of each pair are probed. Pairs whose words never show
    up in a decodable context are reported as not measurable.
    """
    if not model.config.conditioning.decoder_vector:
        raise ContractError("lexical switch analysis needs decoder-side vector conditioning")
    inv = model.config.inventory
    vocab = model.vocab
    results = []
    for pair in minimal_pairs:
        dialect_a, spelling_a, dialect_b, spelling_b = pair
        occurrences = 0
        switched = 0
        for here, there, spell_here, spell_there in (
            (dialect_a, dialect_b, spelling_a, spelling_b),
            (dialect_b, dialect_a, spelling_b, spelling_a),
        ):
            here_id = inv.by_code(here).id
            there_id = inv.by_code(there).id
            for utt in test_utterances:
                if utt.dialect_code != here or spell_here not in utt.transcript.split():
                    continue
                feats = model_inputs(utt, model.dtype)
                own = model.greedy_decode(feats, here_id)
                own_words = strip_dialect_tokens(own.token_ids, vocab)[0].split()
                n_here = own_words.count(spell_here)
                if n_here == 0:
                    continue
                swapped = model.greedy_decode(feats, there_id)
                sw_words = strip_dialect_tokens(swapped.token_ids, vocab)[0].split()
                flips = max(0, sw_words.count(spell_there) - own_words.count(spell_there))
                occurrences += n_here
                switched += min(n_here, flips)
        results.append(LexicalSwitchResult(tuple(pair), occurrences, switched))
    return results


def write_lexical_csv(results: list[LexicalSwitchResult], path: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["dialect_a", "spelling_a", "dialect_b", "spelling_b",
             "occurrences", "switched", "switch_rate"]
        )
        for r in results:
            rate = "" if r.switch_rate is None else f"{r.switch_rate:.4f}"
            w.writerow(list(r.pair) + [r.occurrences, r.switched, rate])
