"""Corpus caption metrics: BLEU-1..4, METEOR (exact match), ROUGE-L and CIDEr-D.

Inputs are parallel lists: one hypothesis per image and a list of references
per image.  Strings are tokenized with :func:`groundcap.text.tokenize`;
pre-tokenized lists pass through.  Scores are in [0, 1] (CIDEr-D on its usual
0-10 scale); :meth:`CaptionScores.reported` multiplies by 100.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from ..errors import ValidationError
from ..text import tokenize

ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
CIDER_SIGMA = 6.0
CIDER_N = 4
# Alignment search states before METEOR falls back to earliest-match alignment.
METEOR_STATE_BUDGET = 200_000


def _toks(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _prepare(hyps, refs):
    if len(hyps) == 0:
        raise ValidationError("empty hypothesis set")
    if len(hyps) != len(refs):
        raise ValidationError(f"{len(hyps)} hypotheses but {len(refs)} reference sets")
    H = [_toks(h) for h in hyps]
    R = []
    for i, rs in enumerate(refs):
        rs = [rs] if isinstance(rs, str) else list(rs)
        if not rs:
            raise ValidationError(f"hypothesis {i} has no references")
        R.append([_toks(r) for r in rs])
    return H, R


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# BLEU -------------------------------------------------------------------------

def bleu(hyps, refs, n_max: int = 4) -> list[float]:
    """Corpus BLEU-1..n_max with clipped counts, closest-reference brevity penalty, no smoothing."""
    H, R = _prepare(hyps, refs)
    clipped = [0] * n_max
    totals = [0] * n_max
    c = r = 0
    for h, rs in zip(H, R):
        c += len(h)
        r += min((abs(len(x) - len(h)), len(x)) for x in rs)[1]
        for n in range(1, n_max + 1):
            hc = ngrams(h, n)
            best = Counter()
            for x in rs:
                best |= ngrams(x, n)
            clipped[n - 1] += sum(min(k, best[g]) for g, k in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if c == 0:
        return [0.0] * n_max
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    scores = []
    log_sum = 0.0
    for n in range(n_max):
        if clipped[n] == 0 or totals[n] == 0:
            scores.extend([0.0] * (n_max - n))
            break
        log_sum += math.log(clipped[n] / totals[n])
        scores.append(bp * math.exp(log_sum / (n + 1)))
    return scores


# ROUGE-L ----------------------------------------------------------------------

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_single(h, rs, beta: float = ROUGE_BETA) -> float:
    """COCO-style: best precision and best recall over references, then the F-measure."""
    if not h:
        return 0.0
    lcs = [lcs_length(h, r) for r in rs]
    p = max(l / len(h) for l in lcs)
    rec = max(l / len(r) for l, r in zip(lcs, rs) if r) if any(rs) else 0.0
    if p == 0 or rec == 0:
        return 0.0
    return (1 + beta**2) * p * rec / (rec + beta**2 * p)


def rouge_l(hyps, refs, beta: float = ROUGE_BETA) -> float:
    H, R = _prepare(hyps, refs)
    return math.fsum(rouge_l_single(h, rs, beta) for h, rs in zip(H, R)) / len(H)


# METEOR -----------------------------------------------------------------------

def _min_chunks(h: Sequence[str], r: Sequence[str]) -> int:
    """Fewest chunks over all maximum-cardinality exact-match alignments.

    Memoized search over hypothesis positions; the state is (position,
    reference index matched at the previous position, used reference set).
    """
    positions: dict[str, list[int]] = {}
    for j, w in enumerate(r):
        positions.setdefault(w, []).append(j)
    need = {w: min(k, len(positions.get(w, ()))) for w, k in Counter(h).items()}
    left_after = []  # occurrences of h[i] strictly after i
    seen = Counter()
    for w in reversed(h):
        left_after.append(seen[w])
        seen[w] += 1
    left_after.reverse()

    memo: dict = {}
    budget = [METEOR_STATE_BUDGET]

    def go(i, prev, used):
        if i == len(h):
            return 0
        key = (i, prev, used)
        if key in memo:
            return memo[key]
        budget[0] -= 1
        if budget[0] < 0:
            raise _BudgetExceeded
        w = h[i]
        cand = positions.get(w, ())
        done = sum(1 for j in cand if used >> j & 1)
        best = math.inf
        if need.get(w, 0) - done <= left_after[i]:  # may skip this occurrence
            best = go(i + 1, -1, used)
        if done < need.get(w, 0):
            for j in cand:
                if not used >> j & 1:
                    extra = 0 if (prev >= 0 and j == prev + 1) else 1
                    best = min(best, extra + go(i + 1, j, used | (1 << j)))
        memo[key] = best
        return best

    try:
        return go(0, -1, 0)
    except _BudgetExceeded:
        return _greedy_chunks(h, positions, need)


class _BudgetExceeded(Exception):
    pass


def _greedy_chunks(h, positions, need) -> int:
    used = set()
    matched = Counter()
    chunks = 0
    prev = -2
    for w in h:
        j = next((j for j in positions.get(w, ()) if j not in used), None)
        if j is None or matched[w] >= need.get(w, 0):
            prev = -2
            continue
        used.add(j)
        matched[w] += 1
        chunks += j != prev + 1
        prev = j
    return chunks


def meteor_single(h, r) -> float:
    if not h or not r:
        return 0.0
    hc, rc = Counter(h), Counter(r)
    m = sum(min(k, rc[w]) for w, k in hc.items())
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    fmean = p * rec / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * rec)
    penalty = METEOR_GAMMA * (_min_chunks(h, r) / m) ** METEOR_BETA
    return fmean * (1 - penalty)


def meteor(hyps, refs) -> float:
    """Exact-match METEOR (no stem or synonym stages); best reference per hypothesis, corpus mean."""
    H, R = _prepare(hyps, refs)
    return math.fsum(max(meteor_single(h, r) for r in rs) for h, rs in zip(H, R)) / len(H)


# CIDEr-D ----------------------------------------------------------------------

def _all_ngrams(tokens, n_max=CIDER_N) -> Counter:
    out = Counter()
    for n in range(1, n_max + 1):
        out.update(ngrams(tokens, n))
    return out


def cider_d(hyps, refs, sigma: float = CIDER_SIGMA, n_max: int = CIDER_N) -> float:
    """CIDEr-D with document frequencies taken from the reference corpus."""
    H, R = _prepare(hyps, refs)
    ref_counts = [[_all_ngrams(r, n_max) for r in rs] for rs in R]
    df = Counter()
    for rcs in ref_counts:
        df.update(set().union(*rcs))
    log_images = math.log(len(H))

    def vec(counts):
        v = [dict() for _ in range(n_max)]
        norm = [0.0] * n_max
        for g, tf in counts.items():
            w = tf * (log_images - math.log(max(1.0, df[g])))
            v[len(g) - 1][g] = w
            norm[len(g) - 1] += w * w
        return v, [math.sqrt(x) for x in norm]

    total = 0.0
    for h, rs, rcs in zip(H, R, ref_counts):
        vh, nh = vec(_all_ngrams(h, n_max))
        acc = [0.0] * n_max
        for r, rc in zip(rs, rcs):
            vr, nr = vec(rc)
            penalty = math.exp(-((len(h) - len(r)) ** 2) / (2 * sigma**2))
            for n in range(n_max):
                val = sum(min(w, vr[n].get(g, 0.0)) * vr[n].get(g, 0.0) for g, w in vh[n].items())
                if nh[n] != 0 and nr[n] != 0:
                    val /= nh[n] * nr[n]
                acc[n] += val * penalty
        total += 10.0 * (sum(acc) / n_max) / len(rs)
    return total / len(H)


@dataclass(frozen=True)
class CaptionScores:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider_d: float

    def reported(self) -> dict[str, float]:
        return {k: 100.0 * v for k, v in asdict(self).items()}

    def to_csv(self) -> str:
        rep = self.reported()
        return ",".join(rep) + "\n" + ",".join(f"{v:.4f}" for v in rep.values()) + "\n"

    def to_text(self) -> str:
        lines = ["caption metrics (x100); METEOR uses exact matching only"]
        lines += [f"  {k:8s} {v:8.2f}" for k, v in self.reported().items()]
        return "\n".join(lines) + "\n"


def evaluate_captions(hyps, refs) -> CaptionScores:
    b = bleu(hyps, refs, 4)
    return CaptionScores(*b, meteor(hyps, refs), rouge_l(hyps, refs), cider_d(hyps, refs))
