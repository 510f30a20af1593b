"""PAD error rates on scored samples.

Conventions: spoof is the positive class; a score is the probability of
spoof. At threshold t an attack sample is misclassified as bonafide iff
score < t, and a live sample is misclassified as an attack iff score >= t.
APCER is reported per species, BPCER over all live samples. Raw counts are
always retained; 2-decimal rounding happens only at display time.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import MetricsError
from .registry import Species, Split, UNKNOWN_PAI_SPECIES


@dataclass(frozen=True)
class ScoredSample:
    record_id: str
    species: Species
    score: float
    split: Split

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise MetricsError(
                f"score for {self.record_id} must be finite in [0,1], got {self.score}"
            )


@dataclass(frozen=True)
class SpeciesResult:
    species: Species
    known: bool
    n_attacks: int
    n_misclassified: int

    @property
    def apcer(self) -> float:
        return 100.0 * self.n_misclassified / self.n_attacks


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    species_results: tuple[SpeciesResult, ...]
    n_live: int
    n_live_misclassified: int
    notes: tuple[str, ...] = ()
    deer: Optional[float] = None
    deer_threshold: Optional[float] = None

    @property
    def bpcer(self) -> Optional[float]:
        if self.n_live == 0:
            return None
        return 100.0 * self.n_live_misclassified / self.n_live

    def result_for(self, species: Species) -> Optional[SpeciesResult]:
        for r in self.species_results:
            if r.species is species:
                return r
        return None


def format_pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def compute_report(
    scored: Sequence[ScoredSample],
    threshold: float,
    unknown_species: Iterable[Species] = UNKNOWN_PAI_SPECIES,
) -> EvalReport:
    """Single-pass APCER-per-species / BPCER tally at a fixed threshold.

    Species with zero samples never appear as rows (no division by zero);
    requested unknown species that are absent are recorded in notes instead.
    """
    if not scored:
        raise MetricsError("compute_report needs at least one scored sample")
    if not (math.isfinite(threshold) and 0.0 <= threshold <= 1.0):
        raise MetricsError(f"threshold must be in [0,1], got {threshold}")
    unknown = set(unknown_species)
    n_attacks: dict[Species, int] = {}
    n_mis: dict[Species, int] = {}
    n_live = 0
    n_live_mis = 0
    for s in scored:
        if s.species is Species.LIVE:
            n_live += 1
            if s.score >= threshold:
                n_live_mis += 1
        else:
            n_attacks[s.species] = n_attacks.get(s.species, 0) + 1
            if s.score < threshold:
                n_mis[s.species] = n_mis.get(s.species, 0) + 1
    order = [sp for sp in Species if sp in n_attacks]
    results = tuple(
        SpeciesResult(
            species=sp,
            known=sp not in unknown,
            n_attacks=n_attacks[sp],
            n_misclassified=n_mis.get(sp, 0),
        )
        for sp in order
    )
    notes = []
    for sp in Species:
        if sp in unknown and sp not in n_attacks and sp is not Species.LIVE:
            notes.append(f"{sp.value}: no samples scored, omitted")
    if n_live == 0:
        notes.append("Live: no samples scored, BPCER undefined")
    return EvalReport(
        threshold=threshold,
        species_results=results,
        n_live=n_live,
        n_live_misclassified=n_live_mis,
        notes=tuple(notes),
    )


def sweep_rates(scored: Sequence[ScoredSample]) -> list[tuple[float, float, float]]:
    """(threshold, overall APCER%, BPCER%) at every distinct score plus one
    sentinel past the maximum. Rates are exact fractions of the two classes."""
    attacks = sorted(s.score for s in scored if s.species is not Species.LIVE)
    lives = sorted(s.score for s in scored if s.species is Species.LIVE)
    if not attacks or not lives:
        raise MetricsError("threshold sweep needs both classes present")
    thresholds = sorted(set(attacks) | set(lives))
    thresholds.append(thresholds[-1] + 1.0)
    out = []
    for t in thresholds:
        apcer = 100.0 * bisect.bisect_left(attacks, t) / len(attacks)
        bpcer = 100.0 * (len(lives) - bisect.bisect_left(lives, t)) / len(lives)
        out.append((t, apcer, bpcer))
    return out


def compute_deer(scored: Sequence[ScoredSample]) -> tuple[float, float]:
    """Detection equal error rate: the rate where overall APCER and BPCER
    cross under the threshold sweep, linearly interpolated between the
    adjacent sweep points; returns (rate%, crossing threshold)."""
    rates = sweep_rates(scored)
    prev = None
    for t, apcer, bpcer in rates:
        d = apcer - bpcer
        if d >= 0.0:
            if d == 0.0 or prev is None:
                return apcer, t
            t0, a0, b0 = prev
            d0 = a0 - b0
            alpha = -d0 / (d - d0)
            eer = a0 + alpha * (apcer - a0)
            return eer, t0 + alpha * (t - t0)
        prev = (t, apcer, bpcer)
    raise MetricsError("threshold sweep never crossed; inconsistent rates")
