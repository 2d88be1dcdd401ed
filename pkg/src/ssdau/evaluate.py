"""Triple-level metrics, threshold sweeps, and triplet-count breakdowns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .augment import AugmentedInstance, AugmentPolicy, augment_dataset
from .corpus import Instance, tokenize
from .discretize import HEAD, RELATION, TAIL
from .errors import ConfigurationError

MATCH_MODES = ("partial", "exact")


def normalize_surface(surface: str, mode: str) -> str:
    """Exact keeps the full surface; partial keeps the head word (last token)."""
    if mode == "exact":
        return surface
    if mode == "partial":
        tokens = tokenize(surface)
        return tokens[-1].surface if tokens else surface
    raise ConfigurationError(f"unknown match mode: {mode!r}")


def normalize_triple(triple: tuple[str, str, str], mode: str) -> tuple[str, str, str]:
    head, relation, tail = triple
    return (normalize_surface(head, mode), relation, normalize_surface(tail, mode))


@dataclass(frozen=True)
class TripleSet:
    """Deduplicated (head, relation, tail) surface triples under one mode."""

    triples: frozenset
    mode: str = "exact"

    @classmethod
    def from_surface_triples(cls, triples, mode: str = "exact") -> "TripleSet":
        return cls(frozenset(normalize_triple(tuple(t), mode) for t in triples), mode)

    @classmethod
    def from_instance(cls, triples, mode: str = "exact") -> "TripleSet":
        return cls.from_surface_triples(
            [(t.head.surface, t.relation, t.tail.surface) for t in triples], mode
        )

    def __len__(self) -> int:
        return len(self.triples)


class Metrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    iou: float


def metrics(pred: TripleSet, gold: TripleSet) -> Metrics:
    """Set-based precision/recall/F1/IoU with explicit empty-set conventions."""
    p, g = pred.triples, gold.triples
    inter = len(p & g)
    union = len(p | g)
    if not p:
        precision = 1.0 if not g else 0.0
    else:
        precision = inter / len(p)
    if not g:
        recall = 1.0 if not p else 0.0
    else:
        recall = inter / len(g)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    iou = 1.0 if union == 0 else inter / union
    return Metrics(precision, recall, f1, iou)


def corpus_metrics(
    pred_by_id: dict[str, TripleSet],
    gold_by_id: dict[str, TripleSet],
    macro: bool = False,
) -> Metrics:
    """Micro-aggregated metrics over sentences (macro mean behind the flag)."""
    ids = sorted(set(pred_by_id) | set(gold_by_id))
    empty = TripleSet(frozenset())
    if macro:
        per = [metrics(pred_by_id.get(i, empty), gold_by_id.get(i, empty)) for i in ids]
        if not per:
            return Metrics(1.0, 1.0, 1.0, 1.0)
        n = len(per)
        return Metrics(
            sum(m.precision for m in per) / n,
            sum(m.recall for m in per) / n,
            sum(m.f1 for m in per) / n,
            sum(m.iou for m in per) / n,
        )
    correct = pred_total = gold_total = union_total = 0
    for i in ids:
        p = pred_by_id.get(i, empty).triples
        g = gold_by_id.get(i, empty).triples
        correct += len(p & g)
        pred_total += len(p)
        gold_total += len(g)
        union_total += len(p | g)
    precision = 1.0 if pred_total == 0 and gold_total == 0 else (
        0.0 if pred_total == 0 else correct / pred_total
    )
    recall = 1.0 if gold_total == 0 and pred_total == 0 else (
        0.0 if gold_total == 0 else correct / gold_total
    )
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    iou = 1.0 if union_total == 0 else correct / union_total
    return Metrics(precision, recall, f1, iou)


@dataclass
class SweepRow:
    dataset: str
    bin_lo: float
    bin_hi: float
    head: int
    relation: int
    tail: int

    @property
    def total(self) -> int:
        return self.head + self.relation + self.tail

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "bin": [self.bin_lo, self.bin_hi],
            "head": self.head,
            "relation": self.relation,
            "tail": self.tail,
            "sum": self.total,
        }


@dataclass
class SweepReport:
    rows: list[SweepRow]

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}

    def render_table(self) -> str:
        header = f"{'Dataset':<12} {'eps':>11} {'Head':>8} {'Relation':>8} {'Tail':>8} {'Sum.':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            eps = f"{r.bin_lo:.1f} ~ {r.bin_hi:.1f}"
            lines.append(
                f"{r.dataset:<12} {eps:>11} {r.head:>8} {r.relation:>8} {r.tail:>8} {r.total:>8}"
            )
        return "\n".join(lines)


def parse_bins(spec: str) -> list[tuple[float, float]]:
    """'0.5:1.0:0.1' -> [(0.5, 0.6), (0.6, 0.7), ...] (ascending, disjoint)."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise ConfigurationError(f"bad bins spec {spec!r}; expected lo:hi:step") from exc
    if step <= 0 or hi <= lo:
        raise ConfigurationError(f"bad bins spec {spec!r}")
    bins = []
    cur = lo
    while cur < hi - 1e-12:
        nxt = min(cur + step, hi)
        bins.append((round(cur, 10), round(nxt, 10)))
        cur = nxt
    return bins


def _validate_bins(bins) -> None:
    for (lo, hi) in bins:
        if hi <= lo:
            raise ConfigurationError(f"empty bin ({lo}, {hi})")
    for (a, b), (c, d) in zip(bins, bins[1:]):
        if c < b:
            raise ConfigurationError("bins must be disjoint and ascending")


def sweep(
    dataset_label: str,
    dataset: list[Instance],
    queues,
    policy_template: AugmentPolicy,
    bins: list[tuple[float, float]],
) -> SweepReport:
    """Count augmented instances per (role, hybrid-score bin).

    Each role is swept with its single-role mode at the lowest bin edge;
    an instance lands in the bin holding its candidate score. The final
    bin is closed on the right so a score of exactly 1.0 is counted.
    """
    _validate_bins(bins)
    floor = bins[0][0]
    counts = {role: [0] * len(bins) for role in (HEAD, RELATION, TAIL)}
    role_modes = ((HEAD, "head_only"), (RELATION, "relation_only"), (TAIL, "tail_only"))
    for role, mode in role_modes:
        policy = AugmentPolicy(
            mode=mode,
            epsilon=floor,
            epsilon_entity=None,
            epsilon_relation=None,
            max_per_sentence=policy_template.max_per_sentence,
            nu_floor=policy_template.nu_floor,
        )
        for inst in augment_dataset(dataset, queues, policy):
            theta = inst.provenance.thetas[0]
            for b, (lo, hi) in enumerate(bins):
                is_last = b == len(bins) - 1
                if lo <= theta < hi or (is_last and theta == hi):
                    counts[role][b] += 1
                    break
    rows = [
        SweepRow(
            dataset=dataset_label,
            bin_lo=lo,
            bin_hi=hi,
            head=counts[HEAD][b],
            relation=counts[RELATION][b],
            tail=counts[TAIL][b],
        )
        for b, (lo, hi) in enumerate(bins)
    ]
    return SweepReport(rows)


def triplet_count_breakdown(
    dataset: list[Instance], augmented: list[AugmentedInstance]
) -> dict[int, dict[str, int]]:
    """Group sentences by gold triple count; report original vs augmented sizes."""
    by_id = {sent.id: len(triples) for sent, triples in dataset}
    out: dict[int, dict[str, int]] = {}
    for _, triples in dataset:
        row = out.setdefault(len(triples), {"original": 0, "augmented": 0})
        row["original"] += 1
    for inst in augmented:
        count = by_id.get(inst.provenance.source_id)
        if count is None:
            continue
        row = out.setdefault(count, {"original": 0, "augmented": 0})
        row["augmented"] += 1
    return dict(sorted(out.items()))
