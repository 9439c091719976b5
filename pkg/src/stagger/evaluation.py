"""Exact-span precision/recall/F1, token label accuracy, fold aggregation
and report rendering."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Hashable, Iterable, Sequence

from .corpus import BioTag, decode_spans
from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    label_accuracy: float
    true_positives: int = 0
    predicted_total: int = 0
    gold_total: int = 0
    tokens_total: int = 0
    tokens_correct: int = 0
    # tokens whose gold tag is not O; the secondary accuracy figure
    attr_tokens_total: int = 0
    attr_tokens_correct: int = 0
    degenerate: bool = False

    @property
    def accuracy_excluding_o(self) -> float:
        if self.attr_tokens_total == 0:
            return 0.0
        return self.attr_tokens_correct / self.attr_tokens_total

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["accuracy_excluding_o"] = self.accuracy_excluding_o
        return d


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def harmonic_f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def span_prf(gold: Sequence[Iterable[Hashable]], pred: Sequence[Iterable[Hashable]]):
    """Exact-match span scores over a corpus of per-sequence span sets.

    Returns ``(precision, recall, f1, counts)`` where ``counts`` has keys
    ``tp``, ``pred``, ``gold`` and ``degenerate`` (a zero denominator).
    """
    if len(gold) != len(pred):
        raise DimensionError(f"gold corpus has {len(gold)} sequences, prediction has {len(pred)}")
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred):
        g, p = set(g), set(p)
        tp += len(g & p)
        n_pred += len(p)
        n_gold += len(g)
    precision, bad_p = _ratio(tp, n_pred)
    recall, bad_r = _ratio(tp, n_gold)
    counts = {"tp": tp, "pred": n_pred, "gold": n_gold, "degenerate": bad_p or bad_r}
    return precision, recall, harmonic_f1(precision, recall), counts


def _token_counts(gold_tags, pred_tags):
    if len(gold_tags) != len(pred_tags):
        raise DimensionError(f"gold corpus has {len(gold_tags)} sequences, prediction has {len(pred_tags)}")
    total = correct = attr_total = attr_correct = 0
    for k, (g, p) in enumerate(zip(gold_tags, pred_tags)):
        if len(g) != len(p):
            raise DimensionError(f"sequence {k}: {len(g)} gold tags vs {len(p)} predicted")
        for a, b in zip(g, p):
            same = BioTag(a) is BioTag(b)
            total += 1
            correct += same
            if BioTag(a) is not BioTag.O:
                attr_total += 1
                attr_correct += same
    return total, correct, attr_total, attr_correct


def label_accuracy(gold_tags, pred_tags) -> float:
    """Micro-averaged fraction of correctly tagged tokens."""
    total, correct, _, _ = _token_counts(gold_tags, pred_tags)
    return _ratio(correct, total)[0]


def evaluate_tags(sequences, pred_tags) -> EvalReport:
    """Score predicted tag sequences against gold ``LabeledSequence`` objects."""
    gold_spans = [frozenset(s for s, _ in decode_spans(q.tokens, q.tags)) for q in sequences]
    pred_spans = [frozenset(s for s, _ in decode_spans(q.tokens, p)) for q, p in zip(sequences, pred_tags)]
    p, r, f1, counts = span_prf(gold_spans, pred_spans)
    total, correct, attr_total, attr_correct = _token_counts([q.tags for q in sequences], pred_tags)
    acc, bad_acc = _ratio(correct, total)
    return EvalReport(
        precision=p, recall=r, f1=f1, label_accuracy=acc,
        true_positives=counts["tp"], predicted_total=counts["pred"], gold_total=counts["gold"],
        tokens_total=total, tokens_correct=correct,
        attr_tokens_total=attr_total, attr_tokens_correct=attr_correct,
        degenerate=counts["degenerate"] or bad_acc,
    )


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    """Unweighted mean of the fractions; counts are summed."""
    if not reports:
        raise DomainError("cannot aggregate an empty list of reports")
    k = len(reports)

    def mean(attr):
        return sum(getattr(r, attr) for r in reports) / k

    def total(attr):
        return sum(getattr(r, attr) for r in reports)

    if k == 1:
        return reports[0]
    return EvalReport(
        precision=mean("precision"), recall=mean("recall"), f1=mean("f1"),
        label_accuracy=mean("label_accuracy"),
        true_positives=total("true_positives"), predicted_total=total("predicted_total"),
        gold_total=total("gold_total"), tokens_total=total("tokens_total"),
        tokens_correct=total("tokens_correct"), attr_tokens_total=total("attr_tokens_total"),
        attr_tokens_correct=total("attr_tokens_correct"),
        degenerate=any(r.degenerate for r in reports),
    )


def _cells(report: EvalReport) -> list[str]:
    return [
        f"{100 * report.precision:.2f}",
        f"{100 * report.recall:.2f}",
        f"{report.f1:.4f}",
        f"{100 * report.label_accuracy:.2f}",
    ]


def format_report(report: EvalReport, style: str = "text", variant: str = "model") -> str:
    """Precision, recall and accuracy as percentages with two decimals,
    F1 as a fraction with four."""
    cells = _cells(report)
    if style == "tsv":
        return "\t".join([variant, *cells])
    if style != "text":
        raise DomainError(f"unknown report style {style!r}")
    header = ["Model", "Precision(%)", "Recall(%)", "F1-Score", "Label Accuracy(%)"]
    row = [variant, *cells]
    widths = [max(len(a), len(b)) for a, b in zip(header, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip(),
        f"spans: tp={report.true_positives} predicted={report.predicted_total} gold={report.gold_total}; "
        f"tokens: {report.tokens_correct}/{report.tokens_total}; "
        f"accuracy excluding O: {100 * report.accuracy_excluding_o:.2f}",
    ]
    if report.degenerate:
        lines.append("warning: degenerate report (a denominator was zero; affected metrics set to 0)")
    return "\n".join(lines)
