"""Rule-based baseline that maps a node to a semantic type from its
Android class name, resource id, and content description.

The rule table is data, not code: a TSV file with one rule per line
(``priority<TAB>matcher<TAB>pattern<TAB>type``, ``#`` comments). The
shipped default table covers the common Android widget classes and is an
editable, non-authoritative starting point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .hierarchy import Node, ObjectType

Labeler = Callable[[Node], "ObjectType | None"]


class Matcher(enum.Enum):
    CLASS_SUBSTRING = "class_substring"
    CLASS_SUFFIX = "class_suffix"
    RESOURCE_ID_EXACT = "resource_id_exact"
    RESOURCE_ID_SUBSTRING = "resource_id_substring"
    CONTENT_DESC_SUBSTRING = "content_desc_substring"


# Precedence tiers: resource-id rules outrank class rules outrank
# content-description rules.
_MATCHER_TIER = {
    Matcher.RESOURCE_ID_EXACT: 0,
    Matcher.RESOURCE_ID_SUBSTRING: 0,
    Matcher.CLASS_SUBSTRING: 1,
    Matcher.CLASS_SUFFIX: 1,
    Matcher.CONTENT_DESC_SUBSTRING: 2,
}


@dataclass(frozen=True)
class HeuristicRule:
    priority: int
    matcher: Matcher
    pattern: str  # matched case-insensitively
    target: ObjectType

    def matches(self, node: Node) -> bool:
        pattern = self.pattern.lower()
        if self.matcher is Matcher.CLASS_SUBSTRING:
            return pattern in terminal_class_segment(node.android_class)
        if self.matcher is Matcher.CLASS_SUFFIX:
            return terminal_class_segment(node.android_class).endswith(pattern)
        if self.matcher is Matcher.RESOURCE_ID_EXACT:
            return node.resource_id is not None and node.resource_id.lower() == pattern
        if self.matcher is Matcher.RESOURCE_ID_SUBSTRING:
            return node.resource_id is not None and pattern in node.resource_id.lower()
        if self.matcher is Matcher.CONTENT_DESC_SUBSTRING:
            return node.content_desc is not None and pattern in node.content_desc.lower()
        raise AssertionError(self.matcher)


def terminal_class_segment(android_class: str) -> str:
    """Class-name matching strips the package prefix: app-specific packages
    routinely wrap standard widget names."""
    return android_class.rsplit(".", 1)[-1].rsplit("$", 1)[-1].lower()


class RuleTableError(ValueError):
    pass


def validate_rules(rules: Sequence[HeuristicRule]) -> None:
    seen: dict[int, HeuristicRule] = {}
    for rule in rules:
        if rule.priority in seen:
            raise RuleTableError(f"duplicate priority {rule.priority}")
        if rule.target is ObjectType.INVALID:
            raise RuleTableError("rules may not target INVALID")
        seen[rule.priority] = rule
    ordered = sorted(rules, key=lambda r: r.priority)
    tiers = [_MATCHER_TIER[r.matcher] for r in ordered]
    if tiers != sorted(tiers):
        raise RuleTableError(
            "rule precedence must keep resource-id rules above class rules "
            "above content-description rules"
        )


def parse_rules(text: str) -> list[HeuristicRule]:
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise RuleTableError(f"line {lineno}: expected 4 tab-separated fields")
        priority_s, matcher_s, pattern, type_s = parts
        try:
            rule = HeuristicRule(
                priority=int(priority_s),
                matcher=Matcher(matcher_s.strip()),
                pattern=pattern.strip(),
                target=ObjectType.from_name(type_s.strip()),
            )
        except ValueError as exc:
            raise RuleTableError(f"line {lineno}: {exc}") from exc
        rules.append(rule)
    validate_rules(rules)
    return sorted(rules, key=lambda r: r.priority)


def load_rules(path: str | Path) -> list[HeuristicRule]:
    return parse_rules(Path(path).read_text(encoding="utf-8"))


def default_rules() -> list[HeuristicRule]:
    text = resources.files("uiclean").joinpath("data/default_rules.tsv").read_text("utf-8")
    return parse_rules(text)


def infer_type(node: Node, rules: Sequence[HeuristicRule]) -> ObjectType | None:
    """First matching rule by priority wins. With no match, a node with
    children is a CONTAINER and a leaf is unknown (None)."""
    for rule in rules:
        if rule.matches(node):
            return rule.target
    if node.children:
        return ObjectType.CONTAINER
    return None


def make_labeler(rules: Sequence[HeuristicRule] | None = None) -> Labeler:
    table = list(rules) if rules is not None else default_rules()
    return lambda node: infer_type(node, table)


def evaluate_baseline(
    examples: Iterable[tuple[Node, ObjectType]],
    rules: Sequence[HeuristicRule] | None = None,
):
    """Score the rule table on (node, gold type) pairs.

    Unknown predictions count against recall of the gold type and are
    never a false positive for any type.
    """
    from .metrics import compute_report

    table = list(rules) if rules is not None else default_rules()
    preds: list[ObjectType | None] = []
    golds: list[ObjectType] = []
    for node, gold in examples:
        preds.append(infer_type(node, table))
        golds.append(gold)
    return compute_report(preds, golds)
