"""Engagement engine: checklist tracking, findings, risk, and reports.

The five-stage assessment checklist ships as a versioned catalog data
file so it can be retailored per engagement without code changes. Every
catalog bullet becomes an addressable item with a stable id; findings
link to items, carry evidence digests, and derive their risk level from
a fixed likelihood x impact matrix. Reports render deterministically to
markdown for humans or to a schema-validated canonical JSON object.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from importlib import resources

from .canonical import canonical_json
from .errors import EngagementError

STAGES = ("A1", "A2", "A3", "A3S", "A4", "A5")
ITEM_STATUSES = ("open", "done", "not_applicable", "blocked")
LEVELS = ("low", "medium", "high")
ACCESS_LEVELS = ("open-box", "closed-box")

# Fixed 3x3 risk matrix over (likelihood, impact).
RISK_MATRIX = {
    ("low", "low"): "low",
    ("low", "medium"): "low",
    ("medium", "low"): "low",
    ("medium", "medium"): "medium",
    ("low", "high"): "medium",
    ("high", "low"): "medium",
    ("medium", "high"): "high",
    ("high", "medium"): "high",
    ("high", "high"): "critical",
}
RISK_ORDER = {"critical": 0, "high": 1, "medium": 2, "low": 3}


def _load_data(name: str) -> dict:
    with resources.files("redtide.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_checklist_catalog() -> dict:
    return _load_data("checklist_catalog.json")


def load_ncsc_principles() -> dict[str, str]:
    data = _load_data("ncsc_principles.json")
    return {p["id"]: p["label"] for p in data["principles"]}


def load_cve_reference() -> list[dict]:
    return _load_data("cve_reference.json")["entries"]


def derive_risk(likelihood: str, impact: str) -> str:
    if likelihood not in LEVELS or impact not in LEVELS:
        raise EngagementError(
            f"likelihood and impact must be one of {LEVELS}, got {likelihood!r}/{impact!r}"
        )
    return RISK_MATRIX[(likelihood, impact)]


@dataclass(frozen=True)
class ChecklistItem:
    id: str
    stage: str
    text: str
    status: str = "open"
    reason: str | None = None
    finding_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScopeRecord:
    objectives: str
    disclosure_process: str
    rules_of_engagement: str = ""
    access_level: str = "closed-box"
    schedule: str = ""
    contacts: str = ""

    def __post_init__(self) -> None:
        if self.access_level not in ACCESS_LEVELS:
            raise EngagementError(f"access level must be one of {ACCESS_LEVELS}")


@dataclass(frozen=True)
class Finding:
    id: str
    title: str
    component: str
    attack_kind: str
    likelihood: str
    impact: str
    risk: str
    evidence: tuple[str, ...] = ()
    mitigations: tuple[str, ...] = ()  # principle ids from the mitigation catalog
    details: str = ""


@dataclass
class EngagementPlan:
    engagement_id: str
    scope: ScopeRecord
    items: dict[str, ChecklistItem]
    findings: list[Finding] = field(default_factory=list)
    created: str = ""

    def stage_items(self, stage: str) -> list[ChecklistItem]:
        return [item for item in self.items.values() if item.stage == stage]


def new_engagement(scope: ScopeRecord, engagement_id: str | None = None) -> EngagementPlan:
    """Instantiate the full checklist catalog with every item open.

    The scope must carry non-empty objectives and an agreed vulnerability
    disclosure process; an engagement cannot start without them.
    """
    if not scope.objectives.strip():
        raise EngagementError("scope record incomplete: evaluation objectives are required")
    if not scope.disclosure_process.strip():
        raise EngagementError(
            "scope record incomplete: the vulnerability disclosure process must be "
            "agreed with the system owner before the engagement begins"
        )
    catalog = load_checklist_catalog()
    items: dict[str, ChecklistItem] = {}
    for stage in catalog["stages"]:
        if stage["stage"] not in STAGES:
            raise EngagementError(f"catalog stage {stage['stage']!r} unknown")
        for entry in stage["items"]:
            if entry["id"] in items:
                raise EngagementError(f"duplicate catalog item id {entry['id']}")
            items[entry["id"]] = ChecklistItem(
                id=entry["id"], stage=stage["stage"], text=entry["text"]
            )
    return EngagementPlan(
        engagement_id=engagement_id or f"engagement-{uuid.uuid4().hex[:12]}",
        scope=scope,
        items=items,
    )


def set_item_status(
    plan: EngagementPlan, item_id: str, status: str, reason: str | None = None
) -> EngagementPlan:
    if item_id not in plan.items:
        raise EngagementError(f"unknown checklist item {item_id!r}")
    if status not in ITEM_STATUSES:
        raise EngagementError(f"status must be one of {ITEM_STATUSES}, got {status!r}")
    if status in ("not_applicable", "blocked") and not (reason or "").strip():
        raise EngagementError(f"status {status} requires a non-empty reason")
    plan.items[item_id] = replace(plan.items[item_id], status=status, reason=reason)
    return plan


def record_finding(
    plan: EngagementPlan,
    *,
    title: str,
    component: str,
    attack_kind: str,
    likelihood: str,
    impact: str,
    linked_items: tuple[str, ...] = (),
    evidence: tuple[str, ...] = (),
    mitigations: tuple[str, ...] = (),
    details: str = "",
) -> tuple[EngagementPlan, Finding]:
    """Store a finding, derive its risk, and link it to checklist items."""
    for item_id in linked_items:
        if item_id not in plan.items:
            raise EngagementError(f"unknown checklist item {item_id!r}")
    principles = load_ncsc_principles()
    for pid in mitigations:
        if pid not in principles:
            raise EngagementError(f"unknown mitigation principle {pid!r}")
    risk = derive_risk(likelihood, impact)
    finding = Finding(
        id=f"F-{len(plan.findings) + 1:03d}",
        title=title,
        component=component,
        attack_kind=attack_kind,
        likelihood=likelihood,
        impact=impact,
        risk=risk,
        evidence=tuple(evidence),
        mitigations=tuple(mitigations),
        details=details,
    )
    plan.findings.append(finding)
    for item_id in linked_items:
        item = plan.items[item_id]
        plan.items[item_id] = replace(item, finding_ids=item.finding_ids + (finding.id,))
    return plan, finding


def _require_scope_stage_complete(plan: EngagementPlan) -> None:
    unfinished = [
        item.id
        for item in plan.stage_items("A1")
        if item.status not in ("done", "not_applicable")
    ]
    if unfinished:
        raise EngagementError(
            "report cannot render before the scope stage is complete; "
            f"open items: {', '.join(sorted(unfinished))}"
        )


def _sorted_findings(plan: EngagementPlan) -> list[Finding]:
    return sorted(plan.findings, key=lambda f: (RISK_ORDER[f.risk], f.id))


def _catalog_order(plan: EngagementPlan) -> list[ChecklistItem]:
    return list(plan.items.values())  # insertion order equals catalog order


def render_report(plan: EngagementPlan, format: str = "markdown") -> str:
    """Render the engagement report; output is byte-deterministic."""
    if format == "markdown":
        return _render_markdown(plan)
    if format == "canonical":
        return _render_canonical(plan)
    raise EngagementError(f"unknown report format {format!r}")


def _render_markdown(plan: EngagementPlan) -> str:
    _require_scope_stage_complete(plan)
    principles = load_ncsc_principles()
    catalog = load_checklist_catalog()
    stage_titles = {s["stage"]: s["title"] for s in catalog["stages"]}
    lines: list[str] = []
    out = lines.append
    out(f"# AI Red Team Engagement Report: {plan.engagement_id}")
    out("")
    out("## Scope")
    out("")
    out(f"- Objectives: {plan.scope.objectives}")
    out(f"- Access level: {plan.scope.access_level}")
    out(f"- Rules of engagement: {plan.scope.rules_of_engagement or '(not recorded)'}")
    out(f"- Schedule: {plan.scope.schedule or '(not recorded)'}")
    out(f"- Contacts: {plan.scope.contacts or '(not recorded)'}")
    out(f"- Disclosure process: {plan.scope.disclosure_process}")
    if plan.created:
        out(f"- Created: {plan.created}")
    out("")
    out("## Checklist")
    for stage in STAGES:
        items = plan.stage_items(stage)
        out("")
        out(f"### {stage}: {stage_titles.get(stage, stage)} ({len(items)} items)")
        out("")
        for item in items:
            mark = "x" if item.status == "done" else " "
            suffix = f" [{item.status}]" if item.status != "done" else ""
            if item.reason:
                suffix += f" ({item.reason})"
            if item.finding_ids:
                suffix += f" -> {', '.join(item.finding_ids)}"
            out(f"- [{mark}] {item.id}: {item.text}{suffix}")
    findings = _sorted_findings(plan)
    out("")
    out(f"## Findings ({len(findings)})")
    for finding in findings:
        out("")
        out(f"### {finding.risk.upper()}: {finding.id} {finding.title}")
        out("")
        out(f"- Component: {finding.component}")
        out(f"- Attack kind: {finding.attack_kind}")
        out(f"- Likelihood: {finding.likelihood}; impact: {finding.impact}; risk: {finding.risk}")
        if finding.details:
            out(f"- Details: {finding.details}")
        for item in finding.evidence:
            out(f"- Evidence: {item}")
    out("")
    out("## Mitigations")
    out("")
    any_mitigation = False
    for finding in findings:
        for pid in finding.mitigations:
            out(f"- {finding.id} -> {pid}: {principles[pid]}")
            any_mitigation = True
    if not any_mitigation:
        out("- (none recorded)")
    out("")
    out("## Areas Not Fully Evaluated")
    out("")
    blocked = [item for item in _catalog_order(plan) if item.status == "blocked"]
    if blocked:
        for item in blocked:
            out(f"- {item.id}: {item.text} (blocked: {item.reason})")
    else:
        out("- (none)")
    out("")
    out("## Reference: Known Vulnerabilities in Common ML Software")
    out("")
    out("| Package | CVE | Severity | Summary |")
    out("| --- | --- | --- | --- |")
    for entry in load_cve_reference():
        out(
            f"| {entry['package']} | {entry['cve']} | {entry['severity']} | {entry['summary']} |"
        )
    out("")
    return "\n".join(lines)


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "engagement_id", "scope", "checklist", "findings",
                 "not_fully_evaluated", "reference_vulnerabilities"],
    "properties": {
        "version": {"const": 1},
        "engagement_id": {"type": "string", "minLength": 1},
        "scope": {
            "type": "object",
            "required": ["objectives", "disclosure_process", "access_level"],
            "properties": {
                "objectives": {"type": "string"},
                "disclosure_process": {"type": "string"},
                "access_level": {"enum": list(ACCESS_LEVELS)},
            },
        },
        "checklist": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "stage", "text", "status"],
                "properties": {
                    "id": {"type": "string"},
                    "stage": {"enum": list(STAGES)},
                    "text": {"type": "string"},
                    "status": {"enum": list(ITEM_STATUSES)},
                    "reason": {"type": ["string", "null"]},
                    "finding_ids": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "findings": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "title", "risk", "likelihood", "impact"],
                "properties": {
                    "id": {"type": "string"},
                    "risk": {"enum": ["low", "medium", "high", "critical"]},
                    "likelihood": {"enum": list(LEVELS)},
                    "impact": {"enum": list(LEVELS)},
                    "evidence": {"type": "array", "items": {"type": "string"}},
                    "mitigations": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "not_fully_evaluated": {"type": "array"},
        "reference_vulnerabilities": {"type": "array"},
    },
}


def _canonical_object(plan: EngagementPlan) -> dict:
    return {
        "version": 1,
        "engagement_id": plan.engagement_id,
        "created": plan.created,
        "scope": {
            "objectives": plan.scope.objectives,
            "disclosure_process": plan.scope.disclosure_process,
            "rules_of_engagement": plan.scope.rules_of_engagement,
            "access_level": plan.scope.access_level,
            "schedule": plan.scope.schedule,
            "contacts": plan.scope.contacts,
        },
        "checklist": [
            {
                "id": item.id,
                "stage": item.stage,
                "text": item.text,
                "status": item.status,
                "reason": item.reason,
                "finding_ids": list(item.finding_ids),
            }
            for item in _catalog_order(plan)
        ],
        "findings": [
            {
                "id": f.id,
                "title": f.title,
                "component": f.component,
                "attack_kind": f.attack_kind,
                "likelihood": f.likelihood,
                "impact": f.impact,
                "risk": f.risk,
                "evidence": list(f.evidence),
                "mitigations": list(f.mitigations),
                "details": f.details,
            }
            for f in _sorted_findings(plan)
        ],
        "not_fully_evaluated": [
            {"id": item.id, "text": item.text, "reason": item.reason}
            for item in _catalog_order(plan)
            if item.status == "blocked"
        ],
        "reference_vulnerabilities": load_cve_reference(),
    }


def _render_canonical(plan: EngagementPlan) -> str:
    _require_scope_stage_complete(plan)
    obj = _canonical_object(plan)
    validate_report_object(obj)
    return canonical_json(obj)


def validate_report_object(obj: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(obj, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise EngagementError(f"report object violates its schema: {exc.message}") from exc


# --------------------------------------------------------------------------
# Plan persistence.

def plan_to_json(plan: EngagementPlan) -> str:
    obj = {
        "version": 1,
        "engagement_id": plan.engagement_id,
        "created": plan.created,
        "scope": {
            "objectives": plan.scope.objectives,
            "disclosure_process": plan.scope.disclosure_process,
            "rules_of_engagement": plan.scope.rules_of_engagement,
            "access_level": plan.scope.access_level,
            "schedule": plan.scope.schedule,
            "contacts": plan.scope.contacts,
        },
        "items": [
            {
                "id": item.id,
                "stage": item.stage,
                "text": item.text,
                "status": item.status,
                "reason": item.reason,
                "finding_ids": list(item.finding_ids),
            }
            for item in _catalog_order(plan)
        ],
        "findings": [
            {
                "id": f.id,
                "title": f.title,
                "component": f.component,
                "attack_kind": f.attack_kind,
                "likelihood": f.likelihood,
                "impact": f.impact,
                "risk": f.risk,
                "evidence": list(f.evidence),
                "mitigations": list(f.mitigations),
                "details": f.details,
            }
            for f in plan.findings
        ],
    }
    return canonical_json(obj)


def plan_from_json(text: str) -> EngagementPlan:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EngagementError(f"plan file is not valid JSON: {exc}") from exc
    if obj.get("version") != 1:
        raise EngagementError(f"unsupported plan version {obj.get('version')!r}")
    scope = ScopeRecord(
        objectives=obj["scope"]["objectives"],
        disclosure_process=obj["scope"]["disclosure_process"],
        rules_of_engagement=obj["scope"].get("rules_of_engagement", ""),
        access_level=obj["scope"].get("access_level", "closed-box"),
        schedule=obj["scope"].get("schedule", ""),
        contacts=obj["scope"].get("contacts", ""),
    )
    items = {
        entry["id"]: ChecklistItem(
            id=entry["id"],
            stage=entry["stage"],
            text=entry["text"],
            status=entry["status"],
            reason=entry.get("reason"),
            finding_ids=tuple(entry.get("finding_ids", ())),
        )
        for entry in obj["items"]
    }
    findings = [
        Finding(
            id=f["id"],
            title=f["title"],
            component=f["component"],
            attack_kind=f["attack_kind"],
            likelihood=f["likelihood"],
            impact=f["impact"],
            risk=f["risk"],
            evidence=tuple(f.get("evidence", ())),
            mitigations=tuple(f.get("mitigations", ())),
            details=f.get("details", ""),
        )
        for f in obj["findings"]
    ]
    return EngagementPlan(
        engagement_id=obj["engagement_id"],
        scope=scope,
        items=items,
        findings=findings,
        created=obj.get("created", ""),
    )
