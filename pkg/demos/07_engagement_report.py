#!/usr/bin/env python3
"""Walkthrough: engagement checklist, findings, and the rendered report.

Creates an engagement plan, completes the scope stage, records two
findings tied to attack evidence, and renders both the markdown and the
schema-validated canonical report.
"""

from pathlib import Path

from redtide.engagement import (
    ScopeRecord,
    new_engagement,
    plan_to_json,
    record_finding,
    render_report,
    set_item_status,
)

out = Path("demo-out/07")
out.mkdir(parents=True, exist_ok=True)

scope = ScopeRecord(
    objectives="Adversarial evaluation of the survey vessel's collision-avoidance vision stack.",
    disclosure_process="Findings disclosed to the operator's security lead within five working days.",
    rules_of_engagement="Lab replicas only; the live vessel stays untouched.",
    access_level="open-box",
    schedule="two weeks, starting 2026-03-02",
    contacts="duty officer, fleet operations",
)
plan = new_engagement(scope, engagement_id="demo-engagement")

for item in plan.stage_items("A1"):
    set_item_status(plan, item.id, "done")
set_item_status(plan, "A3.2-inversion", "not_applicable", reason="no public query interface")
set_item_status(plan, "A3.2-stealing", "blocked", reason="test window ended before hardware access")

plan, finding = record_finding(
    plan,
    title="Backdoor trigger suppresses contact detection",
    component="dropout-protection vision model",
    attack_kind="backdoor-poisoning",
    likelihood="medium",
    impact="high",
    linked_items=("A3.2-poisoning", "A3.2-closed-box"),
    evidence=("poison-report sha256:0f3a...",),
    mitigations=("ncsc-ml/data", "ncsc-ml/monitoring"),
    details="10% training-set backdoor flips the vessel class to the trigger class.",
)
print(f"recorded {finding.id} at risk {finding.risk}")

plan, finding = record_finding(
    plan,
    title="No input sanitization ahead of the detector",
    component="camera ingest",
    attack_kind="evasion-surface",
    likelihood="high",
    impact="medium",
    linked_items=("A2-io-interfaces",),
    mitigations=("ncsc-ml/input-validation",),
)
print(f"recorded {finding.id} at risk {finding.risk}")

(out / "plan.json").write_text(plan_to_json(plan))
(out / "report.md").write_text(render_report(plan, "markdown"))
(out / "report.json").write_text(render_report(plan, "canonical"))
print(f"rendered report.md and schema-validated report.json under {out}")
