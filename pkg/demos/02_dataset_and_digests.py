#!/usr/bin/env python3
"""Walkthrough: synthetic datasets and tamper-evident digests.

Generates a small marine dataset, writes it to disk, digests it, then
flips a single byte in one image and shows the manifest digest change.
"""

from pathlib import Path

from redtide.dataset import (
    digest_dataset,
    format_digest_manifest,
    load_dataset,
    make_synthetic_dataset,
    write_dataset,
)

root = Path("demo-out/02/dataset")
dataset = write_dataset(make_synthetic_dataset(12, seed=21), root)
print(f"wrote {len(dataset)} scenes under {root}")

digest = digest_dataset(dataset)
manifest_path = root / "digests.txt"
manifest_path.write_text(format_digest_manifest(digest))
print(f"manifest digest: {digest.manifest}")

victim = root / dataset.items[0].path
raw = bytearray(victim.read_bytes())
raw[-1] ^= 0x01
victim.write_bytes(bytes(raw))
tampered = digest_dataset(load_dataset(root))
print(f"after a single-byte flip: {tampered.manifest}")
assert tampered.manifest != digest.manifest
print("tampering detected: manifests differ")
