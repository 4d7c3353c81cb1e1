"""Regenerate the committed dataset and pool fixtures.

Everything here is deterministic: run it twice and the files are
byte-identical. The textcls files share their first 30 inputs; the
100-record file carries two deliberately wrong labels (lines 7 and 12)
that the corrector tool knows the right answers for.
"""

from __future__ import annotations

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

PRODUCTS = [
    "espresso kit", "trail shoes", "desk lamp", "rain jacket", "yoga mat",
    "water bottle", "key organizer", "phone stand", "wool socks", "tea sampler",
]

PROMO_TEMPLATES = [
    "flash sale this weekend: save 25% off on the {p}",
    "last chance! our {p} ships with free shipping and a bonus gift",
    "use coupon WELCOME10 for a discount on the {p} today",
    "the big spring sale is live, the {p} is 30% off right now",
    "members get an extra discount on the {p}, this week only",
]

PLAIN_TEMPLATES = [
    "the maintenance window for the {p} inventory system is on friday",
    "please update the warranty record for the {p} returned last week",
    "meeting notes: the {p} supplier confirmed the delivery schedule",
    "the quality review of the {p} batch is complete and filed",
    "reminder to restock the {p} shelf in the back room",
]

# no stray promo keywords here: "wholesale" would match "sale"
POOL_PROMO_TEMPLATES = [
    "today only: the {p} at 40% off, no coupon needed ({sku})",
    "clearance sale on the {p}, stock is limited ({sku})",
    "free shipping on every {p} ordered before sunday ({sku})",
]

POOL_PLAIN_TEMPLATES = [
    "support ticket about a {p} arriving with a dented box ({sku})",
    "the {p} manual was updated to cover the new firmware ({sku})",
    "warehouse count for the {p} matched the ledger this month ({sku})",
]


def textcls_line(i: int) -> tuple[str, str]:
    """Record i (1-based): odd rows are promotional, even rows are not."""
    product = PRODUCTS[(i - 1) % len(PRODUCTS)]
    if i % 2 == 1:
        template = PROMO_TEMPLATES[((i - 1) // 2) % len(PROMO_TEMPLATES)]
        return template.format(p=product), "promo"
    template = PLAIN_TEMPLATES[((i - 1) // 2) % len(PLAIN_TEMPLATES)]
    return template.format(p=product), "not_promo"


def write_textcls() -> None:
    wrong = {7: "not_promo", 12: "promo"}  # llm_corrector knows the truth
    for count, name, poison in ((30, "textcls_30.jsonl", False), (100, "textcls_100.jsonl", True)):
        lines = []
        seen = set()
        for i in range(1, count + 1):
            text, label = textcls_line(i)
            text = f"{text} (ref {i:03d})"
            assert text not in seen
            seen.add(text)
            if poison and i in wrong:
                label = wrong[i]
            lines.append(json.dumps({"input": text, "label": label}, ensure_ascii=False))
        (ROOT / "datasets" / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_pool() -> None:
    items = []
    seen = set()
    for j in range(1000):
        product = PRODUCTS[j % len(PRODUCTS)]
        sku = f"sku-{1000 + j}"
        if j % 2 == 0:
            template = POOL_PROMO_TEMPLATES[(j // 2) % len(POOL_PROMO_TEMPLATES)]
        else:
            template = POOL_PLAIN_TEMPLATES[(j // 2) % len(POOL_PLAIN_TEMPLATES)]
        text = template.format(p=product, sku=sku)
        assert text not in seen
        seen.add(text)
        items.append(text)
    out = ROOT / "tools" / "fixtures" / "promo_pool.json"
    out.write_text(json.dumps(items, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


OBJECTS = ["red mug", "blue binder", "green bottle", "black stapler", "silver tin"]
ANCHORS = ["price tag", "barcode strip", "shelf divider", "promo card"]
REGIONS = ["top_left", "top_right", "bottom_left", "bottom_right"]


def write_grounding() -> None:
    lines = []
    for i in range(1, 201):
        obj = OBJECTS[(i - 1) % len(OBJECTS)]
        anchor = ANCHORS[(i - 1) % len(ANCHORS)]
        # double spaces on purpose: the normalizer tool has work to do
        text = f"shelf_cam_{i:04d}.png  |  locate the {obj} near  the {anchor}"
        label = REGIONS[(i - 1) % len(REGIONS)]
        lines.append(json.dumps({"input": text, "label": label}, ensure_ascii=False))
    out = ROOT / "datasets" / "product_grounding.jsonl"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    (ROOT / "datasets").mkdir(exist_ok=True)
    (ROOT / "tools" / "fixtures").mkdir(parents=True, exist_ok=True)
    write_textcls()
    write_pool()
    write_grounding()
    print("fixtures written")
