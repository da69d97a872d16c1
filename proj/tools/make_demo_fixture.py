#!/usr/bin/env python3
"""Generate the demo study under fixtures/demo.

Writes the query log, intent labels, two recorded engines, the scripted
juror and assessor plan, the study config, and an answer sheet of expected
report values computed here from the plan alone.

    python3 tools/make_demo_fixture.py [--out fixtures/demo]
"""

import argparse
import hashlib
import json
import random
import urllib.parse
from fractions import Fraction
from pathlib import Path

ENGINES = [("north", "North Search"), ("south", "South Search")]
SEED = 20110917
DEPTH = 10
PINNED_TIME = "2026-03-01T10:00:00.000Z"
ACCESS_CODE = "demo-juror"
ADMIN_TOKEN = "demo-admin"
TRACK = "https://track.example/r"

TOPICS = [
    "tomatoes", "sourdough", "compost", "bicycle chain", "tax return", "sunburn", "bird feeder",
    "rain barrel", "wool sweater", "car battery", "knee pain", "piano scales", "paper plane",
    "coffee grinder", "window draft", "houseplant", "dog training", "snow tires", "bread flour",
    "garden shed", "mould", "ink stain", "kite", "clay pot", "rust", "cast iron pan", "ladder",
    "fireplace", "herb garden", "chess opening", "tent", "sleep cycle", "vinegar", "loom",
]
VERBS = ["how to fix", "how to clean", "best way to store", "why does", "what is", "history of", "guide to"]
BRANDS = [
    "acme", "bluefin", "corvid", "dunmore", "elmwood", "fennick", "galloway", "harbin", "ivory lane",
    "juniper", "kestrel", "lindqvist", "marrow", "nettle", "ostrava", "pennant", "quillon", "redwater",
    "saltmarsh", "tamarack", "umber", "vantage", "willowby", "xanthe", "yardley", "zephyr", "ashgrove",
    "birchall", "coldharbour", "dovetail", "emberly", "foxglove", "greyling", "hollins", "inkwell",
]


def frac(f):
    return None if f is None else f"{f.numerator}/{f.denominator}"


def mean(values):
    return sum(values, Fraction(0)) / len(values) if values else None


def queries(rng):
    """Distinct, already-normalized query texts per segment."""
    segment_sizes = [(22, 100), (44, 50), (88, 25)]
    informational = [f"{v} {t}" for v in VERBS for t in TOPICS]
    rng.shuffle(informational)
    brands = list(BRANDS)
    rng.shuffle(brands)
    navigational = [f"{b} {kind}" for b in brands for kind in ("homepage", "login", "official site")]
    rng.shuffle(navigational)
    other = [f"cheap {t} {n}" for t in TOPICS for n in range(1, 4)] + [f"buy {t}" for t in TOPICS]
    rng.shuffle(other)
    segments = []
    for size, freq in segment_sizes:
        members = [(informational.pop(), "informational") for _ in range(10)]
        members += [(navigational.pop(), "navigational") for _ in range(10)]
        for i in range(size - 20):
            members.append((other.pop(), "transactional" if i % 2 else "other"))
        segments.append((freq, members))
    return segments


def doc_body(key, title):
    return (f'<!doctype html><html><head><meta charset="utf-8"><meta name="doc-key" content="{key}">'
            f"<title>{title}</title></head><body><h1>{title}</h1><p>Reference page {key}.</p></body></html>")


def build(out: Path):
    rng = random.Random(SEED)
    segments = queries(rng)
    log_lines, label_lines = [], []
    informational, navigational = [], []
    for freq, members in segments:
        for text, intent in members:
            log_lines.append(f"{text}\t{freq}")
            label_lines.append(f"{text}\t{intent}")
            if intent == "informational":
                informational.append(text)
            elif intent == "navigational":
                navigational.append(text)
    informational.sort()
    navigational.sort()

    fixtures = {e: {"engine_id": e, "results": [], "failures": {}, "documents": {}} for e, _ in ENGINES}
    # Per query and engine: the normalized URLs in rank order, or None for a failed capture.
    lists = {e: {} for e, _ in ENGINES}
    displayable = {}
    plan = {}  # doc key -> judgment
    url_key = {}
    doc_counter = [0]

    def add_document(url, status, title):
        if url in displayable:
            return
        doc_counter[0] += 1
        key = f"k-{doc_counter[0]:04d}"
        url_key[url] = key
        displayable[url] = status == "ok"
        owner = fixtures[ENGINES[doc_counter[0] % 2][0]]["documents"]
        if status == "ok":
            owner[url] = {"status": "ok", "body": doc_body(key, title), "content_type": "text/html; charset=utf-8"}
        elif status == "missing":
            pass  # never recorded: fetched as 404
        elif status == "timeout":
            owner[url] = {"status": "timeout"}
        else:
            owner[url] = {"status": "http-error", "code": int(status)}

    def record(engine, query, rank, raw):
        fixtures[engine]["results"].append({"query": query, "rank": rank, "raw_url": raw, "title": f"result {rank}"})

    # Informational queries.
    special_failed = informational[4]   # south capture fails
    special_short = informational[9]    # south returns 6 results
    special_empty = informational[17]   # neither engine returns anything
    for qi, q in enumerate(informational):
        slug = q.replace(" ", "-")
        pool = [f"https://site-{(qi * 7 + d) % 23}.example/{slug}/page-{d}" for d in range(16)]
        for d, url in enumerate(pool):
            roll = rng.random()
            status = "ok"
            if roll < 0.04:
                status = "timeout"
            elif roll < 0.07:
                status = "404"
            elif roll < 0.09:
                status = "missing"
            elif roll < 0.10:
                status = "500"
            add_document(url, status, f"{q} part {d}")
        shared = rng.randint(4, 10)
        north_urls = pool[:10]
        south_urls = pool[:shared] + pool[10:10 + (10 - shared)]
        rng.shuffle(south_urls)
        rng.shuffle(north_urls)
        if q == special_empty:
            north_urls, south_urls = [], []
        if q == special_short:
            south_urls = south_urls[:6]

        normalized_north = []
        for rank, url in enumerate(north_urls, start=1):
            raw = url
            if rank in (2, 7):
                raw = TRACK + "?u=" + urllib.parse.quote(url, safe="")
            if rank == 5 and qi % 6 == 0:
                # A redirect that lost its target: kept, flagged, never fetched.
                raw = f"{TRACK}?ref=q{qi}"
                url = raw
                displayable[url] = False
                url_key[url] = None
            record("north", q, rank, raw)
            normalized_north.append(url)
        lists["north"][q] = normalized_north
        for rank, url in enumerate(south_urls, start=1):
            record("south", q, rank, url)
        if q == special_failed:
            fixtures["south"]["failures"][q] = "captcha page"
            lists["south"][q] = None
        else:
            lists["south"][q] = list(south_urls)

    # Judgments for every displayable pooled result: one skip in some tasks,
    # a few grade-only answers, never enough gaps to miss the voucher bar.
    for q in informational:
        pooled = []
        for e, _ in ENGINES:
            for url in lists[e][q] or []:
                if url not in pooled:
                    pooled.append(url)
        judgeable = [u for u in pooled if displayable[u]]
        skip_one = len(judgeable) >= 11 and rng.random() < 0.4
        for i, url in enumerate(judgeable):
            key = url_key[url]
            if skip_one and i == len(judgeable) // 2:
                plan[key] = {"skip": True}
                continue
            grade = rng.choice([0, 1, 1, 2, 2, 3, 3, 3, 4, 4])
            if rng.random() < 0.04:
                plan[key] = {"graded": grade}
            else:
                relevant = grade >= 2 if rng.random() < 0.85 else grade < 2
                plan[key] = {"binary": "relevant" if relevant else "not-relevant", "graded": grade}

    # Navigational queries: the first result is the target, a wrong page, or nothing.
    nav_key = {}
    for qi, q in enumerate(navigational):
        slug = q.replace(" ", "-")
        target = f"https://{slug}.example/"
        wrong = f"https://directory.example/listing/{slug}"
        nav_key[q] = target
        add_document(target, "timeout" if qi == 11 else "ok", q)
        add_document(wrong, "ok", f"listing {q}")
        north_first = None if qi == 3 else (wrong if qi % 9 == 5 else target)
        south_first = wrong if qi % 4 == 1 or qi == 13 else target
        if qi == 13:
            north_first = wrong  # both engines share the same wrong page
        for e, first in (("north", north_first), ("south", south_first)):
            if first is not None:
                record(e, q, 1, first)
                # Deeper results exist but lie beyond the navigational depth.
                record(e, q, 2, f"https://extra.example/{slug}/{e[0]}")
            lists[e][q] = [first] if first else []
        if qi == 20:
            fixtures["south"]["failures"][q] = "timeout"
            lists["south"][q] = None

    texts = "\n".join(informational + navigational).lower()
    for e, name in ENGINES:
        assert e not in texts and name.lower() not in texts, e
    for f in fixtures.values():
        for d in f["documents"].values():
            assert all(e not in d.get("body", "") for e, _ in ENGINES)

    sheet = answer_sheet(informational, navigational, lists, displayable, url_key, plan, nav_key)

    out.mkdir(parents=True, exist_ok=True)
    (out / "log.tsv").write_text("\n".join(log_lines) + "\n")
    (out / "labels.tsv").write_text("# query<TAB>intent\n" + "\n".join(label_lines) + "\n")
    for e, f in fixtures.items():
        f["results"].sort(key=lambda r: (r["query"], r["rank"]))
        (out / f"{e}.json").write_text(json.dumps(f, indent=1, sort_keys=True) + "\n")
    (out / "jurors.json").write_text(json.dumps({"documents": plan, "navigational_targets": nav_key},
                                                indent=1, sort_keys=True) + "\n")
    (out / "answer_sheet.json").write_text(json.dumps(sheet, indent=1, sort_keys=True) + "\n")
    config = {
        "version": 1,
        "study_id": "demo",
        "seed": SEED,
        "store": "store",
        "fixtures": ".",
        "sampling": {
            "log": "log.tsv", "log_format": "aggregate", "labels": "labels.tsv",
            "segments": 3, "candidates_per_segment": 100, "target_per_intent": 10, "label_mode": "strict",
        },
        "collection": {
            "run_id": "demo-run", "depth": {"informational": DEPTH, "navigational": 1}, "concurrency": 4,
            "degraded_threshold": 0.25, "pinned_time": PINNED_TIME,
            "tracking": [{"host": "track.example", "path_prefix": "/r", "target_param": "u"}],
        },
        "engines": [
            {"engine_id": e, "display_name": name, "adapter": "replay-fixture", "fixture": f"{e}.json"}
            for e, name in ENGINES
        ],
        "study": {
            "access_code_sha256": [hashlib.sha256(ACCESS_CODE.encode()).hexdigest()],
            "admin_token_sha256": hashlib.sha256(ADMIN_TOKEN.encode()).hexdigest(),
            "lease_minutes": 60, "voucher_threshold": "9/10", "listen": "127.0.0.1:8080",
        },
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")


def answer_sheet(informational, navigational, lists, displayable, url_key, plan, nav_key):
    def judgment(url):
        if not displayable[url]:
            return {"skip": True}
        return plan.get(url_key[url], {})

    sheet = {"engines": {}, "overlap": None}
    for e, _ in ENGINES:
        rows = [lists[e][q] or [] for q in informational]
        precision = []
        for k in list(range(1, DEPTH + 1)) + [None]:
            num = den = 0
            per_query = []
            for urls in rows:
                r = d = 0
                for url in urls[:k] if k else urls:
                    j = judgment(url)
                    if j.get("skip") or "binary" not in j:
                        continue
                    d += 1
                    r += j["binary"] == "relevant"
                num += r
                den += d
                if d:
                    per_query.append(Fraction(r, d))
            precision.append({"micro": frac(Fraction(num, den) if den else None), "macro": frac(mean(per_query)),
                              "relevant": num, "judged": den})
        by_rank = [[] for _ in range(DEPTH)]
        counts = [0] * 5
        for urls in rows:
            for rank, url in enumerate(urls):
                j = judgment(url)
                if j.get("skip") or "graded" not in j:
                    continue
                by_rank[rank].append(j["graded"])
                counts[j["graded"]] += 1
        cumulative, flat = [], []
        for grades in by_rank:
            flat += grades
            cumulative.append(frac(mean([Fraction(g) for g in flat])))
        total = sum(counts)
        coverage = {"queries": len(informational), "failed_captures": 0, "empty_lists": 0, "entries": 0,
                    "judged": 0, "binary": 0, "graded": 0, "skipped": 0, "failed": 0, "unjudged": 0}
        for q in informational:
            if lists[e][q] is None:
                coverage["failed_captures"] += 1
            elif not lists[e][q]:
                coverage["empty_lists"] += 1
        for urls in rows:
            for url in urls:
                coverage["entries"] += 1
                j = judgment(url)
                if not displayable[url]:
                    coverage["failed"] += 1
                elif j.get("skip"):
                    coverage["skipped"] += 1
                elif j:
                    coverage["judged"] += 1
                    coverage["binary"] += "binary" in j
                    coverage["graded"] += "graded" in j
                else:
                    coverage["unjudged"] += 1

        correct = 0
        reciprocal = Fraction(0)
        for q in navigational:
            urls = lists[e][q] or []
            if urls and urls[0] == nav_key[q]:
                correct += 1
                reciprocal += 1
        n = len(navigational)
        sheet["engines"][e] = {
            "precision_at_k": precision[:DEPTH],
            "overall": precision[DEPTH],
            "mean_graded_by_position": [frac(mean([Fraction(g) for g in grades])) for grades in by_rank],
            "cumulative_graded": cumulative,
            "grade_counts": counts,
            "grade_ratios": [frac(Fraction(c, total)) if total else None for c in counts],
            "coverage": coverage,
            "navigational": {"correct": correct, "queries": n, "success_rate": frac(Fraction(correct, n)),
                             "success_at_1": frac(Fraction(correct, n)), "mrr": frac(reciprocal / n)},
        }

    jaccards = []
    for q in informational:
        a, b = lists["north"][q], lists["south"][q]
        if a is None or b is None:
            continue
        sa, sb = set(a[:DEPTH]), set(b[:DEPTH])
        if sa | sb:
            jaccards.append(Fraction(len(sa & sb), len(sa | sb)))
    sheet["overlap"] = {"queries": len(jaccards), "mean": frac(mean(jaccards))}
    sheet["tasks"] = len(informational)
    sheet["unanswered_queries"] = sum(1 for q in informational
                                      if not (lists["north"][q] or []) and not (lists["south"][q] or []))
    return sheet


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "fixtures" / "demo")
    build(parser.parse_args().out)
