"""Turn Yelp review/tip dumps into the tab-separated interaction format.

Ratings map to behaviors: <= 2 dislike, 3 neutral, >= 4 like. Tips become
``tips``. Train with ``behaviors = tips, dislike, neutral, like`` and
``target = like``.

    python3 scripts/prepare_yelp.py review.json tip.json -o yelp.tsv --min-count 10
"""
import argparse
import json
from collections import Counter


def rating_behavior(stars):
    if stars <= 2:
        return "dislike"
    if stars < 4:
        return "neutral"
    return "like"


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("reviews")
    ap.add_argument("tips", nargs="?")
    ap.add_argument("-o", "--output", required=True)
    ap.add_argument("--min-count", type=int, default=0,
                    help="drop users and businesses with fewer interactions (single pass)")
    args = ap.parse_args()

    rows = set()
    for r in read_jsonl(args.reviews):
        rows.add((r["user_id"], r["business_id"], rating_behavior(float(r["stars"]))))
    if args.tips:
        for t in read_jsonl(args.tips):
            rows.add((t["user_id"], t["business_id"], "tips"))
    if args.min_count:
        users = Counter(u for u, _, _ in rows)
        items = Counter(i for _, i, _ in rows)
        rows = {r for r in rows if users[r[0]] >= args.min_count and items[r[1]] >= args.min_count}
    with open(args.output, "w", encoding="utf-8") as fh:
        for u, i, b in sorted(rows):
            fh.write(f"{u}\t{i}\t{b}\n")
    print(json.dumps({"interactions": len(rows), **Counter(b for *_, b in rows)}))


if __name__ == "__main__":
    main()
