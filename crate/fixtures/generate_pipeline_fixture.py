"""Regenerates the small end-to-end pipeline fixture under fixtures/pipeline/.

    python3 fixtures/generate_pipeline_fixture.py

Outputs:
  posts.jsonl        130 labeled posts from 2023, ten per class
  labels.jsonl       {id, label} for every post
  images/*.png       one 32x32 swatch per class
  gazetteer.csv      offline location table
  responses.jsonl    recorded zero-shot answers for the first 50 posts
  zeroshot.expected.json  parses of those answers, computed here
  expectations.json  weekly Evacuees spike and province tallies
"""

import json
import re
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from PIL import Image

CLASSES = [
    "Evacuees", "General Information", "Preparedness", "Weather Reports",
    "Warnings & Status Updates", "Reports of Actions of Responders",
    "Infrastructure", "Political", "Insurance", "Advertisement",
    "Smoke & Air Quality", "Support", "Other",
]
LETTERS = "ABCDEFGHIJKLM"
KEYWORDS = [
    "evacuation order shelter evacuees leaving town",
    "hectares burned situation overview acres",
    "prepare emergency kit firesmart property",
    "forecast rain wind lightning radar",
    "fire ban alert update officials warning",
    "crews firefighters prescribed burn helicopter",
    "highway closed road detour power lines",
    "premier minister government policy",
    "insurance claim coverage policyholders",
    "restaurant discount app deal",
    "smoke haze air quality mask breathing",
    "donate support mental health relief fund",
    "sunset photo scenery thoughts",
]
FILLER = "today here now again update wildfire canada season".split()
LOCATIONS = [
    ("Kelowna, BC", "BC"), ("Calgary AB", "AB"), ("Edmonton", "AB"),
    ("Vancouver, British Columbia", "BC"), ("Yellowknife NWT", "NT"),
    ("Paris, France", "NOT_CANADA"), ("somewhere on earth", "NOT_FOUND"),
    (None, "NOT_FOUND"),
]
GAZETTEER = [
    ("kelowna", "", "BC", "Canada"),
    ("calgary", "yyc", "AB", "Canada"),
    ("edmonton", "yeg", "AB", "Canada"),
    ("vancouver", "yvr", "BC", "Canada"),
    ("yellowknife", "yzf", "NT", "Canada"),
    ("paris", "", "", "France"),
]
SPIKE_WEEK = datetime(2023, 6, 5, tzinfo=timezone.utc)
HERE = Path(__file__).parent / "pipeline"


def parse(raw):
    """Independent statement of the single-letter answer rule."""
    if raw is None:
        return None
    s = raw.lstrip(" \t\r\n\"'`*_([{").rstrip(" \t\r\n\"'`*_]}")
    m = re.fullmatch(r"([A-Ma-m])(?:[.):](?:\s.*)?)?", s, flags=re.S)
    return m.group(1).upper() if m else None


def main():
    rng = np.random.default_rng(77)
    (HERE / "images").mkdir(parents=True, exist_ok=True)
    for c in range(13):
        colour = tuple(int(v) for v in rng.integers(0, 256, 3))
        img = Image.new("RGB", (32, 32), colour)
        img.putpixel((c, c), (255, 255, 255))
        img.save(HERE / "images" / f"class{c:02d}.png")

    posts, labels = [], []
    provinces = {}
    spike = 0
    start = datetime(2023, 1, 1, tzinfo=timezone.utc)
    for i in range(130):
        c = i % 13
        if c == 0 and i < 90:
            ts = SPIKE_WEEK + timedelta(hours=int(rng.integers(0, 7 * 24)))
            spike += 1
        else:
            ts = start + timedelta(minutes=int(rng.integers(0, 364 * 24 * 60)))
        words = KEYWORDS[c].split() + list(rng.choice(FILLER, 4))
        rng.shuffle(words)
        loc, prov = LOCATIONS[int(rng.integers(len(LOCATIONS)))]
        provinces[prov] = provinces.get(prov, 0) + 1
        pid = f"p{i:03d}"
        posts.append({
            "id": pid,
            "text": " ".join(words),
            "image": f"images/class{c:02d}.png",
            "created_at": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "location": loc,
            "year": 2023,
        })
        labels.append({"id": pid, "label": CLASSES[c]})
    write_lines(HERE / "posts.jsonl", posts)
    write_lines(HERE / "labels.jsonl", labels)

    with open(HERE / "gazetteer.csv", "w") as f:
        f.write("name,aliases,province,country\n")
        for row in GAZETTEER:
            f.write(",".join(row) + "\n")

    styles = ["{l}", " {l}.\n", "{l})", "**{l}**", "{low}", "{l}: because", "'{l}'"]
    bad = ["I think it's smoke", "Option 12", "AB", "", "The answer is B"]
    responses, expected = [], []
    for i in range(50):
        c = int(rng.integers(13))
        rec = {"post_id": f"p{i:03d}", "raw": None, "fail_attempts": 0}
        if i % 9 == 4:
            rec["raw"] = bad[(i // 9) % len(bad)]
        else:
            style = styles[i % len(styles)]
            rec["raw"] = style.format(l=LETTERS[c], low=LETTERS[c].lower())
        if i % 17 == 3:
            rec["fail_attempts"] = 1
        if i in (21, 42):
            rec["raw"] = None
            rec["fail_attempts"] = 5
        responses.append(rec)
        letter = parse(rec["raw"])
        expected.append(CLASSES[LETTERS.index(letter)] if letter else "UNPARSEABLE")
    write_lines(HERE / "responses.jsonl", responses)
    summary = {
        "labels": expected,
        "unparseable": sum(e == "UNPARSEABLE" for e in expected),
        "failed": sum(r["raw"] is None for r in responses),
    }
    (HERE / "zeroshot.expected.json").write_text(json.dumps(summary, indent=2) + "\n")
    meta = {
        "spike_week": SPIKE_WEEK.strftime("%Y-%m-%d"),
        "spike_posts": spike,
        "provinces": dict(sorted(provinces.items())),
    }
    (HERE / "expectations.json").write_text(json.dumps(meta, indent=2) + "\n")


def write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


if __name__ == "__main__":
    main()
