"""Regenerates the synthetic three-annotator fixture and its golden report.

Golden agreement values come from scikit-learn's cohen_kappa_score and
statsmodels' fleiss_kappa, independently of the Rust implementation.

    python3 fixtures/generate_annotation_fixture.py
"""

import json
from pathlib import Path

import numpy as np
from sklearn.metrics import cohen_kappa_score
from statsmodels.stats.inter_rater import aggregate_raters, fleiss_kappa

CLASSES = [
    "Evacuees", "General Information", "Preparedness", "Weather Reports",
    "Warnings & Status Updates", "Reports of Actions of Responders",
    "Infrastructure", "Political", "Insurance", "Advertisement",
    "Smoke & Air Quality", "Support", "Other",
]
# Class frequencies of the labeled corpus.
COUNTS = [252, 170, 264, 296, 669, 356, 264, 329, 158, 117, 1128, 178, 507]
ANNOTATORS = ["ann1", "ann2", "ann3"]
ACCURACY = [0.86, 0.82, 0.70]
ITEMS = 200
HERE = Path(__file__).parent


def main():
    rng = np.random.default_rng(20240601)
    prior = np.array(COUNTS) / sum(COUNTS)
    table = np.zeros((ITEMS, 3), dtype=int)
    lines = []
    for i in range(ITEMS):
        truth = rng.choice(13, p=prior)
        for k, acc in enumerate(ACCURACY):
            label = truth if rng.random() < acc else rng.integers(13)
            table[i, k] = label
            lines.append(json.dumps({
                "post_id": f"fx{i:03d}",
                "annotator_id": ANNOTATORS[k],
                "label": CLASSES[label],
                "flags": [],
            }))
    (HERE / "annotations.jsonl").write_text("\n".join(lines) + "\n")

    def vote(row):
        vals, counts = np.unique(row, return_counts=True)
        if counts.max() >= 2:
            return vals[counts.argmax()]
        return row[0]

    voted = np.array([vote(r) for r in table])
    majority = np.mean([np.unique(r, return_counts=True)[1].max() >= 2 for r in table])
    full = np.mean([len(set(r)) == 1 for r in table])
    rows = [
        ("Majority Agreement (2 same)", majority),
        ("Full Agreement (all same)", full),
    ]
    for k in range(3):
        rows.append((f"Vote between all/annotator {k + 1}", np.mean(table[:, k] == voted)))
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        rows.append((f"Cohen's Kappa annotator {a + 1}-{b + 1}", cohen_kappa_score(table[:, a], table[:, b])))
    counts, _ = aggregate_raters(table)
    rows.append(("Fleiss' Kappa", fleiss_kappa(counts, method="fleiss")))
    golden = {"rows": [{"metric": m, "value": float(v)} for m, v in rows]}
    (HERE / "agreement.golden.json").write_text(json.dumps(golden, indent=2) + "\n")


if __name__ == "__main__":
    main()
