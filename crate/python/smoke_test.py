"""Smoke test for the synthweave extension module.

Build and run from the repository root:

    cargo build -p synthweave-py --release --features extension-module
    cp target/release/libsynthweave.so python/synthweave.so
    python3 python/smoke_test.py
"""
import json
import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
import synthweave as sw  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def check(name, cond):
    print(f"{'ok  ' if cond else 'FAIL'} {name}")
    if not cond:
        check.failed += 1


check.failed = 0

# scaling
tokens = [1e10, 5e10, 2.5e11, 3e11, 1e12, 4e12]
acc = [64.6, 74.7, 80.5, 80.9, 83.1, 84.4]
fit = sw.ScalingFit.fit("rectified", tokens, [1 - a / 100 for a in acc])
check("rectified fit reproduces points", all(abs(fit.predict(d) - (1 - a / 100)) <= 0.005 for d, a in zip(tokens, acc)))
check("params dict", set(fit.params) == {"B", "D_l", "beta", "E"})
d = fit.tokens_for_target(fit.predict(1e11))
check("inverse round-trips", math.isclose(d, 1e11, rel_tol=1e-3))
try:
    fit.tokens_for_target(fit.params["E"] / 2)
    check("unreachable target raises", False)
except ValueError:
    check("unreachable target raises", True)

# text utilities
check("normalize_text", sw.normalize_text("  Hello\tWORLD ") == "hello world")
v = sw.mock_embed("the integral of x", 32, 1)
check("mock_embed unit norm", len(v) == 32 and math.isclose(sum(x * x for x in v), 1.0, rel_tol=1e-9))

# concept parsing
raw = (FIXTURES / "concepts_trigonometry.txt").read_text()
fields = sw.parse_concept_output(raw)
check("concept topics parsed", len(fields["topics"]) == 5)
check("serialize/parse fixpoint", sw.parse_concept_output(sw.serialize_concept_output(fields)) == fields)

# graph
sets = [
    {"doc_id": "a", "level": "high_school", "subject": "Math", "topics": ["Algebra", "Geometry"],
     "key_concepts": {"Algebra": ["Linear equations"], "Geometry": ["Angles", "Triangles"]}},
    {"doc_id": "b", "level": "high_school", "subject": "Math", "topics": ["Algebra", "Calculus"],
     "key_concepts": {"Algebra": ["Linear equations", "Quadratics"], "Calculus": ["Limits"]}},
]
g = sw.ConceptGraph.build(sets)
probs = dict(g.transition_probs("topic_topic", "Algebra"))
check("graph transition probs sum to 1", math.isclose(sum(probs.values()), 1.0))
samples = g.sample(epochs=2, seed=3)
check("graph samples", len(samples) > 0 and all(s["key_concepts"] for s in samples))
check("grounding", sw.ground_documents(samples[0], sets, 2)[0] in {"a", "b"})

# dedup and decontamination
qs = [
    {"qid": "q2", "text": "Find the area of the triangle.", "gen_level": 1, "source_doc_ids": []},
    {"qid": "q1", "text": "find  the area of the TRIANGLE.", "gen_level": 1, "source_doc_ids": []},
]
check("dedup keeps smaller qid", [q["qid"] for q in sw.dedup(qs)] == ["q1"])
check("decontaminate", sw.decontaminate(qs, {"bench": ["find the area of the triangle"]}, 3) == [])

# forest
xs = [[float(i % 2), float(i) / 40] for i in range(40)]
ys = [float(i % 2) for i in range(40)]
f = sw.Forest.train(xs, ys, "binary", n_trees=10, max_depth=3, seed=1)
check("forest predicts", f.predict([1.0, 0.5]) > 0.5 > f.predict([0.0, 0.5]))
check("forest json round-trip", sw.Forest.from_json(f.to_json()).to_json() == f.to_json())

# pipeline
with tempfile.TemporaryDirectory() as out:
    m = sw.run_pipeline(out, str(FIXTURES / "pipeline" / "config.json"))
    check("pipeline manifest", m["stage"] == "pipeline" and m["counts"]["gen-answers.answered"] > 0)
    qa = (Path(out) / "qa.jsonl").read_text().splitlines()
    check("qa artifact", len(qa) == m["counts"]["gen-answers.answered"] and "answer" in json.loads(qa[0]))

print(f"{check.failed} failure(s)")
sys.exit(1 if check.failed else 0)
