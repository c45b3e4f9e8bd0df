"""Smoke test for the pycallsum extension.

Build first:  pip install --no-build-isolation ./crates/py
Then run:     python python/smoke_test.py
"""

import json
from pathlib import Path

import pycallsum

ASSETS = Path(__file__).resolve().parent.parent / "crates" / "core" / "assets"


def main() -> None:
    assert abs(pycallsum.rouge_l("the cat sat", "the cat ran home") - 4 / 7) < 1e-12

    report = pycallsum.compose(0.5, 0.5, None, None)
    assert report["flags"]["informativeness_undefined"]
    assert report["sumsim"] == 0.5

    scored = pycallsum.score(
        "customer wants a discount",
        "the customer asked for a discount",
        "customer: can I get a discount on seats",
        keywords=["discount"],
    )
    assert 0.0 <= scored["sumsim"] <= 1.0

    assert pycallsum.classify(10.0, 50.0, 200.0) == "ACCEPT"
    assert pycallsum.classify(100.0, 50.0, 200.0) == "REVIEW"
    assert pycallsum.classify(500.0, 50.0, 200.0) == "REJECT"

    call = pycallsum.Transcript.from_json((ASSETS / "sample_call.json").read_text())
    assert len(call) == 40
    spans = pycallsum.segment(call, max_segment_tokens=96, split_penalty=1.0)
    assert spans[0][0] == 0 and spans[-1][1] == 39
    assert all(a[1] + 1 == b[0] for a, b in zip(spans, spans[1:]))

    small = pycallsum.Transcript.from_turns([("agent", "hello there"), ("customer", "hi, pricing please")])
    assert small.turns()[1][0] == "customer"

    pipeline = pycallsum.Pipeline(str(ASSETS / "config.toml"))
    session = pipeline.summarize(call, session_id="smoke")
    assert session.session_id == "smoke"
    assert session.state == "GENERATED"
    highlights = session.highlights(include_hidden=True)
    assert highlights and all("status" in h for h in highlights)

    first = highlights[0]["id"]
    session.record_edit(first, "edit", new_text="Customer asked about pricing.")
    session.record_edit(first, "accept")
    assert session.replay_matches()
    session.finalize()
    assert session.state == "FINALIZED"
    doc = json.loads(session.export("json"))
    assert "Customer asked about pricing." in [h["text"] for h in doc["highlights"]]

    restored = pycallsum.Session.from_json(session.to_json())
    assert restored.replay_matches()

    lm = pycallsum.LanguageModel.load(str(ASSETS / "summary_lm.json"))
    assert lm.perplexity("the customer asked about pricing") > 1.0
    assert abs(pipeline.perplexity("customer") - lm.perplexity("customer")) < 1e-9

    print(f"smoke test ok: {len(spans)} segments, {len(highlights)} highlights")


if __name__ == "__main__":
    main()
