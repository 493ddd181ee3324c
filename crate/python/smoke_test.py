"""Smoke test for the phonelime Python extension.

Build and install first, e.g. ``pip install --no-build-isolation ./crates/python``.
"""

import tempfile
from pathlib import Path

import phonelime

VOCAB = ["aa", "iy", "sh", "er", "uw"]
SLOT = 1120  # 70 ms at 16 kHz


def slot_clip(ids):
    samples = [1000 * (i + 1) for i in ids for _ in range(SLOT)]
    return phonelime.AudioClip("smoke", samples)


def main():
    ids = [0, 2, 4, 1]
    clip = slot_clip(ids)
    rec = phonelime.Recognizer.synthetic(VOCAB)
    assert rec.transcribe(clip) == [VOCAB[i] for i in ids]

    with tempfile.TemporaryDirectory() as tmp:
        wav = Path(tmp) / "clip.wav"
        clip.write(wav)
        back = phonelime.AudioClip.read(wav)
        assert back.samples == clip.samples and back.sample_rate == 16000

    expert = phonelime.Segmentation.parse_phn(
        "".join(f"{k * SLOT} {(k + 1) * SLOT} {VOCAB[i]}\n" for k, i in enumerate(ids))
    )
    assert expert.labels() == [VOCAB[i] for i in ids]
    masked = clip.mask(expert, [1])
    assert rec.transcribe(masked) == [VOCAB[i] for i in (0, 4, 1)]

    for strategy in ("lime", "lime-ws", "lime-ts"):
        expls = phonelime.explain(clip, rec, expert=expert, strategy=strategy, seed=3)
        assert len(expls) == len(ids)
        for p, e in enumerate(expls):
            assert e["ranking"][0] == p, (strategy, p, e["scores"])

    result = phonelime.align(["aa", "iy", "sh"], ["aa", "sh"])
    assert result["cost"] == 3
    assert [op["kind"] for op in result["ops"]] == ["match", "deletion", "match"]

    intercept, scores = phonelime.fit_weighted_ridge(
        [[1, 1], [0, 1], [1, 0], [0, 0]], [1.0] * 4, [1.0, 0.0, 1.0, 0.0], lambda_=0.0
    )
    assert abs(scores[0] - 1.0) < 1e-9 and abs(scores[1]) < 1e-9 and abs(intercept) < 1e-9
    assert phonelime.rank_scores([0.1, -2.0, 0.5]) == [2, 0, 1]
    assert phonelime.rank_scores([0.1, -2.0, 0.5], absolute=True) == [1, 2, 0]

    w = phonelime.wilcoxon([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0])
    assert w["w_minus"] == 0 and w["n"] == 4

    v1, v3, v5 = phonelime.random_baseline([(5, [0])], trials=2000, seed=1)
    assert 0.1 < v1 < 0.3 and v5 == 1.0

    with tempfile.TemporaryDirectory() as tmp:
        manifest = phonelime.synth_corpus(tmp, n_clips=4, slots=5)
        report = phonelime.evaluate(manifest, strategies=["lime-ts"], baseline_trials=200)
        assert report["entries"] == 4 and not report["failures"]

    try:
        phonelime.Recognizer.subprocess(["/nonexistent/recognizer"]).transcribe(clip)
    except phonelime.RecognizerError:
        pass
    else:
        raise AssertionError("missing recognizer did not raise")

    print("phonelime smoke test passed")


if __name__ == "__main__":
    main()
