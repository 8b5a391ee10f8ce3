"""Pilot for the paired desk-scale runs: sink contrast and regime contrast."""
import sys
import time

import numpy as np

from swat_lab import *
from swat_lab.analysis import sink_report

OUT = "/root/pkg/.pilot"

text = synthetic_text(2_000_000, seed=0)
corpus = corpus_from_bytes(text, seed=0)

RUNS = {
    "A-vanilla-softmax": dict(window=64, tlen=64, act="softmax", pos="rope", slope="none"),
    "B-swat-sigmoid": dict(window=64, tlen=256, act="sigmoid", pos="alirope", slope="balanced"),
    "C-sliding-softmax": dict(window=64, tlen=256, act="softmax", pos="rope", slope="none"),
}

STEPS = 600
BATCH = 8192

models = {}
for name, r in RUNS.items():
    cfg = ModelConfig(vocab_size=259, d_model=128, n_heads=4, n_layers=2,
                      window=r["window"], activation=r["act"], pos_mode=r["pos"],
                      slope_mode=r["slope"], seed=0)
    m = build_model(cfg)
    spec = BatchSpec(batch_size_tokens=BATCH, train_length=r["tlen"], train_window=r["window"])
    t0 = time.time()
    m, log = train(m, corpus, spec, TrainConfig(steps=STEPS, log_every=50, seed=0))
    print(f"{name}: {STEPS} steps in {(time.time()-t0)/60:.1f} min, "
          f"loss {log.records[0].loss:.4f} -> {log.records[-1].loss:.4f}", flush=True)
    save_checkpoint(m, f"{OUT}/{name}.swat")
    models[name] = m

eval_tokens = corpus.val

# sink_report anchors internally, so N-1 content tokens give an N-position report
for N in (64, 128):
    print(f"\n=== sink reports at N={N} (2/N = {2.0/N:.5f}) ===", flush=True)
    for name in ("A-vanilla-softmax", "B-swat-sigmoid"):
        rep = sink_report(models[name], eval_tokens[: N - 1])
        shares = ", ".join(f"{s:.5f}" for s in rep.first_share)
        print(f"{name}: shares [{shares}]  raw [{', '.join(f'{s:.5f}' for s in rep.first_mass_raw)}]")

print("\n=== regime contrast (eval_window=64, anchored streams) ===", flush=True)
for name in ("A-vanilla-softmax", "C-sliding-softmax", "B-swat-sigmoid"):
    m = models[name]
    row = []
    for length in (64, 256, 1024):
        n_streams = min(eval_tokens.size // length, 4096 // length * 8)
        tot_n, tot_c = 0.0, 0
        for s in range(n_streams):
            stream = eval_tokens[s * length:(s + 1) * length]
            p = perplexity(m, stream, eval_window=64, method="banded")
            tot_n += np.log(p) * stream.size
            tot_c += stream.size
        row.append(np.exp(tot_n / tot_c))
    print(f"{name}: ppl@64 {row[0]:.4f}  ppl@256 {row[1]:.4f}  ppl@1024 {row[2]:.4f}  "
          f"degradation64->256 {(row[1]/row[0]-1)*100:+.1f}%", flush=True)
print("pilot done", flush=True)
