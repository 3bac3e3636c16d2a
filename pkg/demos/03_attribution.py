"""Which frames drove the classifier's decision?

Trains nothing: uses a seeded network on a synthetic clip, computes
input-gradient saliency for the predicted class, collapses it to the
per-frame attention signal, segments the salient acoustic units, and
exports Audacity markers. With an untrained net the salient spans are
arbitrary; the pipeline and the duration bookkeeping are the point.
"""

import numpy as np

from smallvoice import attribution as attr
from smallvoice import dsp
from smallvoice import models as mdl

rng = np.random.default_rng(7)
D, T = 8, 120

frames = 0.3 * rng.normal(size=(T, D)).astype(np.float32)
frames[40:52, :] += 4.0  # a louder stretch, as in real speech
fs = dsp.FeatureSequence(frames, 10.0, 30.0)

model = mdl.build(mdl.langid_config(D), seed=3)

grads = attr.saliency(model, fs)
print(f"saliency field: {grads.shape[0]} frames x {grads.shape[1]} dims")

signal = attr.attention_signal(grads)
print(f"attention sums to {signal.weights.sum():.9f}; "
      f"peak at frame {int(np.argmax(signal.weights))}")

units = attr.segment_units(signal, fs)
print(f"{len(units)} salient unit(s) above mean + 2 std:")
for u in units:
    print(f"  frames {u.start_frame}-{u.end_frame}  c={u.frame_count}  "
          f"d={(u.frame_count - 1) * 10 + 30} ms  "
          f"(formula: (c-1)*p + f with p=10, f=30)")

attr.write_audacity_labels(units, fs, "demo_units_labels.txt")
attr.write_units_csv(units, "demo_clip", "demo_units.csv")
print("wrote demo_units_labels.txt (Audacity label track) and demo_units.csv")
