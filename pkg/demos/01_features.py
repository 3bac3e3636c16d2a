"""From raw audio to a portable feature file.

Synthesizes a short two-tone clip, runs the standard preprocessing chain
(mono, 16 kHz, peak normalization), computes a 128-band log-mel
spectrogram, and round-trips it through the NLF1 container.
"""

import numpy as np

from smallvoice import dsp

rng = np.random.default_rng(0)

# a 1.5 s clip: 440 Hz, then 880 Hz, with a little noise, at 22.05 kHz
rate = 22050
t = np.arange(int(1.5 * rate)) / rate
tone = np.where(t < 0.75,
                np.sin(2 * np.pi * 440 * t),
                0.6 * np.sin(2 * np.pi * 880 * t))
clip = (0.4 * tone + 0.01 * rng.normal(size=t.shape)).astype(np.float32)

w = dsp.Waveform(clip, rate)
print(f"input: {len(w.samples)} samples at {w.sample_rate} Hz")

w16 = dsp.preprocess(w)
print(f"preprocessed: {len(w16.samples)} samples at {w16.sample_rate} Hz, "
      f"peak {np.abs(w16.samples).max():.3f}")

fs = dsp.mel_spectrogram(w16)
print(f"mel spectrogram: T={fs.num_frames} frames x D={fs.dim} bands, "
      f"hop {fs.frame_period_ms} ms, window {fs.receptive_field_ms} ms")

centers = dsp.mel_center_frequencies()
first = int(np.argmax(fs.frames[10]))
last = int(np.argmax(fs.frames[-10]))
print(f"dominant band early in the clip: #{first} (~{centers[first]:.0f} Hz)")
print(f"dominant band late in the clip:  #{last} (~{centers[last]:.0f} Hz)")

dsp.write_features(fs, "demo_features.nlf1")
back = dsp.read_features("demo_features.nlf1")
print(f"NLF1 round trip bit-exact: {np.array_equal(back.frames, fs.frames)}")
