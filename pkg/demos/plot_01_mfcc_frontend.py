"""
From waveform to MFCC frames
============================

Every utterance enters the models as a ``T x 13`` matrix: twelve cepstral
coefficients plus log frame energy, one row per 10 ms.
"""

# %%
# A synthetic "utterance": a gliding tone with a short pause in the middle.
import numpy as np

from spokensem import AudioClip, extract_mfcc

sr = 16000
t = np.arange(sr) / sr
signal = 0.3 * np.sin(2 * np.pi * (300 + 400 * t) * t)
signal[7000:9000] = 0.0
clip = AudioClip(signal, sr)

# %%
# 25 ms Hamming windows every 10 ms give ``1 + (16000 - 400) // 160 = 98``
# frames for one second of audio.
feats = extract_mfcc(clip)
print(feats.shape)

# %%
# Column 12 is log energy. The pause is obvious there, floored at log(1e-10).
energy = feats[:, 12]
print(np.round(energy[::10], 2))
print("quietest frame:", energy.min(), "=", np.log(1e-10))

# %%
# Scaling the waveform only shifts the energy column; cepstra are unchanged
# because the gain ends up as an additive constant on c0, which is dropped.
louder = extract_mfcc(AudioClip(4 * signal, sr))
print(np.abs(louder[:, :12] - feats[:, :12]).max())
print(np.unique(np.round(louder[:, 12] - feats[:, 12], 6))[:3], 2 * np.log(4))
