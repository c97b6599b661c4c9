"""
SegMatch on a synthetic corpus
==============================

The beginning and end of an utterance (around a 30-frame gap) should embed
closer to each other than to segments of other utterances in the batch.
Nothing else supervises the encoder, yet paraphrases end up near each other.
"""

# %%
# The synthetic corpus: 40 pseudo-images, each described by a short word
# sequence. Words are fixed MFCC-space templates; speakers add an offset.
import numpy as np

from spokensem import (EncoderConfig, SegMatch, SynthSpec, TrainConfig, chance_recall,
                       mean_mfcc_baseline, paraphrase_retrieval, rsa, synthesize, train)

corpus = synthesize(SynthSpec())
train_x, _, train_spk = corpus.subset("train")
val_x, val_img, val_spk = corpus.subset("val")
print(len(train_x), "training and", len(val_x), "validation utterances")

# %%
# Baselines. Averaging frames already captures which words were spoken, but
# it also captures the speaker.
mfcc = mean_mfcc_baseline(val_x)
print("chance recall@10:", round(chance_recall(10, 4, 199), 4))
print("mean MFCC recall@10:", round(paraphrase_retrieval(mfcc, val_img).recall_at[10], 4))

# %%
# A reduced encoder keeps this to a few seconds per epoch. Batches hold a
# single speaker, so the speaker offset never helps tell segments apart.
model = SegMatch(EncoderConfig(gru_layers=2, gru_hidden=128, attention_hidden=128),
                 projection_dim=128, seed=0)
result = train(model, train_x, train_spk, val_x, val_img,
               TrainConfig(lr=1e-3, max_epochs=5, speaker_blocked=True))
for r in result.records:
    print(r["epoch"], round(r["train_loss"], 3), round(r["val_recall@10"], 3))

# %%
# Evaluate the best epoch. RSA compares the geometry of the embeddings with
# that of the pseudo-image vectors.
model.params = result.best_params
emb = model.embed(val_x)
report = paraphrase_retrieval(emb, val_img)
report.rsa = rsa(emb, corpus.image_matrix("val"))
print(report.to_text())
