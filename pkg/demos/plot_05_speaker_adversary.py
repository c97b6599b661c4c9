"""
Discouraging speaker information with gradient reversal
=======================================================

A speaker classifier reads the segment encodings. On the way back its
gradient is multiplied by ``-lambda``, so the classifier improves while the
encoder is pushed to make its job harder.
"""

# %%
import numpy as np

from spokensem import nn
from spokensem.segmatch import AdversaryConfig, SegMatch

x = np.arange(6.0).reshape(2, 3)
y, lam = nn.grad_reverse_forward(x, 0.5)
print(np.array_equal(x, y), nn.grad_reverse_backward(np.ones_like(x), lam))

# %%
# Attach the adversary to SegMatch. ``loss_terms`` exposes the two parts of
# the objective separately.
from spokensem import EncoderConfig, SynthSpec, synthesize

corpus = synthesize(SynthSpec(num_classes=8, paraphrases_per_class=2, train_paraphrases_per_class=2))
feats, _, speakers = corpus.subset("train")
labels = [int(s[-1]) for s in speakers]
model = SegMatch(EncoderConfig(gru_layers=1, gru_hidden=32, attention_hidden=16), projection_dim=32,
                 adversary=AdversaryConfig(num_speakers=4, hidden=32, lam=1.0, weight=1.0))
margin, ce = model.loss_terms(feats[:8], labels[:8])
print("margin loss %.3f, speaker cross-entropy %.3f (log 4 = %.3f)" % (margin, ce, np.log(4)))

# %%
# ``speaker_probe`` fits a fresh logistic regression on frozen embeddings;
# it is the yardstick for how much speaker identity survives.
from spokensem import speaker_probe

print(speaker_probe(model.embed(feats), speakers))
