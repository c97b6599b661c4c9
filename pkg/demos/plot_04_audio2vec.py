"""
Audio2vec: predicting the neighbours of a chunk
===============================================

The middle third of an utterance is encoded; two decoders reconstruct the
first and third chunks from that code. Variant C also sees the preceding
true frame at each step, variant U only the code.
"""

# %%
import numpy as np

from spokensem import Audio2Vec, EncoderConfig, split_thirds

rng = np.random.default_rng(0)
x = rng.normal(size=(50, 13))
first, middle, third = split_thirds(x)
print(len(first), len(middle), len(third))

# %%
config = EncoderConfig(gru_layers=1, gru_hidden=32, attention_hidden=16)
u = Audio2Vec("U", config, decoder_hidden=24, seed=0)
c = Audio2Vec("C", config, decoder_hidden=32, seed=0)

pred_first, pred_third = u.predict(x)
print(pred_first.shape, pred_third.shape)

# %%
# Variant U never looks at the chunks it predicts: changing them leaves
# the prediction untouched, while variant C follows the true frames.
y = x.copy()
y[:16] += 1.0
print("U changed:", not np.allclose(u.predict(x)[0], u.predict(y)[0]))
print("C changed:", not np.allclose(c.predict(x)[0], c.predict(y)[0]))

# %%
# The loss is the squared error averaged over frames and the 13 features of
# both outer chunks, then over the batch.
print(u.loss([x]), c.loss([x]))
