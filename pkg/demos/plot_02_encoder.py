"""
The utterance encoder
=====================

Strided convolution, a stack of GRU layers and attention pooling map a
variable-length feature matrix to one unit-length vector.
"""

# %%
import numpy as np

from spokensem import Encoder, EncoderConfig, init_encoder

rng = np.random.default_rng(0)
config = EncoderConfig(gru_layers=2, gru_hidden=64, attention_hidden=32)
encoder = Encoder(init_encoder(config, rng), config)

# %%
# Lengths differ, embeddings do not.
utterances = [rng.normal(size=(n, 13)) for n in (45, 120, 300)]
emb = encoder.encode_batch(utterances)
print(emb.shape, np.linalg.norm(emb, axis=1))

# %%
# Batching is purely an efficiency matter: padding is masked out, so a
# padded row matches the utterance encoded on its own.
alone = encoder.encode(utterances[0])
print(np.abs(alone - emb[0]).max())

# %%
# Attention weights live on the convolution's time grid
# (``1 + (T - 6) // 3`` steps) and sum to one.
alpha = encoder.attention(utterances[1])
print(len(alpha), alpha.sum())
print("most attended step:", int(alpha.argmax()))
