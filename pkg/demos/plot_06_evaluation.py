"""
Paraphrase retrieval, RSA and the leakage probe
===============================================

All evaluation works from a matrix of embeddings and the image id of each
utterance; nothing depends on how the embeddings were made.
"""

# %%
import numpy as np

from spokensem import artifact_probe, paraphrase_retrieval, rsa

rng = np.random.default_rng(0)
image_ids = np.repeat(np.arange(20), 5)
centers = rng.normal(size=(20, 16))

# %%
# Paraphrases as noisy copies of a class center. Recall@K divides the hits
# in the top K by ``min(K, #paraphrases)``, so 1.0 is always attainable.
for noise in (0.1, 1.0, 3.0):
    emb = centers[image_ids] + noise * rng.normal(size=(100, 16))
    rep = paraphrase_retrieval(emb, image_ids)
    print(noise, rep.median_rank, {k: round(v, 3) for k, v in rep.recall_at.items()})

# %%
# RSA is the correlation between the two pairwise similarity structures.
emb = centers[image_ids] + 0.5 * rng.normal(size=(100, 16))
print("aligned:", round(rsa(emb, centers[image_ids]), 3))
print("shuffled:", round(rsa(emb, centers[image_ids][rng.permutation(100)]), 3))

# %%
# The artifact probe asks whether the raw id number can be read off the two
# leading principal components. Leaky embeddings encode it; relabeling the
# ids destroys the effect.
ids = np.arange(300)
leaky = np.column_stack([ids / 300, 0.01 * rng.normal(size=(300, 7))])
print(artifact_probe(leaky, ids))
print(artifact_probe(rng.normal(size=(300, 8)), ids))
