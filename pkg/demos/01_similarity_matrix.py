"""How seen classes hand soft labels to unseen ones.

Builds the default 16/4 world and prints, for a few seen classes, the
distribution over unseen classes that supervises the unseen head.
"""
import numpy as np

from zsdet.semantics import cosine_similarity
from zsdet.synthdata import SynthConfig, generate_embeddings, make_vocabulary
from zsdet import build_similarity_matrix

cfg = SynthConfig()
vocab = make_vocabulary(cfg)
table = generate_embeddings(cfg)
S = build_similarity_matrix(table, vocab)

unseen = [vocab.names[i] for i in vocab.unseen_indices]
print(f"{len(vocab.names) - 1} foreground classes; unseen = {unseen}")
print(f"{'class':>12} " + " ".join(f"{u:>7}" for u in unseen))
for name in ("cat", "horse", "bus", "chair", "dog"):
    row = S[vocab.index(name)]
    print(f"{name:>12} " + " ".join(f"{p:7.3f}" for p in row))

# the nearest unseen class by cosine is the argmax of the seen row
cat = vocab.index("cat")
cos = [cosine_similarity(table.embeddings[cat - 1], table.embeddings[u - 1]) for u in vocab.unseen_indices]
print("cat cosines:", np.round(cos, 3), "-> favours", unseen[int(np.argmax(S[cat]))])
print("background row sums to", S[0].sum())
