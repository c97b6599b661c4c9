"""
The command-line pipeline
=========================

``spokensem`` (or ``python -m spokensem``) runs generation, training,
encoding and evaluation as separate steps that communicate through files.
This script drives the same entry point in-process.
"""

# %%
import tempfile
from pathlib import Path

from spokensem.cli import main

work = Path(tempfile.mkdtemp())
main(["gen-synthetic", "--out-dir", str(work / "corpus"), "--num-classes", "10"])

# %%
# A deliberately small model and two epochs; every flag can also come from a
# ``key = value`` file passed with ``--config``.
main(["train", "--manifest", str(work / "corpus" / "manifest"), "--out-dir", str(work / "run"),
      "--gru-layers", "1", "--gru-hidden", "32", "--attention-hidden", "32", "--projection-dim", "32",
      "--max-epochs", "2", "--lr", "0.001", "--speaker-blocked", "true"])

# %%
main(["encode", "--checkpoint", str(work / "run" / "best.ckpt"),
      "--manifest", str(work / "corpus" / "manifest"), "--out", str(work / "val.ssem")])
main(["eval", "--embeddings", str(work / "val.ssem"), "--manifest", str(work / "corpus" / "manifest"),
      "--image-features"])

# %%
# The mean-MFCC baseline goes through the same path.
main(["encode", "--checkpoint", "mean-mfcc", "--manifest", str(work / "corpus" / "manifest"),
      "--out", str(work / "mfcc.ssem")])
main(["eval", "--embeddings", str(work / "mfcc.ssem"), "--manifest", str(work / "corpus" / "manifest"),
      "--image-features"])
