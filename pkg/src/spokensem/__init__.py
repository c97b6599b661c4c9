"""Unsupervised semantic embeddings of spoken utterances.

A numpy implementation of a conv/GRU/attention utterance encoder trained
either to decode neighbouring speech (Audio2vec-C/U) or to match the two
halves of an utterance (SegMatch), with paraphrase-retrieval and RSA
evaluation.
"""
from .audio2vec import Audio2Vec, split_thirds
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import SynthSpec, batcher, generate_synthetic, load_manifest, synthesize
from .encoder import Encoder, EncoderConfig, init_encoder
from .evaluation import (EmbeddingSet, MetricReport, artifact_probe, chance_baseline, chance_recall,
                         mean_mfcc_baseline, paraphrase_retrieval, rsa, speaker_probe)
from .frontend import AudioClip, FrontendConfig, extract_mfcc, read_wav
from .segmatch import AdversaryConfig, SegMatch, cosine_distance, segmatch_loss, split_halves
from .ssem import read_features, read_matrix, write_features, write_matrix
from .training import TrainConfig, train

__version__ = "0.1.0"
