"""Command-line pipeline: featurize -> train -> encode -> eval.

Exit codes: 0 success, 1 usage/configuration, 2 data, 3 numerics.
"""
import argparse
from dataclasses import asdict, dataclass, fields
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import ssem
from .checkpoint import MODEL_NAMES, build_model, load_checkpoint, save_checkpoint
from .corpus import (SynthSpec, generate_synthetic, load_features, load_image_features,
                     load_manifest, numeric_ids, select_split, write_manifest)
from .encoder import EncoderConfig
from .errors import ConfigError, DataError, SpokenSemError, UsageError
from .evaluation import MetricReport, artifact_probe, mean_mfcc_baseline, paraphrase_retrieval, rsa
from .frontend import FrontendConfig, extract_mfcc, read_wav
from .nn import Adam
from .segmatch import AdversaryConfig
from .training import TrainConfig, speaker_vocabulary, train

log = logging.getLogger("spokensem")

MEAN_MFCC = "mean-mfcc"


@dataclass
class RunConfig:
    model: str = "segmatch"
    conv_size: int = 6
    conv_channels: int = 64
    conv_stride: int = 3
    gru_layers: int = 5
    gru_hidden: int = 512
    attention_hidden: int = 512
    decoder_hidden: int = 512
    projection_dim: int = 512
    lr: float = 0.0002
    max_epochs: int = 15
    clip: float = 2.0
    margin: float = 0.2
    erased_frames: int = 30
    batch_size: int = 16
    speaker_blocked: bool = False
    adversary: bool = False
    adversary_lambda: float = 1.0
    adversary_weight: float = 1.0
    adversary_hidden: int = 512
    seed: int = 0

    def encoder_config(self):
        return EncoderConfig(conv_size=self.conv_size, conv_channels=self.conv_channels,
                             conv_stride=self.conv_stride, gru_layers=self.gru_layers,
                             gru_hidden=self.gru_hidden, attention_hidden=self.attention_hidden)

    def train_config(self):
        return TrainConfig(lr=self.lr, max_epochs=self.max_epochs, clip=self.clip,
                           batch_size=self.batch_size, speaker_blocked=self.speaker_blocked,
                           seed=self.seed)

    def hyperparameters(self, num_speakers):
        if self.model == "segmatch":
            hp = {"projection_dim": self.projection_dim, "margin": self.margin,
                  "erased": self.erased_frames}
            if self.adversary:
                hp["adversary"] = asdict(AdversaryConfig(num_speakers, self.adversary_hidden,
                                                         self.adversary_lambda, self.adversary_weight))
            return hp
        return {"decoder_hidden": self.decoder_hidden}


def _coerce(field_type, raw, key):
    try:
        if field_type is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type is int:
            return int(raw)
        if field_type is float:
            return float(raw)
        return str(raw).strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines (``#`` starts a comment) into a dict."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], raw, key)
    return values


def make_run_config(config_path=None, overrides=None):
    values = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        values.update(parse_config_text(text, str(config_path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(**values)
    if cfg.model not in MODEL_NAMES:
        raise UsageError(f"unknown model {cfg.model!r}; choose from {', '.join(MODEL_NAMES)}")
    return cfg


def config_header(cfg):
    return "\n".join(f"# {k} = {v}" for k, v in asdict(cfg).items())


# ------------------------------------------------------------------ commands

def cmd_featurize(args):
    entries = load_manifest(args.manifest, check_files=False)
    out_dir = Path(args.out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    frontend = FrontendConfig()
    failures, computed, skipped = [], 0, 0
    for e in entries:
        if not e.is_audio:
            continue
        target = feat_dir / f"{e.utterance_id}.ssem"
        if target.exists():
            try:
                ssem.read_features(target)
                e.source = str(target)
                skipped += 1
                continue
            except SpokenSemError:
                pass
        try:
            ssem.write_features(extract_mfcc(read_wav(e.source, frontend.sample_rate), frontend), target)
        except (SpokenSemError, OSError) as exc:
            failures.append(f"{e.utterance_id}\t{exc}")
            continue
        e.source = str(target)
        computed += 1
    write_manifest(entries, out_dir / "manifest")
    print(f"computed {computed}, skipped {skipped}, failed {len(failures)}")
    report = out_dir / "featurize_failures.txt"
    report.unlink(missing_ok=True)
    if failures:
        report.write_text("\n".join(failures) + "\n")
        for line in failures:
            print(f"FAILED {line}", file=sys.stderr)
        return DataError.exit_code
    return 0


def cmd_gen_synthetic(args):
    spec = SynthSpec(num_classes=args.num_classes, paraphrases_per_class=args.paraphrases,
                     train_paraphrases_per_class=args.train_paraphrases,
                     num_speakers=args.num_speakers, noise_std=args.noise_std,
                     speaker_shift_std=args.speaker_shift_std, seed=args.seed)
    entries = generate_synthetic(spec, args.out_dir)
    print(f"wrote {len(entries)} utterances to {args.out_dir}")
    return 0


def _split_features(entries, split):
    chosen = select_split(entries, split)
    if not chosen:
        raise DataError(f"split {split!r} is empty")
    return chosen, [load_features(e) for e in chosen]


def cmd_train(args):
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    cfg = make_run_config(args.config, overrides)
    print(config_header(cfg))
    entries = load_manifest(args.manifest)
    train_entries, train_x = _split_features(entries, "train")
    val_entries, val_x = _split_features(entries, "val")
    speakers = [e.speaker_id for e in train_entries]
    vocab = speaker_vocabulary(speakers)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer, start_epoch = None, 0
    if args.resume:
        model, state, header = load_checkpoint(args.resume)
        if model.name != cfg.model:
            raise ConfigError(f"checkpoint holds {model.name}, config asks for {cfg.model}")
        start_epoch = int(header["meta"].get("epoch", 0))
        vocab = header["meta"].get("speakers", vocab)
        if state is not None:
            optimizer = Adam(lr=cfg.lr)
            optimizer.load_state_dict(state)
    else:
        model = build_model(cfg.model, cfg.encoder_config(), cfg.hyperparameters(len(vocab)), seed=cfg.seed)

    with open(out_dir / "train_log.jsonl", "a") as fh:
        result = train(model, train_x, speakers, val_x, [e.image_id for e in val_entries],
                       cfg.train_config(), optimizer=optimizer, start_epoch=start_epoch,
                       log_file=fh, speaker_vocab=vocab)
    last_epoch = result.records[-1]["epoch"]
    meta = {"epoch": last_epoch, "speakers": vocab, "run_config": asdict(cfg)}
    save_checkpoint(out_dir / "last.ckpt", model, result.optimizer, meta)
    model.params = result.best_params
    save_checkpoint(out_dir / "best.ckpt", model, None, dict(meta, epoch=result.best_epoch))
    print(json.dumps(result.best_record, sort_keys=True))
    return 0


def cmd_encode(args):
    entries = load_manifest(args.manifest)
    chosen, xs = _split_features(entries, args.split)
    if args.checkpoint == MEAN_MFCC:
        emb = mean_mfcc_baseline(xs)
    else:
        model, _, _ = load_checkpoint(args.checkpoint)
        emb = model.embed(xs)
    ssem.write_matrix(emb, args.out)
    print(f"wrote {emb.shape[0]}x{emb.shape[1]} embeddings to {args.out}")
    return 0


def _load_eval_inputs(args):
    entries = select_split(load_manifest(args.manifest), args.split)
    emb = ssem.read_matrix(args.embeddings)
    if len(emb) != len(entries):
        raise DataError(f"{len(emb)} embedding rows but {len(entries)} utterances in split {args.split!r}")
    return entries, emb


def cmd_eval(args):
    entries, emb = _load_eval_inputs(args)
    image_ids = [e.image_id for e in entries]
    images = None
    if args.image_features == "manifest":
        images = load_image_features(entries)
    elif args.image_features:
        images = ssem.read_matrix(args.image_features)
        if len(images) != len(entries):
            raise DataError(f"{len(images)} image rows but {len(entries)} utterances")

    has_paraphrases = len(set(image_ids)) < len(image_ids)
    if not has_paraphrases and images is None:
        raise DataError("single caption per image: paraphrase retrieval is undefined and RSA "
                        "needs --image-features")
    report = paraphrase_retrieval(emb, image_ids) if has_paraphrases else MetricReport()
    if images is not None:
        report.rsa = rsa(emb, images)
    if args.probe:
        report.probe_r2, report.probe_r2_relabeled = artifact_probe(
            emb, numeric_ids(image_ids), seed=args.seed)
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    return 0


def cmd_probe(args):
    entries, emb = _load_eval_inputs(args)
    ids = [e.image_id if args.target == "image" else e.speaker_id for e in entries]
    r2, r2_relabeled = artifact_probe(emb, numeric_ids(ids), seed=args.seed)
    print(f"probe_r2: {r2:.6g}\nprobe_r2_relabeled: {r2_relabeled:.6g}")
    return 0


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="spokensem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    subs = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = subs.add_parser("featurize", help="extract MFCC features for audio entries")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_featurize)

    s = subs.add_parser("gen-synthetic", help="write the synthetic desk-scale corpus")
    s.add_argument("--out-dir", required=True)
    d = SynthSpec()
    s.add_argument("--num-classes", type=int, default=d.num_classes)
    s.add_argument("--paraphrases", type=int, default=d.paraphrases_per_class)
    s.add_argument("--train-paraphrases", type=int, default=d.train_paraphrases_per_class)
    s.add_argument("--num-speakers", type=int, default=d.num_speakers)
    s.add_argument("--noise-std", type=float, default=d.noise_std)
    s.add_argument("--speaker-shift-std", type=float, default=d.speaker_shift_std)
    s.add_argument("--seed", type=int, default=d.seed)
    s.set_defaults(func=cmd_gen_synthetic)

    s = subs.add_parser("train", help="train a model; flags override the config file")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--resume")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            s.add_argument(flag, dest=f.name, default=None,
                           type=lambda v, n=f.name: _coerce(bool, v, n), metavar="BOOL")
        elif f.name == "model":
            s.add_argument(flag, dest=f.name, default=None, choices=MODEL_NAMES)
        else:
            s.add_argument(flag, dest=f.name, default=None, type=f.type)
    s.set_defaults(func=cmd_train)

    s = subs.add_parser("encode", help="embed one split of a manifest")
    s.add_argument("--checkpoint", required=True, help=f"checkpoint path or '{MEAN_MFCC}'")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="val")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    for name, func, text in (("eval", cmd_eval, "paraphrase retrieval, RSA and optional probe"),
                             ("probe", cmd_probe, "PCA + kNN id-leakage probe")):
        s = subs.add_parser(name, help=text)
        s.add_argument("--embeddings", required=True)
        s.add_argument("--manifest", required=True)
        s.add_argument("--split", default="val")
        s.add_argument("--seed", type=int, default=0)
        if name == "eval":
            s.add_argument("--image-features", nargs="?", const="manifest", default=None,
                           help="N x D SSEM matrix; without a value, use per-entry manifest paths")
            s.add_argument("--probe", action="store_true")
            s.add_argument("--json")
        else:
            s.add_argument("--target", choices=("image", "speaker"), default="image")
        s.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SpokenSemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
