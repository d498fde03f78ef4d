"""Training loop and evaluation harness.

One iteration: sample a batch, evaluate the composite loss at 2S perturbed
parameter vectors through the black-box oracle (refining against a fixed
prototype snapshot so every perturbation probes the same landscape), take an
SPSA-GC step, then fold the winning-side predictions of each perturbation
pair into the class prototypes via their EMA rule. Prototypes start from
KL-clustered zero-prompt predictions of the few-shot training images.

Checkpoints are plain JSON (float32 parameter/momentum payloads in base64,
prototypes and RNG state inline) and restore training bit-exactly with the
builtin oracle: optimizer state is quantized to float32 at every step, so a
save/load round trip loses nothing.
"""

import base64
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import simplex
from .config import RunConfig, config_from_dict, config_to_dict
from .datagen import ShiftSpec, biased_dataset, few_shot_split, loc_dataset, source_glyph_dataset
from .errors import ConfigurationError, EstimationError, InvalidInputError, QueryError
from .imageops import bilinear_resize, center_pad, clamp01
from .objective import BatchPredictions, total_loss
from .oracle import RemoteOracle, train_builtin_oracle
from .prompter import flatten, init_params, prepare_batch, prompt_prepared, sigmoid, unflatten
from .zo import OptimizerState, step

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
NUM_CLASSES = 10  # digit glyph classes

# Batch rule: the whole few-shot train set when it is small enough, otherwise
# class-balanced random batches of this size.
FULL_BATCH_LIMIT = 512
RANDOM_BATCH_SIZE = 128


def zero_prompt_batch(images, geom):
    """Present images the way a zero-parameter prompt would: resize + pad."""
    resized = clamp01(bilinear_resize(images, geom.resized_h, geom.resized_w))
    return center_pad(resized, geom.full_h, geom.full_w)


@dataclass(frozen=True)
class Fixture:
    """Materialized run inputs: oracle plus few-shot and test splits."""

    config: RunConfig
    oracle: object
    train_set: object
    val_set: object
    test_set: object

    @property
    def geometry(self):
        return self.config.geometry


def build_fixture(config):
    """Datasets and oracle for a config; pure given the config (and the
    remote endpoint's behavior, when one is used)."""
    ds = config.dataset
    make = biased_dataset if ds.kind == "biased" else loc_dataset
    pool = make(ShiftSpec(kind=ds.kind, rho=ds.rho, ratio=ds.ratio, split="train",
                          n_per_class=ds.n_per_class, seed=ds.seed))
    test = make(ShiftSpec(kind=ds.kind, rho=ds.rho, ratio=ds.ratio, split="test",
                          n_per_class=ds.n_test_per_class, seed=ds.seed))
    train, val, _ = few_shot_split(pool, config.shots_train, config.shots_val, seed=ds.seed)

    geom = config.geometry
    spec = config.oracle
    if spec.kind == "builtin":
        source = source_glyph_dataset(spec.source_n_per_class, seed=spec.seed,
                                      noise=spec.source_noise)
        presented = zero_prompt_batch(source.images, geom)
        oracle = train_builtin_oracle(presented, source.labels, NUM_CLASSES, seed=spec.seed)
    else:
        oracle = RemoteOracle(spec.endpoint, max_in_flight=spec.max_in_flight)
    if oracle.input_geometry != geom.oracle_shape:
        raise InvalidInputError(
            f"oracle expects {oracle.input_geometry}, config geometry is {geom.oracle_shape}"
        )
    return Fixture(config=config, oracle=oracle, train_set=train, val_set=val, test_set=test)


@dataclass
class Checkpoint:
    config: RunConfig
    params: np.ndarray      # float32 flat prompter parameters
    momentum: np.ndarray    # float32, same length
    prototypes: simplex.PrototypeSet | None
    iteration: int
    rng_state: str          # JSON-encoded bit-generator state
    version: int = CHECKPOINT_VERSION

    def to_json(self):
        doc = OrderedDict()
        doc["version"] = self.version
        doc["config"] = config_to_dict(self.config)
        doc["params_shape"] = [int(self.params.size)]
        doc["params_b64"] = _encode_f32(self.params)
        doc["momentum_b64"] = _encode_f32(self.momentum)
        doc["prototypes"] = (
            None if self.prototypes is None else self.prototypes.anchors.tolist()
        )
        doc["iter"] = int(self.iteration)
        doc["rng"] = self.rng_state
        return json.dumps(doc)

    def save(self, path):
        Path(path).write_text(self.to_json())
        return Path(path)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {doc.get('version')}")
        n = doc["params_shape"][0]
        protos = doc["prototypes"]
        return cls(
            config=config_from_dict(doc["config"]),
            params=_decode_f32(doc["params_b64"], n),
            momentum=_decode_f32(doc["momentum_b64"], n),
            prototypes=None if protos is None else simplex.PrototypeSet(np.array(protos)),
            iteration=doc["iter"],
            rng_state=doc["rng"],
        )

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _encode_f32(arr):
    return base64.b64encode(np.asarray(arr).astype("<f4").tobytes()).decode("ascii")


def _decode_f32(text, n):
    arr = np.frombuffer(base64.b64decode(text), dtype="<f4")
    if arr.size != n:
        raise ConfigurationError(f"payload holds {arr.size} floats, expected {n}")
    return arr.astype(np.float32)


def _class_balanced_batch(train_set, batch_size, rng):
    labels = train_set.labels
    classes = np.unique(labels)
    per = max(1, batch_size // classes.size)
    idx = np.concatenate([
        rng.choice(np.flatnonzero(labels == c), size=min(per, np.sum(labels == c)),
                   replace=False)
        for c in classes
    ])
    return train_set.images[idx], labels[idx]


def train(config=None, resume_from=None, fixture=None):
    """Run (or resume) training; returns (final Checkpoint, metrics rows).

    The first metrics entry is a header object echoing the config; one row per
    completed iteration follows, with validation accuracies and a checkpoint
    file every `eval_every` iterations. With `output_dir` set, metrics land in
    metrics.jsonl and checkpoints in checkpoint*.json.

    `resume_from` (Checkpoint or path) picks up mid-run state; the config must
    match the checkpoint's echo. `fixture` reuses already-built datasets and
    oracle (the ablation matrix shares one across variants).
    """
    if isinstance(resume_from, (str, Path)):
        resume_from = Checkpoint.load(resume_from)
    if resume_from is not None:
        if config is None:
            config = resume_from.config
        elif config_to_dict(config) != config_to_dict(resume_from.config):
            raise ConfigurationError("resume config differs from the checkpoint's echo")
    if config is None:
        raise ConfigurationError("need a config or a checkpoint to resume from")

    if fixture is None:
        fixture = build_fixture(config)
    geom, oracle = config.geometry, fixture.oracle
    k = oracle.num_classes
    refinement = config.refinement_enabled
    rng = np.random.default_rng(config.seed)

    if resume_from is None:
        params = flatten(init_params(geom, rng)).astype(np.float32)
        momentum = np.zeros_like(params)
        t0 = 0
        prototypes = None
        if refinement:
            baseline = oracle.predict_batch(zero_prompt_batch(fixture.train_set.images, geom))
            prototypes = simplex.init_prototypes(baseline, fixture.train_set.labels, k)
    else:
        params = resume_from.params.copy()
        momentum = resume_from.momentum.copy()
        t0 = resume_from.iteration
        prototypes = resume_from.prototypes
        rng.bit_generator.state = json.loads(resume_from.rng_state)

    schedule = config.schedule.build(config.iterations)
    state = OptimizerState(params=params, momentum=momentum, t=t0, beta=config.beta,
                           s=config.num_perturbations, dist=config.dist)

    metrics = [{"header": {"version": CHECKPOINT_VERSION, "config": config_to_dict(config)}}]
    out_dir = Path(config.output_dir) if config.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    n_train = len(fixture.train_set)
    explicit = config.batch_size
    full_batch = explicit is None and n_train <= FULL_BATCH_LIMIT
    if full_batch:
        batch_images, batch_labels = fixture.train_set.images, fixture.train_set.labels
        prepared = prepare_batch(batch_images, geom)

    def checkpoint_now():
        return Checkpoint(
            config=config, params=state.params.copy(), momentum=state.momentum.copy(),
            prototypes=prototypes, iteration=state.t,
            rng_state=json.dumps(rng.bit_generator.state),
        )

    def flush_metrics():
        if out_dir:
            with open(out_dir / "metrics.jsonl", "w") as fh:
                for row in metrics:
                    fh.write(json.dumps(row) + "\n")

    halved = False
    while state.t < config.iterations:
        if not full_batch:
            size = explicit if explicit is not None else RANDOM_BATCH_SIZE
            batch_images, batch_labels = _class_balanced_batch(fixture.train_set, size, rng)
            prepared = prepare_batch(batch_images, geom)

        proto_snapshot = prototypes
        records = []

        def loss_eval(flat):
            p = unflatten(flat, geom)
            prompted = prompt_prepared(prepared, p)
            raw = oracle.predict_batch(prompted)
            refined = (
                simplex.refine_batch(raw, proto_snapshot)
                if refinement and proto_snapshot is not None else None
            )
            value, comps = total_loss(
                BatchPredictions(raw=raw, refined=refined, labels=batch_labels),
                weights=config.loss_weights,
            )
            records.append((raw, comps, value))
            return value

        try:
            state, report = step(state, schedule, loss_eval, rng, surgery=config.use_surgery)
        except EstimationError:
            if halved:
                flush_metrics()
                raise
            halved = True
            schedule = replace(schedule, a0=schedule.a0 / 2)
            config = replace(config, schedule=replace(config.schedule, a0=config.schedule.a0 / 2))
            log.warning("non-finite loss at iteration %d; halving a0 and retrying", state.t + 1)
            continue
        except QueryError:
            if out_dir:
                checkpoint_now().save(out_dir / "checkpoint_emergency.json")
                flush_metrics()
            raise

        if refinement:
            s = config.num_perturbations
            winning = [
                records[2 * i + (0 if report.winners[i] == "plus" else 1)][0]
                for i in range(s)
            ]
            pooled = np.vstack(winning)
            pooled_labels = np.tile(batch_labels, s)
            class_means = {
                int(c): pooled[pooled_labels == c].mean(axis=0)
                for c in np.unique(pooled_labels)
            }
            prototypes = simplex.update_prototypes(prototypes, class_means)

        row = {
            "iter": state.t,
            "loss": float(np.mean([r[2] for r in records])),
            "loss_cls": float(np.mean([r[1]["cls"] for r in records])),
            "loss_aux": float(np.mean([r[1]["aux"] for r in records])),
            "loss_intra": float(np.mean([r[1]["intra"] for r in records])),
            "sigma_phi_s": sigmoid(float(state.params[-1])),
        }
        if state.t % config.eval_every == 0 or state.t == config.iterations:
            raw_probs = _predict_with_params(fixture, fixture.val_set.images, state.params)
            row["acc_raw"] = _accuracy(raw_probs, fixture.val_set.labels)
            if refinement:
                refined = simplex.refine_batch(raw_probs, prototypes)
                row["acc_refined"] = _accuracy(refined, fixture.val_set.labels)
            if out_dir:
                checkpoint_now().save(out_dir / f"checkpoint_{state.t:06d}.json")
        metrics.append(row)

    final = checkpoint_now()
    if out_dir:
        final.save(out_dir / "checkpoint.json")
        flush_metrics()
    return final, metrics


def _predict_with_params(fixture, images, flat_params):
    prepared = prepare_batch(images, fixture.geometry)
    prompted = prompt_prepared(prepared, unflatten(flat_params, fixture.geometry))
    return fixture.oracle.predict_batch(prompted)


def _accuracy(probs, labels):
    return float(np.mean(probs.argmax(axis=1) == labels))


def _per_class_accuracy(probs, labels, k):
    preds = probs.argmax(axis=1)
    return [
        float(np.mean(preds[labels == c] == c)) if np.any(labels == c) else None
        for c in range(k)
    ]


EVAL_MODES = ("raw", "refined", "posthoc")


def evaluate(checkpoint, split="val", mode="refined", fixture=None):
    """Accuracy of a checkpoint on a split.

    raw:     argmax of the oracle's probabilities for prompted images.
    refined: argmax after softmax(-KL) against the trained prototypes.
    posthoc: KL k-means on the split's prompted predictions, seeded from the
             trained prototypes (which carry the class identities), then
             refinement against the resulting cluster means.
    """
    if isinstance(checkpoint, (str, Path)):
        checkpoint = Checkpoint.load(checkpoint)
    if mode not in EVAL_MODES:
        raise ConfigurationError(f"mode must be one of {EVAL_MODES}")
    if fixture is None:
        fixture = build_fixture(checkpoint.config)
    dataset = {"train": fixture.train_set, "val": fixture.val_set,
               "test": fixture.test_set}.get(split)
    if dataset is None:
        raise ConfigurationError(f"split must be train|val|test, got {split!r}")
    if len(dataset) == 0:
        raise InvalidInputError(f"split {split!r} is empty")

    k = fixture.oracle.num_classes
    raw = _predict_with_params(fixture, dataset.images, checkpoint.params)
    if mode == "raw":
        scores = raw
    else:
        if checkpoint.prototypes is None:
            raise ConfigurationError(f"{mode} evaluation needs trained prototypes")
        anchors = checkpoint.prototypes
        if mode == "posthoc":
            anchors, _, _ = simplex.kl_kmeans(raw, k, init=anchors)
        scores = simplex.refine_batch(raw, anchors)
    return {
        "split": split,
        "mode": mode,
        "n": len(dataset),
        "accuracy": _accuracy(scores, dataset.labels),
        "per_class": _per_class_accuracy(scores, dataset.labels, k),
    }


ABLATION_VARIANTS = (
    (1, "hybrid prompting", (1.0, 0.0, 0.0), False, "raw"),
    (2, "+ prediction refinement", (1.0, 0.0, 0.0), False, "posthoc"),
    (3, "+ auxiliary simplex training", (1.0, 1.0, 0.0), False, "refined"),
    (4, "+ intra-class relation loss", (1.0, 1.0, 1.0), False, "refined"),
    (5, "+ gradient surgery", (1.0, 1.0, 1.0), True, "refined"),
)


def ablation_matrix(config):
    """Train the five cumulative variants on shared fixtures and report
    validation accuracy per variant (components enter in the order: hybrid
    prompting, post-hoc refinement, auxiliary prototype training, intra-class
    relation loss, gradient surgery)."""
    fixture = build_fixture(config)
    rows = []
    for num, label, weights, surgery, mode in ABLATION_VARIANTS:
        cfg = replace(config, loss_weights=weights, use_surgery=surgery, output_dir=None)
        ckpt, _ = train(cfg, fixture=replace(fixture, config=cfg))
        if mode == "posthoc" and ckpt.prototypes is None:
            # Variant trains without prototypes; class anchors are fitted to the
            # prompted few-shot predictions after training, per the post-hoc rule.
            raw = _predict_with_params(fixture, fixture.train_set.images, ckpt.params)
            ckpt = replace(
                ckpt,
                prototypes=simplex.init_prototypes(raw, fixture.train_set.labels,
                                                   fixture.oracle.num_classes),
            )
        result = evaluate(ckpt, "val", mode, fixture=fixture)
        rows.append({
            "variant": num,
            "label": label,
            "mode": mode,
            "accuracy": result["accuracy"],
        })
    return rows
