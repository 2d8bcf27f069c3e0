"""Supervised training of the slice-sequence decoder, plus evaluation metrics.

The optimizer follows the published recipe: Adam on shuffled mini-batches of
32 with learning rate 1e-4, global gradient clipping at 5, dropout after
every conv activation and on the recurrent output, early stopping on held-out
accuracy.  Everything is deterministic given the config seed.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as md
from .errors import ConfigurationError, InputError
from .lrp import select_window

# kept probability by layer: 30% drop for conv 1-2, 40% for conv 3-4,
# 50% for the rest of the stack and the recurrent output
DEFAULT_DROPOUT = (0.3, 0.3, 0.4, 0.4, 0.5)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 60
    clip_threshold: float = 5.0     # None disables clipping entirely
    dropout: tuple = DEFAULT_DROPOUT
    patience: int = 5
    seed: int = 0
    dtype: type = np.float32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigurationError("batch size and patience must be >= 1, epochs >= 0")
        for p in self.dropout:
            if not 0.0 <= p < 1.0:
                raise ConfigurationError(f"dropout probability {p} outside [0, 1)")


def dropout_prob(layer_index, schedule=DEFAULT_DROPOUT):
    """Drop probability for 1-based `layer_index`; the schedule's last entry
    covers every deeper layer."""
    if layer_index < 1:
        raise ConfigurationError(f"layer index must be >= 1, got {layer_index}")
    if not schedule:
        return 0.0
    return schedule[min(layer_index - 1, len(schedule) - 1)]


def dropout_mask(layer_index, shape, rng, schedule=DEFAULT_DROPOUT, training=True,
                 dtype=np.float64):
    """Inverted-scaling dropout mask: kept entries carry 1/(1-p)."""
    p = dropout_prob(layer_index, schedule)
    if p >= 1.0:
        raise ConfigurationError("dropout probability 1 would zero the layer")
    if not training or p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


@dataclass
class SampleSet:
    """Labeled decoding samples: volumes (N, X, Y, Z), integer labels (N,)."""
    volumes: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass
class TrainData:
    train: SampleSet
    val: SampleSet


@dataclass
class TrainReport:
    train_loss: np.ndarray
    train_acc: np.ndarray
    val_loss: np.ndarray
    val_acc: np.ndarray
    best_epoch: int    # 1-based epoch whose weights were kept (0 = init)
    stopped_epoch: int  # epochs actually run

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for e in range(self.stopped_epoch):
                w.writerow([e + 1, repr(float(self.train_loss[e])),
                            repr(float(self.train_acc[e])),
                            repr(float(self.val_loss[e])),
                            repr(float(self.val_acc[e]))])


def _conv_mask_shapes(spec, n_images):
    shapes = []
    h, w = spec.in_plane
    for stride, c in zip(spec.strides, spec.channels):
        h = ad.conv_output_extent(h, stride)
        w = ad.conv_output_extent(w, stride)
        shapes.append((n_images, h, w, c))
    return shapes


def _draw_masks(spec, batch, z_extent, rng, schedule, dtype):
    masks = {}
    conv_shapes = _conv_mask_shapes(spec, batch * z_extent)
    for i, shape in enumerate(conv_shapes, start=1):
        masks[f"conv{i}"] = dropout_mask(i, shape, rng, schedule, dtype=dtype)
    masks["lstm_out"] = dropout_mask(len(conv_shapes) + 1, (batch, 2 * spec.hidden),
                                     rng, schedule, dtype=dtype)
    return masks


def predict_states(params, volumes, spec=None, batch_size=64):
    """Most-probable state per volume, decoded in bounded-memory chunks."""
    if spec is None:
        spec, _ = md.spec_from_params(params)
    out = []
    for lo in range(0, len(volumes), batch_size):
        post, _ = md.decode_batch(params, volumes[lo:lo + batch_size], spec)
        out.append(np.argmax(post, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def _posterior_loss(params, samples, spec, batch_size=64):
    """(mean cross-entropy, accuracy) without dropout."""
    losses = []
    correct = 0
    for lo in range(0, len(samples), batch_size):
        vols = samples.volumes[lo:lo + batch_size]
        labels = samples.labels[lo:lo + batch_size]
        post, _ = md.decode_batch(params, vols, spec)
        picked = post[np.arange(len(labels)), labels]
        losses.append(-np.log(np.maximum(picked, 1e-300)))
        correct += int((np.argmax(post, axis=1) == labels).sum())
    all_losses = np.concatenate(losses)
    return float(all_losses.mean()), correct / len(samples)


def train(dataset, config=TrainConfig(), spec=None):
    """Fit the decoder on dataset.train, early-stopping on dataset.val.

    Returns the best-epoch parameters and a per-epoch TrainReport.
    """
    train_set, val_set = dataset.train, dataset.val
    if len(train_set) == 0 or len(val_set) == 0:
        raise InputError("training and validation sets must be non-empty")
    vols = np.asarray(train_set.volumes, dtype=config.dtype)
    labels = np.asarray(train_set.labels)
    if spec is None:
        spec = md.DecoderSpec(in_plane=vols.shape[1:3])
    if labels.min() < 0 or labels.max() >= spec.n_states:
        raise InputError(f"labels must lie in 0..{spec.n_states - 1}")
    present = np.bincount(labels, minlength=spec.n_states)
    if (present == 0).any():
        missing = np.flatnonzero(present == 0).tolist()
        raise InputError(f"no training samples for states {missing}")

    root = np.random.SeedSequence(config.seed)
    init_seq, data_seq = root.spawn(2)
    params = md.init_params(spec, init_seq, dtype=config.dtype)
    adam = ad.AdamState.initial(params, lr=config.learning_rate)
    epoch_seqs = data_seq.spawn(config.max_epochs) if config.max_epochs else []

    z_extent = vols.shape[3]
    n = len(train_set)
    hist = {"train_loss": [], "train_acc": [], "val_loss": [], "val_acc": []}
    best_params = params.copy()
    best_acc = -np.inf
    best_epoch = 0
    stale = 0
    epochs_run = 0

    for epoch in range(config.max_epochs):
        rng = np.random.default_rng(epoch_seqs[epoch])
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch_vols = vols[idx]
            batch_labels = labels[idx]
            masks = _draw_masks(spec, len(idx), z_extent, rng,
                                config.dropout, config.dtype)
            pvars = params.leaves()
            logits, _ = md.forward_batch(pvars, batch_vols, spec, masks)
            loss = ad.softmax_cross_entropy(logits, batch_labels)
            grads = ad.reverse_gradient(loss, pvars)
            if config.clip_threshold is not None:
                grads = ad.clip_global_norm(grads, config.clip_threshold)
            params, adam = ad.adam_step(adam, params, grads)
            loss_sum += float(loss.value) * len(idx)
            correct += int((np.argmax(logits.value, axis=1) == batch_labels).sum())
        epochs_run = epoch + 1
        val_loss, val_acc = _posterior_loss(params, val_set, spec)
        hist["train_loss"].append(loss_sum / n)
        hist["train_acc"].append(correct / n)
        hist["val_loss"].append(val_loss)
        hist["val_acc"].append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = params.copy()
            best_epoch = epochs_run
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    report = TrainReport(
        train_loss=np.asarray(hist["train_loss"]),
        train_acc=np.asarray(hist["train_acc"]),
        val_loss=np.asarray(hist["val_loss"]),
        val_acc=np.asarray(hist["val_acc"]),
        best_epoch=best_epoch,
        stopped_epoch=epochs_run,
    )
    return best_params, report


def evaluate(params, samples, spec=None):
    """(accuracy, confusion matrix); confusion rows are true states."""
    if len(samples) == 0:
        raise InputError("cannot evaluate on an empty sample set")
    if spec is None:
        spec, _ = md.spec_from_params(params)
    preds = predict_states(params, samples.volumes, spec)
    k = spec.n_states
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (samples.labels, preds), 1)
    accuracy = float(np.trace(confusion)) / len(samples)
    return accuracy, confusion


def accuracy_by_block_time(params, samples, design, spec=None):
    """Decoding accuracy per within-block TR offset.

    `design` is one run's BlockDesign or a sequence of them matching the
    concatenated sample order; fixation TRs are skipped.
    """
    designs = [design] if hasattr(design, "within_block_index") else list(design)
    within = np.concatenate([d.within_block_index for d in designs])
    if len(within) != len(samples):
        raise InputError(
            f"{len(samples)} samples but designs cover {len(within)} TRs")
    task = within >= 0
    if not task.any():
        raise InputError("designs contain no task TRs")
    preds = predict_states(params, samples.volumes[task], spec)
    hit = preds == samples.labels[task]
    offsets = within[task]
    acc = np.full(offsets.max() + 1, np.nan)
    for k in np.unique(offsets):
        acc[k] = float(hit[offsets == k].mean())
    return acc


# ---------------------------------------------------------------------------
# phantom dataset adapters
# ---------------------------------------------------------------------------

def window_samples(subjects, window=(5.0, 15.0)):
    """Mid-block TRs from every run of `subjects`, as one SampleSet."""
    vols, labels = [], []
    for subj in subjects:
        for run in subj.runs:
            idx = select_window(np.arange(run.design.n_trs), run.design, window)
            vols.append(run.volumes[idx])
            labels.append(run.labels[idx])
    if not vols:
        raise InputError("no runs supplied")
    return SampleSet(volumes=np.concatenate(vols), labels=np.concatenate(labels))


def phantom_train_data(dataset, window=(5.0, 15.0), val_subjects=1):
    """Split the phantom's training subjects into fit/early-stop sets."""
    train = dataset.train_subjects
    if not 1 <= val_subjects < len(train):
        raise ConfigurationError(
            f"need 1 <= val_subjects < {len(train)}, got {val_subjects}")
    return TrainData(train=window_samples(train[:-val_subjects], window),
                     val=window_samples(train[-val_subjects:], window))
