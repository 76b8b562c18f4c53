"""
Plain SGD on batches of fragment pairs.

Training pairs are re-sampled from every image each epoch (new neighbour, new jitter);
validation uses one frozen pair per image drawn from a generator seeded once, so repeated
evaluations of the same parameters agree.
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from checkpoint import rng_from_checkpoint, transfer_parameters
from errors import ContractViolation, EmptyDatasetError, NonFiniteError, TrainingDiverged
from frag_constants import METRICS_COLUMNS
from log_utils import get_logger
from models import Checkpoint, ImageRGB, MetricsRecord, PairSample, SamplerConfig, TrainConfig
from network import RelativePositionNet
from sampler import sample_pair
from tensor_utils import ops
from tensor_utils.parameters import ParameterSet
from tensor_utils.tensor import Tape, Tensor

logger = get_logger(__name__)

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SGD:
    """w <- w - lr * grad, with optional (heavy-ball) momentum, off by default."""

    def __init__(self, params: ParameterSet, learning_rate: float, momentum: float = 0.0):
        if learning_rate < 0:
            raise ContractViolation(f"learning rate must be >= 0, got {learning_rate}")
        self.params = params
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity: Dict[str, np.ndarray] = {}

    def step(self) -> None:
        lr = np.float32(self.learning_rate)
        for name, tensor in self.params.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if self.momentum:
                velocity = self._velocity.get(name, np.zeros_like(grad))
                velocity = np.float32(self.momentum) * velocity + grad
                self._velocity[name] = velocity
                grad = velocity
            tensor.assign(tensor.data - lr * grad)


def stack_pairs(pairs: Sequence[PairSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    central = np.stack([p.central.pixels.numpy() for p in pairs])
    neighbor = np.stack([p.neighbor.pixels.numpy() for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return central, neighbor, labels


def train_step(net: RelativePositionNet, optimizer: SGD, central: np.ndarray, neighbor: np.ndarray,
               labels: np.ndarray) -> Tuple[float, int]:
    """One forward/backward/update on a batch; returns the mean loss and the number of pairs predicted right."""
    with Tape() as tape:
        logits = net.logits(Tensor(central), Tensor(neighbor), ops.TRAIN)
        loss = ops.softmax_cross_entropy(logits, labels)
    correct = int(np.sum(np.argmax(logits.numpy(), axis=-1) == labels))
    net.params.zero_grad()
    tape.backward(loss)
    optimizer.step()
    return loss.item(), correct


def _check_sgd_step(name: str, before: np.ndarray, grad: np.ndarray, after: np.ndarray, lr: float) -> None:
    expected = before - np.float32(lr) * grad
    if not np.array_equal(expected, after):
        raise ContractViolation(f"SGD step on {name} deviates from p - lr * grad")


def train_epoch(cfg: TrainConfig, net: RelativePositionNet, images: Sequence[ImageRGB],
                rng: np.random.Generator, optimizer: Optional[SGD] = None) -> Tuple[ParameterSet, float, float]:
    """
    One pass over the images in a seeded shuffled order with a fresh pair per image.
    A trailing batch of one pair is dropped (train-mode batchnorm needs two).
    Returns the parameters, the mean batch loss and the pair accuracy of the train-mode
    predictions made before each update.
    """
    if not images:
        raise EmptyDatasetError("empty dataset: no training images")
    optimizer = optimizer if optimizer is not None else SGD(net.params, cfg.learning_rate, cfg.momentum)
    order = rng.permutation(len(images))
    pairs = [sample_pair(cfg.sampler, images[i], rng) for i in order]
    watched_name = next(iter(net.params))

    losses = []
    correct = seen = 0
    for batch_index, start in enumerate(range(0, len(pairs), cfg.batch_size)):
        batch = pairs[start:start + cfg.batch_size]
        if len(batch) < 2:
            logger.info(f"Dropping trailing batch of {len(batch)} pair")
            continue
        central, neighbor, labels = stack_pairs(batch)
        watched_before = net.params[watched_name].data
        try:
            loss, batch_correct = train_step(net, optimizer, central, neighbor, labels)
        except NonFiniteError as error:
            logger.error(f"Batch {batch_index} diverged: {error}")
            raise TrainingDiverged(batch_index, str(error)) from error
        if not np.isfinite(loss):
            raise TrainingDiverged(batch_index)
        if batch_index == 0 and not cfg.momentum:
            watched = net.params[watched_name]
            _check_sgd_step(watched_name, watched_before, watched.grad, watched.data, optimizer.learning_rate)
        losses.append(loss)
        correct += batch_correct
        seen += len(batch)
    if not losses:
        raise EmptyDatasetError("empty dataset: fewer than 2 training images")
    return net.params, float(np.mean(losses)), correct / seen


def validation_pairs(sampler: SamplerConfig, images: Sequence[ImageRGB], seed: int) -> List[PairSample]:
    rng = np.random.default_rng(seed)
    return [sample_pair(sampler, img, rng) for img in images]


def accuracy(predict: Predictor, pairs: Sequence[PairSample], batch_size: int = 64) -> float:
    if not pairs:
        raise EmptyDatasetError("empty dataset: no validation pairs")
    correct = 0
    for start in range(0, len(pairs), batch_size):
        central, neighbor, labels = stack_pairs(pairs[start:start + batch_size])
        correct += int(np.sum(np.asarray(predict(central, neighbor)) == labels))
    return correct / len(pairs)


def evaluate(predict: Predictor, sampler: SamplerConfig, images: Sequence[ImageRGB], seed: int,
             batch_size: int = 64) -> float:
    """Fraction of correctly predicted relative positions, one frozen pair per image."""
    if not images:
        raise EmptyDatasetError("empty dataset: no validation images")
    return accuracy(predict, validation_pairs(sampler, images, seed), batch_size)


def append_metrics(path: Union[str, Path], record: MetricsRecord) -> None:
    path = Path(path)
    frame = pd.DataFrame([record.model_dump()], columns=METRICS_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, lineterminator="\n")


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)


def fit(cfg: TrainConfig, net: RelativePositionNet, train_images: Sequence[ImageRGB],
        val_images: Sequence[ImageRGB], rng: Optional[np.random.Generator] = None,
        metrics_path: Optional[Union[str, Path]] = None, start_epoch: int = 0,
        on_epoch: Optional[Callable[[MetricsRecord], None]] = None) -> List[MetricsRecord]:
    """Train for cfg.epochs epochs, evaluating after each; returns the metric history."""
    if not train_images:
        raise EmptyDatasetError("empty dataset: no training images")
    if not val_images:
        raise EmptyDatasetError("empty dataset: no validation images")
    for manifest, images in ((cfg.train_manifest, train_images), (cfg.validation_manifest, val_images)):
        if manifest is not None and len(manifest.entries) != len(images):
            raise ContractViolation(f"{manifest.split} manifest lists {len(manifest.entries)} images, "
                                    f"got {len(images)}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    optimizer = SGD(net.params, cfg.learning_rate, cfg.momentum)
    history = []
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        _, train_loss, train_accuracy = train_epoch(cfg, net, train_images, rng, optimizer)
        val_accuracy = evaluate(net, cfg.sampler, val_images, cfg.seed, cfg.batch_size)
        record = MetricsRecord(epoch=epoch, train_loss=train_loss, train_accuracy=train_accuracy,
                               val_accuracy=val_accuracy)
        logger.info(f"epoch {epoch} train_loss={train_loss:.4f} train_accuracy={train_accuracy:.4f} "
                    f"val_accuracy={val_accuracy:.4f}")
        if metrics_path is not None:
            append_metrics(metrics_path, record)
        if on_epoch is not None:
            on_epoch(record)
        history.append(record)
    return history


def compare_runs(concat_csv: Union[str, Path], kron_csv: Union[str, Path]) -> pd.DataFrame:
    """Side-by-side validation accuracy per epoch of a concat run and a Kronecker run."""
    concat = read_metrics(concat_csv)[["epoch", "val_accuracy"]].rename(columns={"val_accuracy": "concat_val_accuracy"})
    kron = read_metrics(kron_csv)[["epoch", "val_accuracy"]].rename(columns={"val_accuracy": "kron_val_accuracy"})
    return concat.merge(kron, on="epoch", how="outer").sort_values("epoch").reset_index(drop=True)


def finetune(cfg: TrainConfig, ckpt: Checkpoint, train_images: Sequence[ImageRGB],
             val_images: Sequence[ImageRGB], metrics_path: Optional[Union[str, Path]] = None,
             rng: Optional[np.random.Generator] = None) -> Tuple[RelativePositionNet, List[MetricsRecord]]:
    """
    Continue training from a checkpoint on another corpus. The FEN always carries over;
    the head is reinitialized when `cfg.fusion` differs from the checkpoint's.
    Pair sampling resumes from the checkpoint's generator state unless `rng` is given.
    """
    if cfg.fen != ckpt.fen:
        raise ContractViolation("fine-tuning cannot change the FEN architecture")
    net, reuse_head = transfer_parameters(ckpt, cfg.fusion, cfg.seed)
    logger.info(f"Fine-tuning from epoch {ckpt.epoch}, head {'reused' if reuse_head else 'reinitialized'}")
    rng = rng if rng is not None else rng_from_checkpoint(ckpt, cfg.seed)
    history = fit(cfg, net, train_images, val_images, rng=rng,
                  metrics_path=metrics_path, start_epoch=ckpt.epoch)
    return net, history
