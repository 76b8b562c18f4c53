"""
Subcommands as pydantic models: the fields are the resolved configuration, `__call__` runs it.
Commands given an image folder (`data`) receive an open `ImageFolderDAO`.
"""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, Field, model_validator

from checkpoint import (
    checkpoint_from_net,
    load_checkpoint,
    net_from_checkpoint,
    rng_from_checkpoint,
    save_checkpoint,
)
from dataset_utils.dataset_dao import ImageFolderDAO
from dataset_utils.imaging import resize_square_crop
from dataset_utils.ppm import read_ppm, write_ppm
from errors import ContractViolation
from frag_constants import BATCH_SIZE, FULL_FRAME_SIDE, LEARNING_RATE
from log_utils import get_logger
from models import (
    Checkpoint,
    DatasetManifest,
    FenConfig,
    FusionConfig,
    ImageRGB,
    SamplerConfig,
    SyntheticSpec,
    TrainConfig,
)
from network import RelativePositionNet, gradcheck_network
from solver import append_report, render_reconstruction, report_row, solve_corpus, solve_puzzle, summarize_report
from synthetic import write_corpus
from tensor_utils.gradcheck import run_op_suite
from trainer import compare_runs, evaluate, finetune, fit

logger = get_logger(__name__)

FusionKind = Literal["concat", "kron", "kronecker"]
GEOMETRY_FIELDS = ("frame_side", "fragment_side", "gap", "jitter")


def _load_splits(dao: ImageFolderDAO, seed: int, side: int
                 ) -> Tuple[Tuple[DatasetManifest, DatasetManifest], List[ImageRGB], List[ImageRGB]]:
    train, validation = dao.manifests(seed)
    return (train, validation), dao.load_frames(train, side), dao.load_frames(validation, side)


def _metrics_path(out: str, metrics: Optional[str]) -> Path:
    return Path(metrics) if metrics else Path(out).with_suffix(".metrics.csv")


def _load_frame(path: str, sampler: SamplerConfig) -> ImageRGB:
    return resize_square_crop(read_ppm(path), sampler.frame_side)


class GeometryFlags(BaseModel):
    """Sampler geometry overrides, layered over a preset or a checkpoint's sampler."""
    frame_side: Optional[int] = Field(None, ge=1, description="Frame side in pixels")
    fragment_side: Optional[int] = Field(None, ge=1, description="Fragment side in pixels")
    gap: Optional[int] = Field(None, ge=0, description="Gap between grid cells in pixels")
    jitter: Optional[int] = Field(None, ge=0, description="Per-axis fragment jitter in pixels")

    def sampler_over(self, base: SamplerConfig, seed: int) -> SamplerConfig:
        overrides = {name: getattr(self, name) for name in GEOMETRY_FIELDS if getattr(self, name) is not None}
        return SamplerConfig(**{**base.model_dump(), **overrides, "seed": seed})

    def checkpoint_sampler(self, ckpt: Checkpoint, seed: int) -> SamplerConfig:
        sampler = self.sampler_over(ckpt.sampler, seed)
        if sampler.fragment_side != ckpt.fen.input_side:
            raise ContractViolation(f"fragment_side {sampler.fragment_side} does not match the checkpoint's "
                                    f"FEN input side {ckpt.fen.input_side}")
        return sampler


class SynthCommand(BaseModel):
    """Write a synthetic corpus with train/validation manifests."""
    kind: Literal["gradient", "checker", "blobs"] = Field("gradient", description="Image family")
    count: int = Field(200, ge=1, description="Number of images")
    frame_side: int = Field(FULL_FRAME_SIDE, ge=8, description="Side of the square images in pixels")
    seed: int = 0
    out: str = Field(..., description="Output folder")

    def __call__(self) -> str:
        spec = SyntheticSpec(kind=self.kind, frame_side=self.frame_side, count=self.count, seed=self.seed)
        train, validation = write_corpus(spec, self.out)
        return f"wrote {self.count} {self.kind} images to {self.out} ({len(train.entries)} train, {len(validation.entries)} validation)"


class TrainCommand(GeometryFlags):
    """Train a fresh network on an image folder and save a checkpoint."""
    data: str = Field(..., description="Image folder")
    fusion: FusionKind = "kronecker"
    geometry: Literal["desk", "full"] = Field("full", description="Sampler and network size preset")
    lr: float = Field(LEARNING_RATE, gt=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    batch: int = Field(BATCH_SIZE, ge=2)
    epochs: int = Field(1, ge=1)
    seed: int = 0
    out: str = Field(..., description="Checkpoint path")
    metrics: Optional[str] = Field(None, description="Metrics CSV, defaults to <out>.metrics.csv")

    def train_config(self, manifests: Optional[Tuple[DatasetManifest, DatasetManifest]] = None) -> TrainConfig:
        if self.geometry == "desk":
            base, fen, fusion = SamplerConfig.desk(), FenConfig.desk(), FusionConfig.desk(self.fusion)
        else:
            base, fen, fusion = SamplerConfig(), FenConfig(), FusionConfig(kind=self.fusion)
        sampler = self.sampler_over(base, self.seed)
        fen = FenConfig(**{**fen.model_dump(), "input_side": sampler.fragment_side})
        train, validation = manifests if manifests is not None else (None, None)
        return TrainConfig(learning_rate=self.lr, momentum=self.momentum, batch_size=self.batch, epochs=self.epochs,
                           seed=self.seed, sampler=sampler, fen=fen, fusion=fusion,
                           train_manifest=train, validation_manifest=validation)

    def __call__(self, dao: ImageFolderDAO) -> str:
        side = self.train_config().sampler.frame_side
        manifests, train, validation = _load_splits(dao, self.seed, side)
        cfg = self.train_config(manifests)
        net = RelativePositionNet(cfg.fen, cfg.fusion, seed=self.seed)
        rng = np.random.default_rng(self.seed)
        history = fit(cfg, net, train, validation, rng=rng, metrics_path=_metrics_path(self.out, self.metrics))
        save_checkpoint(self.out, checkpoint_from_net(net, cfg.sampler, epoch=history[-1].epoch, rng=rng))
        last = history[-1]
        return (f"epoch {last.epoch} train_loss={last.train_loss:.4f} train_accuracy={last.train_accuracy:.4f} "
                f"val_accuracy={last.val_accuracy:.4f}")


class FinetuneCommand(GeometryFlags):
    """Continue training from a checkpoint on another image folder."""
    ckpt: str
    data: str
    fusion: Optional[FusionKind] = Field(None, description="Defaults to the checkpoint's fusion kind")
    lr: float = Field(LEARNING_RATE, gt=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    batch: int = Field(BATCH_SIZE, ge=2)
    epochs: int = Field(1, ge=1)
    seed: int = 0
    out: str
    metrics: Optional[str] = None

    def __call__(self, dao: ImageFolderDAO) -> str:
        ckpt = load_checkpoint(self.ckpt)
        fusion = ckpt.fusion
        if self.fusion is not None:
            fusion = FusionConfig(**{**ckpt.fusion.model_dump(), "kind": self.fusion})
        sampler = self.checkpoint_sampler(ckpt, self.seed)
        (train_manifest, validation_manifest), train, validation = _load_splits(dao, self.seed, sampler.frame_side)
        cfg = TrainConfig(learning_rate=self.lr, momentum=self.momentum, batch_size=self.batch, epochs=self.epochs,
                          seed=self.seed, sampler=sampler, fen=ckpt.fen, fusion=fusion,
                          train_manifest=train_manifest, validation_manifest=validation_manifest)
        rng = rng_from_checkpoint(ckpt, self.seed)
        net, history = finetune(cfg, ckpt, train, validation, metrics_path=_metrics_path(self.out, self.metrics),
                                rng=rng)
        save_checkpoint(self.out, checkpoint_from_net(net, cfg.sampler, epoch=history[-1].epoch, rng=rng))
        last = history[-1]
        return (f"epoch {last.epoch} train_loss={last.train_loss:.4f} train_accuracy={last.train_accuracy:.4f} "
                f"val_accuracy={last.val_accuracy:.4f}")


class EvalCommand(BaseModel):
    """Pair accuracy of a checkpoint, one seeded pair per image."""
    ckpt: str
    data: str
    split: Literal["train", "validation"] = "validation"
    batch: int = Field(BATCH_SIZE, ge=1)
    seed: int = 0

    def __call__(self, dao: ImageFolderDAO) -> str:
        ckpt = load_checkpoint(self.ckpt)
        _, train, validation = _load_splits(dao, self.seed, ckpt.sampler.frame_side)
        images = validation if self.split == "validation" else train
        accuracy = evaluate(net_from_checkpoint(ckpt), ckpt.sampler, images, self.seed, self.batch)
        return f"{self.split}_accuracy={accuracy:.4f} images={len(images)}"


class SolveCommand(GeometryFlags):
    """
    Solve the puzzle cut from one image, or one puzzle per image of a folder split
    with the perfect-solve rate and the fraction of correctly placed fragments.
    """
    ckpt: str
    image: Optional[str] = Field(None, description="Single image to solve")
    data: Optional[str] = Field(None, description="Image folder to solve one puzzle per image")
    split: Literal["train", "validation"] = Field("validation", description="Folder split to solve")
    count: Optional[int] = Field(None, ge=1, description="Solve only the first COUNT images of the split")
    seed: int = 0
    render: Optional[str] = Field(None, description="Write the reconstruction to this PPM")
    oracle: bool = Field(False, description="Also run the exhaustive solver and print both scores")
    report: Optional[str] = Field(None, description="Append rows to this corpus report CSV")

    @model_validator(mode="after")
    def _one_source(self):
        if (self.image is None) == (self.data is None):
            raise ValueError("give exactly one of image or data")
        if self.render and self.data is not None:
            raise ValueError("render needs a single image")
        return self

    def __call__(self, dao: Optional[ImageFolderDAO] = None) -> str:
        ckpt = load_checkpoint(self.ckpt)
        sampler = self.checkpoint_sampler(ckpt, self.seed)
        net = net_from_checkpoint(ckpt)
        if dao is not None:
            return self.solve_folder(dao, net, sampler)

        img = _load_frame(self.image, sampler)
        result = solve_puzzle(net, sampler, img, np.random.default_rng(self.seed),
                              oracle=self.oracle or self.report is not None)
        lines = [f"perfect={result.metrics.perfect_solve} correctly_placed={result.metrics.correctly_placed}/8"]
        if self.oracle:
            lines.append(f"greedy_score={result.greedy_score:.6f} optimal_score={result.optimal_score:.6f}")
        if self.render:
            write_ppm(self.render, render_reconstruction(sampler, result.fragments, result.greedy, result.truth))
            lines.append(f"rendered {self.render}")
        if self.report:
            append_report(self.report, [report_row(Path(self.image).name, result)])
        return "\n".join(lines)

    def solve_folder(self, dao: ImageFolderDAO, net: RelativePositionNet, sampler: SamplerConfig) -> str:
        train, validation = dao.manifests(self.seed)
        entries = (validation if self.split == "validation" else train).entries[:self.count]
        images = [dao.load_frame(entry, sampler.frame_side) for entry in entries]
        table = solve_corpus(net, sampler, images, entries, self.seed, oracle=self.oracle)
        if self.report:
            append_report(self.report, table.to_dict("records"))
        summary = summarize_report(table)
        logger.info(f"Solved {summary.puzzles} puzzles: perfect_rate={summary.perfect_rate:.4f} "
                    f"fraction_correct={summary.fraction_correct:.4f}")
        lines = [f"puzzles={summary.puzzles} perfect_rate={summary.perfect_rate:.4f} "
                 f"fraction_correct={summary.fraction_correct:.4f}"]
        if self.oracle:
            lines.append(f"greedy_matches_optimal={int((table['greedy_score'] >= table['optimal_score'] - 1e-9).sum())}"
                         f"/{summary.puzzles}")
        return "\n".join(lines)


class RenderCommand(GeometryFlags):
    """Solve one image greedily and write the reconstruction, misplaced fragments outlined in red."""
    ckpt: str
    image: str
    out: str
    seed: int = 0

    def __call__(self) -> str:
        ckpt = load_checkpoint(self.ckpt)
        sampler = self.checkpoint_sampler(ckpt, self.seed)
        img = _load_frame(self.image, sampler)
        result = solve_puzzle(net_from_checkpoint(ckpt), sampler, img, np.random.default_rng(self.seed),
                              oracle=False)
        write_ppm(self.out, render_reconstruction(sampler, result.fragments, result.greedy, result.truth))
        return f"rendered {self.out}: {result.metrics.correctly_placed}/8 correctly placed"


class GradcheckCommand(BaseModel):
    """Finite-difference check of every op and of the desk network."""
    seed: int = 0
    seeds: int = Field(10, ge=1, description="Number of consecutive seeds")
    network: bool = True

    def __call__(self) -> str:
        results = run_op_suite(self.seed, self.seeds)
        if self.network:
            results += [gradcheck_network(s) for s in range(self.seed, self.seed + self.seeds)]
        failed = [f"{r.name}@{r.seed}" for r in results if not r.passed]
        if failed:
            raise ContractViolation(f"gradient check failed for {', '.join(failed)}")
        checked = sum(r.checked for r in results)
        skipped = sum(r.skipped for r in results)
        return f"gradcheck passed: {len(results)} checks, {checked} entries, {skipped} skipped at kinks"


class CompareCommand(BaseModel):
    """Side-by-side validation accuracy of a concat run and a Kronecker run."""
    concat: str
    kron: str
    out: Optional[str] = None
    seed: int = 0

    def __call__(self) -> str:
        table = compare_runs(self.concat, self.kron)
        if self.out:
            table.to_csv(self.out, index=False, lineterminator="\n")
        return table.to_string(index=False)


COMMANDS: Dict[str, Type[BaseModel]] = {
    "synth": SynthCommand,
    "train": TrainCommand,
    "finetune": FinetuneCommand,
    "eval": EvalCommand,
    "solve": SolveCommand,
    "render": RenderCommand,
    "gradcheck": GradcheckCommand,
    "compare": CompareCommand,
}


def build_command(name: str, arguments: dict) -> BaseModel:
    return COMMANDS[name](**arguments)


def run_command(command: BaseModel) -> str:
    logger.info(f"Running {type(command).__name__}: {command.model_dump_json()}")
    data = getattr(command, "data", None)
    if data is not None:
        with ImageFolderDAO(data) as dao:
            return command(dao)
    return command()
