from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from frag_constants import (
    BATCH_SIZE,
    DESK_BLOCK_CHANNELS,
    DESK_FEATURE_DIM,
    DESK_FRAGMENT_SIDE,
    DESK_FRAME_SIDE,
    DESK_GAP,
    DESK_HIDDEN_DIMS,
    DESK_JITTER,
    LEARNING_RATE,
    NUM_CLASSES,
    FULL_BLOCK_CHANNELS,
    FULL_FEATURE_DIM,
    FULL_FRAGMENT_SIDE,
    FULL_FRAME_SIDE,
    FULL_GAP,
    FULL_HIDDEN_DIMS,
    FULL_JITTER,
)
from tensor_utils.tensor import Tensor


class ImageRGB(BaseModel):
    """8-bit RGB image; `pixels` is a read-only uint8 array of shape [height, width, 3]."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    pixels: np.ndarray

    @model_validator(mode="after")
    def _check_pixels(self):
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixels shape {self.pixels.shape} != ({self.height}, {self.width}, 3)")
        self.pixels.flags.writeable = False
        return self

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "ImageRGB":
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)


class DatasetManifest(BaseModel):
    """One split of an image folder: relative paths, sorted and unique."""
    root: str
    split: Literal["train", "validation"]
    entries: List[str]
    seed: int

    @field_validator("entries")
    @classmethod
    def _unique_sorted(cls, entries: List[str]) -> List[str]:
        if len(set(entries)) != len(entries):
            raise ValueError("manifest entries must be unique")
        return sorted(entries)


class SamplerConfig(BaseModel):
    """Randomized 3x3 grid: fragment side, gap between cells and per-axis jitter, in pixels."""
    frame_side: int = Field(FULL_FRAME_SIDE, ge=1)
    fragment_side: int = Field(FULL_FRAGMENT_SIDE, ge=1)
    gap: int = Field(FULL_GAP, ge=0)
    jitter: int = Field(FULL_JITTER, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _fits_frame(self):
        needed = 3 * self.fragment_side + 2 * self.gap + 2 * self.jitter
        if needed > self.frame_side:
            raise ValueError(f"grid needs {needed} px but frame_side is {self.frame_side}")
        return self

    @classmethod
    def desk(cls, seed: int = 0) -> "SamplerConfig":
        return cls(frame_side=DESK_FRAME_SIDE, fragment_side=DESK_FRAGMENT_SIDE,
                   gap=DESK_GAP, jitter=DESK_JITTER, seed=seed)


Cell = Tuple[int, int]


class Fragment(BaseModel):
    """A crop of one grid cell; `pixels` is a [side, side, 3] tensor in model range."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cell: Cell
    origin: Tuple[int, int]
    pixels: Tensor

    @field_validator("cell")
    @classmethod
    def _cell_in_grid(cls, cell: Cell) -> Cell:
        if not all(0 <= c <= 2 for c in cell):
            raise ValueError(f"cell {cell} outside the 3x3 grid")
        return cell


class PairSample(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    central: Fragment
    neighbor: Fragment
    label: int = Field(..., ge=0, lt=NUM_CLASSES)


class FenConfig(BaseModel):
    """Feature Extraction Network shape: one conv block per entry of `block_channels`."""
    input_side: int = Field(FULL_FRAGMENT_SIDE, ge=1)
    input_channels: Literal[3] = 3
    block_channels: List[int] = Field(default_factory=lambda: list(FULL_BLOCK_CHANNELS), min_length=1)
    feature_dim: int = Field(FULL_FEATURE_DIM, ge=1)

    @model_validator(mode="after")
    def _divisible(self):
        factor = 2 ** len(self.block_channels)
        if self.input_side % factor:
            raise ValueError(f"input_side {self.input_side} not divisible by 2^{len(self.block_channels)}")
        if any(c < 1 for c in self.block_channels):
            raise ValueError("block channels must be positive")
        return self

    @property
    def final_side(self) -> int:
        return self.input_side // 2 ** len(self.block_channels)

    @property
    def flat_dim(self) -> int:
        return self.final_side ** 2 * self.block_channels[-1]

    @classmethod
    def desk(cls) -> "FenConfig":
        return cls(input_side=DESK_FRAGMENT_SIDE, block_channels=list(DESK_BLOCK_CHANNELS),
                   feature_dim=DESK_FEATURE_DIM)


class FusionConfig(BaseModel):
    """Combination layer plus the FC+BN+ReLU stack and the 8-way output layer."""
    kind: Literal["concat", "kronecker"] = "kronecker"
    feature_dim: int = Field(FULL_FEATURE_DIM, ge=1)
    hidden_dims: List[int] = Field(default_factory=lambda: list(FULL_HIDDEN_DIMS), min_length=1)
    num_classes: Literal[8] = NUM_CLASSES
    zero_init_output: bool = False

    @field_validator("kind", mode="before")
    @classmethod
    def _alias(cls, kind: Any) -> Any:
        return "kronecker" if kind == "kron" else kind

    @property
    def combined_dim(self) -> int:
        return 2 * self.feature_dim if self.kind == "concat" else self.feature_dim ** 2

    @classmethod
    def desk(cls, kind: str = "kronecker") -> "FusionConfig":
        return cls(kind=kind, feature_dim=DESK_FEATURE_DIM, hidden_dims=list(DESK_HIDDEN_DIMS))


class TrainConfig(BaseModel):
    learning_rate: float = Field(LEARNING_RATE, gt=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    batch_size: int = Field(BATCH_SIZE, ge=2)
    epochs: int = Field(1, ge=1)
    seed: int = 0
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    fen: FenConfig = Field(default_factory=FenConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    train_manifest: Optional[DatasetManifest] = None
    validation_manifest: Optional[DatasetManifest] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.fen.input_side != self.sampler.fragment_side:
            raise ValueError(f"fen input_side {self.fen.input_side} != fragment_side {self.sampler.fragment_side}")
        if self.fen.feature_dim != self.fusion.feature_dim:
            raise ValueError(f"fen feature_dim {self.fen.feature_dim} != fusion feature_dim {self.fusion.feature_dim}")
        return self


class MetricsRecord(BaseModel):
    epoch: int = Field(..., ge=0)
    train_loss: float
    val_accuracy: float = Field(..., ge=0.0, le=1.0)
    train_accuracy: float = Field(..., ge=0.0, le=1.0)


class Checkpoint(BaseModel):
    """Everything needed to resume or fine-tune: configs, named arrays, epoch and RNG state."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    version: int
    fen: FenConfig
    fusion: FusionConfig
    sampler: SamplerConfig
    tensors: Dict[str, np.ndarray]
    epoch: int = 0
    rng_state: Optional[Dict[str, Any]] = None


class ProbabilityMatrix(BaseModel):
    """Rows are fragments, columns are relative-position classes; each row sums to 1."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @model_validator(mode="after")
    def _row_stochastic(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"probability matrix must be square, got {v.shape}")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.allclose(v.sum(axis=1), 1.0, rtol=0, atol=1e-6):
            raise ValueError(f"rows must sum to 1, got {v.sum(axis=1)}")
        return self


class Assignment(BaseModel):
    """mapping[i] is the location class given to fragment row i."""
    mapping: Tuple[int, ...]

    @field_validator("mapping")
    @classmethod
    def _bijective(cls, mapping: Tuple[int, ...]) -> Tuple[int, ...]:
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"assignment {mapping} is not a permutation")
        return mapping


class PuzzleMetrics(BaseModel):
    perfect_solve: bool
    correctly_placed: int = Field(..., ge=0, le=NUM_CLASSES)

    @model_validator(mode="after")
    def _perfect_iff_all(self):
        if self.perfect_solve != (self.correctly_placed == NUM_CLASSES):
            raise ValueError("perfect_solve must hold exactly when all 8 fragments are placed")
        return self


class SyntheticSpec(BaseModel):
    kind: Literal["gradient", "checker", "blobs"] = "gradient"
    frame_side: int = Field(FULL_FRAME_SIDE, ge=8)
    count: int = Field(..., ge=1)
    seed: int = 0


class LayerRow(BaseModel):
    """One row of the FEN architecture table."""
    layer: str
    shape: Tuple[int, ...]
    parameters: int


class SolverComparison(BaseModel):
    """Greedy against the exact solver over a batch of matrices."""
    trials: int = Field(..., ge=1)
    agreements: int = Field(..., ge=0)
    dominant: int = Field(..., ge=0)
    dominant_agreements: int = Field(..., ge=0)
    greedy_never_better: bool
    disagreements_strictly_worse: bool

    @property
    def agreement_rate(self) -> float:
        return self.agreements / self.trials


class PuzzleResult(BaseModel):
    """One solved 3x3 puzzle: the nine fragments (centre at `center_index`) and both solutions."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    fragments: List[Fragment]
    center_index: int = Field(4, ge=0, le=8)
    matrix: ProbabilityMatrix
    truth: Assignment
    greedy: Assignment
    optimal: Optional[Assignment] = None
    greedy_score: float
    optimal_score: Optional[float] = None
    metrics: PuzzleMetrics


class PuzzleSummary(BaseModel):
    """Perfect-solve rate next to the mean fraction of correctly placed fragments."""
    puzzles: int = Field(..., ge=1)
    perfect_rate: float = Field(..., ge=0.0, le=1.0)
    fraction_correct: float = Field(..., ge=0.0, le=1.0)
