"""
3x3 puzzle solving: probability matrix, greedy and exact assignment, metrics, rendering.

Rows of the probability matrix are the 8 non-centre fragments in input order, columns are
the relative-position classes. The greedy solver repeatedly takes the global maximum and
removes its row and column; ties go to the smallest (row, column).
"""
import functools
import itertools
import math
from pathlib import Path
from typing import Iterable, List, Optional, Protocol, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from dataset_utils.imaging import from_model_range
from errors import ContractViolation, EmptyDatasetError
from frag_constants import NUM_CLASSES, REPORT_COLUMNS
from log_utils import get_logger
from models import (
    Assignment,
    Fragment,
    ImageRGB,
    ProbabilityMatrix,
    PuzzleMetrics,
    PuzzleResult,
    PuzzleSummary,
    SamplerConfig,
    SolverComparison,
)
from sampler import CENTER, base_origin, cell_of, image_rng, label_of, sample_grid
from tensor_utils.tensor import Tensor

logger = get_logger(__name__)

MAX_ORACLE_SIZE = 10
BORDER_WIDTH = 2
BORDER_COLOR = (255, 0, 0)

MatrixLike = Union[ProbabilityMatrix, np.ndarray]


class LocationModel(Protocol):
    def predict_proba(self, central: Tensor, neighbor: Tensor) -> np.ndarray:
        ...


def _values(m: MatrixLike) -> np.ndarray:
    values = m.values if isinstance(m, ProbabilityMatrix) else np.asarray(m, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] == 0:
        raise ContractViolation(f"assignment needs a non-empty square matrix, got {values.shape}")
    return values


def build_matrix(model: LocationModel, fragments: Sequence[Fragment], center_index: int = 4) -> ProbabilityMatrix:
    """Row i is the location distribution of the i-th non-centre fragment against the centre."""
    if len(fragments) != 9:
        raise ContractViolation(f"a puzzle has 9 fragments, got {len(fragments)}")
    if not 0 <= center_index < 9:
        raise ContractViolation(f"center index {center_index} outside [0, 9)")
    center = fragments[center_index].pixels.numpy()
    others = [f.pixels.numpy() for i, f in enumerate(fragments) if i != center_index]
    central = np.broadcast_to(center, (len(others),) + center.shape)
    probs = np.asarray(model.predict_proba(Tensor(central), Tensor(np.stack(others))), dtype=np.float64)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return ProbabilityMatrix(values=probs)


def solve_greedy(m: MatrixLike) -> Assignment:
    values = _values(m)
    n = values.shape[0]
    masked = values.astype(np.float64, copy=True)
    mapping = [-1] * n
    for _ in range(n):
        # argmax scans row-major, so the first maximum is the lexicographically smallest
        row, col = np.unravel_index(int(np.argmax(masked)), masked.shape)
        mapping[row] = int(col)
        masked[row, :] = -np.inf
        masked[:, col] = -np.inf
    return Assignment(mapping=tuple(mapping))


@functools.lru_cache(maxsize=None)
def permutation_table(n: int) -> np.ndarray:
    """All permutations of range(n) in lexicographic order, one per row."""
    table = np.array(list(itertools.permutations(range(n))), dtype=np.int8)
    table.flags.writeable = False
    return table


def solve_optimal(m: MatrixLike, chunk: int = 40320) -> Assignment:
    """
    Exhaustive search over all n! permutations. Permutations are scanned in
    lexicographic order and only a strictly larger sum replaces the incumbent.
    """
    values = _values(m)
    n = values.shape[0]
    if n > MAX_ORACLE_SIZE:
        raise ContractViolation(f"exhaustive search refused for n={n} > {MAX_ORACLE_SIZE}")
    table = permutation_table(n)
    rows = np.arange(n)
    best_score, best_perm = -np.inf, None
    for start in range(0, len(table), chunk):
        block = table[start:start + chunk]
        scores = values[rows, block].sum(axis=1)
        index = int(np.argmax(scores))
        if scores[index] > best_score:
            best_score, best_perm = float(scores[index]), block[index]
    return Assignment(mapping=tuple(int(c) for c in best_perm))


def solve_hungarian(m: MatrixLike) -> Assignment:
    """Exact maximum-sum assignment in polynomial time; no tie-breaking guarantee."""
    values = _values(m)
    rows, cols = linear_sum_assignment(values, maximize=True)
    mapping = [0] * values.shape[0]
    for r, c in zip(rows, cols):
        mapping[int(r)] = int(c)
    return Assignment(mapping=tuple(mapping))


def assignment_score(m: MatrixLike, assignment: Assignment) -> float:
    values = _values(m)
    if len(assignment.mapping) != values.shape[0]:
        raise ContractViolation(f"assignment of size {len(assignment.mapping)} for a {values.shape} matrix")
    return math.fsum(values[i, c] for i, c in enumerate(assignment.mapping))


def score_assignment(assignment: Assignment, truth: Assignment) -> PuzzleMetrics:
    if len(assignment.mapping) != NUM_CLASSES or len(truth.mapping) != NUM_CLASSES:
        raise ContractViolation(f"puzzle assignments map {NUM_CLASSES} fragments")
    correct = sum(a == t for a, t in zip(assignment.mapping, truth.mapping))
    return PuzzleMetrics(perfect_solve=correct == NUM_CLASSES, correctly_placed=correct)


def is_permutation_dominant(m: MatrixLike) -> bool:
    """Every row's maximum lies in a different column."""
    values = _values(m)
    return len(set(np.argmax(values, axis=1).tolist())) == values.shape[0]


def random_stochastic_matrix(rng: np.random.Generator, n: int = NUM_CLASSES) -> np.ndarray:
    return rng.dirichlet(np.ones(n), size=n)


def compare_solvers(matrices: Iterable[MatrixLike]) -> SolverComparison:
    trials = agreements = dominant = dominant_agreements = 0
    never_better = strictly_worse = True
    for m in matrices:
        greedy = assignment_score(m, solve_greedy(m))
        optimal = assignment_score(m, solve_optimal(m))
        trials += 1
        agree = math.isclose(greedy, optimal, rel_tol=0, abs_tol=1e-12)
        agreements += agree
        if is_permutation_dominant(m):
            dominant += 1
            dominant_agreements += agree
        never_better &= greedy <= optimal + 1e-12
        if not agree:
            strictly_worse &= greedy < optimal
    if trials == 0:
        raise EmptyDatasetError("empty dataset: no matrices to compare")
    comparison = SolverComparison(trials=trials, agreements=agreements, dominant=dominant,
                                  dominant_agreements=dominant_agreements, greedy_never_better=never_better,
                                  disagreements_strictly_worse=strictly_worse)
    logger.info(f"greedy agreed with the exact solver on {agreements}/{trials} matrices")
    return comparison


def solve_puzzle(model: LocationModel, cfg: SamplerConfig, img: ImageRGB, rng: np.random.Generator,
                 oracle: bool = True) -> PuzzleResult:
    """
    Cut the nine fragments, shuffle the eight neighbours, and place them back by greedy
    assignment (plus the exhaustive optimum when `oracle`).
    """
    grid = sample_grid(cfg, img, rng)
    center = grid[4]
    neighbors = [f for f in grid if f.cell != CENTER]
    shuffled = [neighbors[i] for i in rng.permutation(len(neighbors))]
    fragments = shuffled[:4] + [center] + shuffled[4:]
    truth = Assignment(mapping=tuple(label_of(f.cell) for f in shuffled))

    matrix = build_matrix(model, fragments, center_index=4)
    greedy = solve_greedy(matrix)
    optimal = solve_optimal(matrix) if oracle else None
    return PuzzleResult(
        fragments=fragments,
        center_index=4,
        matrix=matrix,
        truth=truth,
        greedy=greedy,
        optimal=optimal,
        greedy_score=assignment_score(matrix, greedy),
        optimal_score=assignment_score(matrix, optimal) if optimal is not None else None,
        metrics=score_assignment(greedy, truth),
    )


def summarize_puzzles(metrics: Sequence[PuzzleMetrics]) -> PuzzleSummary:
    if not metrics:
        raise EmptyDatasetError("empty dataset: no puzzles to summarize")
    return PuzzleSummary(
        puzzles=len(metrics),
        perfect_rate=sum(m.perfect_solve for m in metrics) / len(metrics),
        fraction_correct=sum(m.correctly_placed for m in metrics) / (NUM_CLASSES * len(metrics)),
    )


def _draw_border(canvas: np.ndarray, y: int, x: int, side: int) -> None:
    w = BORDER_WIDTH
    canvas[y:y + w, x:x + side] = BORDER_COLOR
    canvas[y + side - w:y + side, x:x + side] = BORDER_COLOR
    canvas[y:y + side, x:x + w] = BORDER_COLOR
    canvas[y:y + side, x + side - w:x + side] = BORDER_COLOR


def render_reconstruction(cfg: SamplerConfig, fragments: Sequence[Fragment], assignment: Assignment,
                          truth: Optional[Assignment] = None, center_index: int = 4) -> ImageRGB:
    """
    Paste each fragment at the un-jittered origin of its assigned cell on a black frame.
    With `truth`, misplaced fragments get a red border.
    """
    if len(fragments) != 9:
        raise ContractViolation(f"a puzzle has 9 fragments, got {len(fragments)}")
    side = cfg.fragment_side
    canvas = np.zeros((cfg.frame_side, cfg.frame_side, 3), dtype=np.uint8)
    y, x = base_origin(cfg, CENTER)
    canvas[y:y + side, x:x + side] = from_model_range(fragments[center_index].pixels.numpy())

    others = [f for i, f in enumerate(fragments) if i != center_index]
    misplaced = []
    for row, fragment in enumerate(others):
        y, x = base_origin(cfg, cell_of(assignment.mapping[row]))
        canvas[y:y + side, x:x + side] = from_model_range(fragment.pixels.numpy())
        if truth is not None and assignment.mapping[row] != truth.mapping[row]:
            misplaced.append((y, x))
    for y, x in misplaced:
        _draw_border(canvas, y, x, side)
    return ImageRGB.from_array(canvas)


def report_row(image: str, result: PuzzleResult) -> dict:
    return {
        "image": image,
        "perfect": int(result.metrics.perfect_solve),
        "correctly_placed": result.metrics.correctly_placed,
        "greedy_score": result.greedy_score,
        "optimal_score": result.optimal_score,
    }


def append_report(path: Union[str, Path], rows: List[dict]) -> None:
    path = Path(path)
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, lineterminator="\n")


def solve_corpus(model: LocationModel, cfg: SamplerConfig, images: Sequence[ImageRGB], names: Sequence[str],
                 seed: int, oracle: bool = True) -> pd.DataFrame:
    """Solve one puzzle per image (image i uses generator seed ^ i) and tabulate the results."""
    if not images:
        raise EmptyDatasetError("empty dataset: no puzzle images")
    rows = []
    for index, (name, img) in enumerate(zip(names, images)):
        result = solve_puzzle(model, cfg, img, image_rng(seed, index), oracle=oracle)
        rows.append(report_row(name, result))
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def summarize_report(table: pd.DataFrame) -> PuzzleSummary:
    """Two-metric summary of a corpus report table."""
    return summarize_puzzles([PuzzleMetrics(perfect_solve=bool(p), correctly_placed=int(c))
                              for p, c in zip(table["perfect"], table["correctly_placed"])])
