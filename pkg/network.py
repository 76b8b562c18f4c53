from typing import List, Optional, Sequence

import numpy as np

from errors import ContractViolation
from fen import fen_shared_apply, init_fen_params
from fusion import classify, combine, head_logits, init_head_params
from log_utils import get_logger
from models import FenConfig, FusionConfig
from tensor_utils import ops
from tensor_utils.gradcheck import GradCheckResult, check_gradients
from tensor_utils.parameters import ParameterSet
from tensor_utils.tensor import Tensor, float64_precision

logger = get_logger(__name__)


class RelativePositionNet:
    """
    Shared FEN applied to both fragments, a combination layer, and the classification head,
    all parameters in one `ParameterSet`.
    """

    def __init__(self, fen_cfg: FenConfig, fusion_cfg: FusionConfig, params: Optional[ParameterSet] = None,
                 seed: int = 0):
        if fen_cfg.feature_dim != fusion_cfg.feature_dim:
            raise ContractViolation(
                f"FEN feature_dim {fen_cfg.feature_dim} != fusion feature_dim {fusion_cfg.feature_dim}"
            )
        self.fen_cfg = fen_cfg
        self.fusion_cfg = fusion_cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = init_fen_params(fen_cfg, rng)
            init_head_params(fusion_cfg, rng, params)
        self.params = params

    def logits(self, central: Tensor, neighbor: Tensor, mode: str = ops.INFER) -> Tensor:
        phi1, phi2 = fen_shared_apply(self.fen_cfg, self.params, central, neighbor, mode)
        return head_logits(self.fusion_cfg, self.params, combine(self.fusion_cfg, phi1, phi2), mode)

    def predict_proba(self, central: Tensor, neighbor: Tensor) -> np.ndarray:
        phi1, phi2 = fen_shared_apply(self.fen_cfg, self.params, central, neighbor, ops.INFER)
        return classify(self.fusion_cfg, self.params, combine(self.fusion_cfg, phi1, phi2), ops.INFER).numpy()

    def __call__(self, central: np.ndarray, neighbor: np.ndarray) -> np.ndarray:
        """Predicted class per pair, for batches of model-range fragments."""
        return self.predict_proba(Tensor(central), Tensor(neighbor)).argmax(axis=-1)


def gradcheck_network(seed: int, n_entries: int = 20, batch: int = 4) -> GradCheckResult:
    """
    Finite-difference check of the whole network (train mode, fused softmax cross-entropy)
    on randomly chosen parameter entries of the desk configuration.
    """
    with float64_precision():
        rng = np.random.default_rng(seed)
        fen_cfg = FenConfig.desk()
        fusion_cfg = FusionConfig.desk("kronecker" if seed % 2 else "concat")
        net = RelativePositionNet(fen_cfg, fusion_cfg, seed=seed)
        side = fen_cfg.input_side
        central = Tensor(rng.uniform(-1, 1, size=(batch, side, side, 3)))
        neighbor = Tensor(rng.uniform(-1, 1, size=(batch, side, side, 3)))
        labels = rng.integers(0, 8, size=batch)

        inputs = dict(net.params.items())
        names: List[str] = list(inputs)
        entries: List[Sequence] = []
        for _ in range(n_entries):
            name = names[int(rng.integers(len(names)))]
            entries.append((name, int(rng.integers(inputs[name].size))))

        def build() -> Tensor:
            return ops.softmax_cross_entropy(net.logits(central, neighbor, ops.TRAIN), labels)

        result = check_gradients("network", build, inputs, seed=seed, entries=entries)
    logger.info(f"network gradcheck seed={seed} kind={fusion_cfg.kind} checked={result.checked} "
                f"skipped={result.skipped} passed={result.passed}")
    return result
