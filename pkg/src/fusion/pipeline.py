"""
Routed fusion pipeline
Each sample is scored by the meta-model of the module subset it actually has
(e.g. a failed emulation routes to the fp+emb meta-model)
"""
import logging
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from src.fusion.configs import MODULE_ORDER, REPRESENTATION_DIM, canonical_subset, subset_label
from src.fusion.modules import EarlyFusionModule, MetaModel
from src.utils.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.98


class PredictionResult(NamedTuple):
    scores: np.ndarray
    module_scores: Dict[str, np.ndarray]
    subsets: List[str]


class FusionPipeline:
    """
    Early-fusion modules plus one meta-model per served subset

    Args:
        modules: Early-fusion modules keyed by module id
        metas: Meta-models; keyed internally by subset label
        threshold: Decision threshold (score >= threshold is malicious)
        featurizer_hashes: Hashes of the featurizers the modules were trained with
    """

    def __init__(self, modules: Mapping[str, EarlyFusionModule], metas: Sequence[MetaModel] = (),
                 threshold: float = DEFAULT_THRESHOLD, featurizer_hashes: Optional[Mapping[str, str]] = None):
        unknown = [m for m in modules if m not in MODULE_ORDER]
        if unknown:
            raise ConfigurationError(f"unknown module ids {unknown}")
        self.modules: Dict[str, EarlyFusionModule] = dict(modules)
        self.metas: Dict[str, MetaModel] = {}
        self.threshold = threshold
        self.featurizer_hashes = dict(featurizer_hashes or {})
        for meta in metas:
            self.install_meta(meta)

    def install_meta(self, meta: MetaModel, subset: Optional[Sequence[str]] = None):
        """Register a meta-model; `subset`, when given, must equal the meta-model's own signature"""
        if subset is not None and canonical_subset(subset) != meta.subset:
            raise ConfigurationError(f"meta-model trained on {meta.label} cannot serve {subset_label(subset)}")
        missing = [m for m in meta.subset if m not in self.modules]
        if missing:
            raise ConfigurationError(f"meta-model {meta.label} needs modules {missing} that are not loaded")
        self.metas[meta.label] = meta

    def meta_for(self, subset: Sequence[str]) -> MetaModel:
        label = subset_label(subset)
        if label not in self.metas:
            raise ConfigurationError(
                f"no meta-model for module subset {label}; available: {sorted(self.metas)}"
            )
        return self.metas[label]

    @property
    def subsets(self) -> List[str]:
        return sorted(self.metas)

    def _availability(self, batch: Mapping[str, Optional[np.ndarray]],
                      available: Optional[Mapping[str, np.ndarray]], n: int) -> Dict[str, np.ndarray]:
        masks = {}
        for module_id in MODULE_ORDER:
            present = module_id in self.modules and batch.get(module_id) is not None
            if not present:
                masks[module_id] = np.zeros(n, dtype=bool)
            elif available is not None and module_id in available:
                masks[module_id] = np.asarray(available[module_id], dtype=bool).reshape(n)
            else:
                masks[module_id] = np.ones(n, dtype=bool)
        return masks

    def predict(self, batch: Mapping[str, Optional[np.ndarray]],
                available: Optional[Mapping[str, np.ndarray]] = None) -> PredictionResult:
        """
        Score a batch with missing-modality routing

        Args:
            batch: Encoded inputs per module id (None for a modality absent from the whole batch)
            available: Per-module boolean masks; rows marked False are ignored for that module

        Returns:
            PredictionResult with the fused score, per-module standalone scores (NaN when
            unavailable) and the subset label used for each sample
        """
        sizes = {np.shape(x)[0] for x in batch.values() if x is not None}
        if len(sizes) != 1:
            raise DimensionError(f"batch inputs disagree on sample count: {sorted(sizes)}")
        n = sizes.pop()
        masks = self._availability(batch, available, n)

        representations: Dict[str, np.ndarray] = {}
        module_scores: Dict[str, np.ndarray] = {}
        for module_id, module in self.modules.items():
            rep = np.zeros((n, REPRESENTATION_DIM), dtype=np.float64)
            score = np.full(n, np.nan)
            rows = np.flatnonzero(masks[module_id])
            if rows.size:
                rep_rows, score_rows = module.forward(np.asarray(batch[module_id])[rows])
                rep[rows] = rep_rows
                score[rows] = score_rows
            representations[module_id] = rep
            module_scores[module_id] = score

        routes = []
        for i in range(n):
            members = tuple(m for m in MODULE_ORDER if masks[m][i])
            if not members:
                raise ConfigurationError(f"sample {i} has no available modality")
            routes.append(subset_label(members))

        scores = np.zeros(n, dtype=np.float64)
        for label in sorted(set(routes)):
            meta = self.meta_for(label.split('+'))
            rows = np.array([i for i, route in enumerate(routes) if route == label])
            fusion = np.concatenate([representations[m][rows] for m in meta.subset], axis=1)
            scores[rows] = meta.predict(fusion)

        return PredictionResult(scores=scores, module_scores=module_scores, subsets=routes)

    def verdicts(self, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores) >= self.threshold

    def manifest(self) -> Dict:
        return {
            'order': list(MODULE_ORDER),
            'modules': [m for m in MODULE_ORDER if m in self.modules],
            'subsets': self.subsets,
            'threshold': self.threshold,
            'featurizer_hashes': self.featurizer_hashes,
        }

    def __repr__(self):
        return f"FusionPipeline(modules={list(self.modules)}, subsets={self.subsets}, threshold={self.threshold})"
