"""scikit-learn style wrapper around the trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encoders import IMAGE, TEXT, PackedBatch
from .evaluation import evaluate, score_dataset
from .similarity import score_padded
from .trainer import TrainerConfig, Trainer
from .validation import check_dataset, check_feature_sets


class ADDRMatcher(BaseEstimator):
    """Image/sentence matcher; ``fit`` takes a :class:`~addrlab.data.Dataset`.

    ``transform`` embeds region or word sets, ``decision_function`` scores
    every image of a split against every caption, ``predict`` returns the best
    caption id per image and ``score`` is the split's rsum.
    """

    def __init__(self, variant="addr", dim=64, delta=0.2, alpha=0.05, beta=0.1, gamma=0.4,
                 lr=0.001, disc_lr=0.01, batch_size=32, epochs=50, tau=10.0, seed=0,
                 schedule="epoch", literal_eq9=False, patience=10, early_stop=True):
        self.variant = variant
        self.dim = dim
        self.delta = delta
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lr = lr
        self.disc_lr = disc_lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.tau = tau
        self.seed = seed
        self.schedule = schedule
        self.literal_eq9 = literal_eq9
        self.patience = patience
        self.early_stop = early_stop

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(**self.get_params())

    def fit(self, X, y=None):
        ds = check_dataset(X)
        trainer = Trainer(self.trainer_config(), ds)
        result = trainer.fit()
        self.generator_ = result.gen
        self.metric_ = result.metric
        self.bank_ = result.bank
        self.log_ = result.log
        self.state_ = trainer.state
        self.n_features_in_ = (ds.d_img, ds.d_txt)
        return self

    def transform(self, X, modality=IMAGE):
        """Embed a list of ``(rows, d)`` feature sets; returns a list of unit-row arrays."""
        check_is_fitted(self, "generator_")
        d = self.n_features_in_[0 if modality == IMAGE else 1]
        sets = check_feature_sets(X, d, modality)
        packed = PackedBatch(self.generator_, sets, modality)
        return [packed.rows_of(i) for i in range(len(sets))]

    def similarity(self, images, sentences) -> np.ndarray:
        """Score matrix between raw image region sets and raw sentence word sets."""
        check_is_fitted(self, "generator_")
        imgs = PackedBatch(self.generator_, check_feature_sets(images, self.n_features_in_[0], IMAGE), IMAGE)
        caps = PackedBatch(self.generator_, check_feature_sets(sentences, self.n_features_in_[1], TEXT), TEXT)
        return score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, self.metric_.tau)

    def decision_function(self, X, split="test"):
        """``(scores, owner)`` over ``split`` images and all of their captions."""
        check_is_fitted(self, "generator_")
        ds = check_dataset(X, min_pairs=1)
        return score_dataset(self.generator_, self.metric_, ds, ds.image_ids(split))

    def predict(self, X, split="test") -> np.ndarray:
        """Top-ranked caption id for each image of ``split``."""
        ds = check_dataset(X, min_pairs=1)
        scores, _ = self.decision_function(ds, split)
        captions = np.array([c for i in ds.image_ids(split) for c in ds.pairs[i]])
        return captions[np.argmax(scores, axis=1)]

    def report(self, X, split="test"):
        check_is_fitted(self, "generator_")
        return evaluate(self.generator_, self.metric_, check_dataset(X, min_pairs=1), split,
                        variant=self.variant, seed=self.seed, config_hash=self.trainer_config().hash())

    def score(self, X, y=None, split="test") -> float:
        return self.report(X, split).rsum
