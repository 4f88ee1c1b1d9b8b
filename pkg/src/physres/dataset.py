"""Labeled synthetic datasets: recordings per (class, load) -> windowed features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

import numpy as np

from .features import FeatureMatrix
from .signals import RawRecording, SynthConfig, segment, synthesize_recording

DEFAULT_CLASSES = (1, 2, 3, 4, 5)
DEFAULT_LOADS = (0.3, 0.7)


@dataclass(frozen=True)
class DatasetConfig:
    classes: tuple = DEFAULT_CLASSES
    loads: tuple = DEFAULT_LOADS
    windows_per_class: int = 200
    window_len: int = 1000
    hop: int = 1000
    synth: SynthConfig = field(default_factory=SynthConfig)

    def recordings_per_condition(self) -> int:
        per_rec = (self.synth.num_samples - self.window_len) // self.hop + 1
        return max(1, math.ceil(self.windows_per_class / (len(self.loads) * per_rec)))


def recording_seed(seed: int, label: int, load_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(label), load_index, rep]).generate_state(1)[0])


def synthesize_dataset(cfg: DatasetConfig = DatasetConfig(), seed: int = 0) -> List[RawRecording]:
    recs = []
    for label in cfg.classes:
        for li, load in enumerate(cfg.loads):
            for rep in range(cfg.recordings_per_condition()):
                recs.append(synthesize_recording(label, load, cfg.synth, recording_seed(seed, label, li, rep)))
    return recs


def features_from_recordings(
    recordings: Iterable[RawRecording], window_len: int, hop: int, per_class: int = None
) -> FeatureMatrix:
    """Window every recording and extract features, keeping at most ``per_class`` rows per label.

    Rows are taken round-robin over a class's recordings so a cap keeps every
    load level represented.
    """
    by_label = {}
    for rec in recordings:
        by_label.setdefault(int(rec.label), []).append(segment(rec, window_len, hop))
    windows = []
    for label in sorted(by_label):
        lists = by_label[label]
        picked, i = [], 0
        longest = max(len(ws) for ws in lists)
        while i < longest and (per_class is None or len(picked) < per_class):
            for ws in lists:
                if i < len(ws) and (per_class is None or len(picked) < per_class):
                    picked.append(ws[i])
            i += 1
        windows.extend(picked)
    return FeatureMatrix.from_windows(windows)


def make_dataset(cfg: DatasetConfig = DatasetConfig(), seed: int = 0) -> FeatureMatrix:
    return features_from_recordings(
        synthesize_dataset(cfg, seed), cfg.window_len, cfg.hop, cfg.windows_per_class
    )
