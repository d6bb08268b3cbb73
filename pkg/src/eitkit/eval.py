"""SSIM-based scoring of segmentation maps, per sample, per level and overall."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.metrics import structural_similarity

from .errors import DimensionError, ScoringError
from .gridio import find_class_map, load_class_map
from .levels import N_LEVELS, LevelConfig, level_config  # noqa: F401  (level configuration lives with the patterns)
from .recon import CONDUCTIVE, RESISTIVE

__all__ = ["LevelConfig", "level_config", "SSIMConfig", "ssim", "score_segmentation",
           "ScoreReport", "score_run"]


@dataclass(frozen=True)
class SSIMConfig:
    """Window and constants; defaults are the common 11 x 11 Gaussian, stddev 1.5."""

    window: str = "gaussian"  # or "uniform"
    win_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0


def ssim(a: np.ndarray, b: np.ndarray, config: SSIMConfig = SSIMConfig()) -> float:
    """Mean SSIM over all full window positions (no padding)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise DimensionError(f"SSIM expects 2-D maps, got {a.ndim} dimensions")
    if config.window not in ("gaussian", "uniform"):
        raise ScoringError(f"unknown SSIM window {config.window!r}")
    gaussian = config.window == "gaussian"
    kw = {"sigma": config.sigma} if gaussian else {"win_size": config.win_size}
    return float(structural_similarity(
        a, b, data_range=config.data_range, gaussian_weights=gaussian,
        use_sample_covariance=False, K1=config.k1, K2=config.k2, **kw,
    ))


def score_segmentation(pred: np.ndarray, truth: np.ndarray,
                       config: SSIMConfig = SSIMConfig()) -> float:
    """Average of the conductive-map and resistive-map SSIM."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {truth.shape} differ in shape")
    s_cond = ssim(pred == CONDUCTIVE, truth == CONDUCTIVE, config)
    s_res = ssim(pred == RESISTIVE, truth == RESISTIVE, config)
    return 0.5 * (s_cond + s_res)


@dataclass
class ScoreReport:
    samples: list = field(default_factory=list)  # {level, id, score, ssim_conductive, ssim_resistive}
    level_sums: dict = field(default_factory=dict)
    total: float = 0.0

    @classmethod
    def from_samples(cls, samples: list) -> "ScoreReport":
        samples = sorted(samples, key=lambda s: (s["level"], s["id"]))
        sums = {}
        for s in samples:
            sums[s["level"]] = sums.get(s["level"], 0.0) + s["score"]
        return cls(samples, sums, float(sum(sums[k] for k in sorted(sums))))

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "level_sums": {str(k): v for k, v in sorted(self.level_sums.items())},
            "total": self.total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_table(self, name: str = "run") -> str:
        head = ["", *[f"Level {k}" for k in range(1, N_LEVELS + 1)], "Sum"]
        row = [name, *[f"{self.level_sums[k]:.3f}" if k in self.level_sums else "-"
                       for k in range(1, N_LEVELS + 1)], f"{self.total:.3f}"]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
        return fmt(head) + "\n" + fmt(row) + "\n"


_LEVEL = re.compile(r"level_(\d+)$")


def _samples(root: Path) -> dict[tuple[int, str], Path]:
    out = {}
    for ldir in sorted(root.glob("level_*")):
        m = _LEVEL.match(ldir.name)
        if not (m and ldir.is_dir()):
            continue
        for sdir in sorted(ldir.glob("sample_*")):
            path = find_class_map(sdir)
            if path is not None:
                out[(int(m.group(1)), sdir.name[len("sample_"):])] = path
    return out


def score_run(pred_dir, truth_dir, config: SSIMConfig = SSIMConfig()) -> ScoreReport:
    """Score ``pred_dir`` against ``truth_dir``; both use the dataset layout
    ``level_<k>/sample_<id>/class_map.{bin,png,json}``."""
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    truth = _samples(truth_dir)
    if not truth:
        raise ScoringError(f"{truth_dir}: no ground-truth class maps found")
    pred = _samples(pred_dir)
    if not pred:
        raise ScoringError(f"{pred_dir}: no predictions found")
    missing = sorted(set(truth) - set(pred))
    if missing:
        ids = ", ".join(f"level_{k}/sample_{i}" for k, i in missing)
        raise ScoringError(f"missing predictions for {len(missing)} sample(s): {ids}")
    samples = []
    for key in sorted(truth):
        t, p = load_class_map(truth[key]), load_class_map(pred[key])
        if t.shape != p.shape:
            raise DimensionError(f"level_{key[0]}/sample_{key[1]}: prediction {p.shape} vs truth {t.shape}")
        sc = ssim(p == CONDUCTIVE, t == CONDUCTIVE, config)
        sr = ssim(p == RESISTIVE, t == RESISTIVE, config)
        samples.append({"level": key[0], "id": key[1], "score": 0.5 * (sc + sr),
                        "ssim_conductive": sc, "ssim_resistive": sr})
    return ScoreReport.from_samples(samples)
