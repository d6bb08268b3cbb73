"""One-step linearised Tikhonov reconstruction and rule-based segmentation.

For a measurement Jacobian ``J``, diagonal noise covariance ``Sigma`` and
priors ``P_FSM``, ``P_SM``, ``P_LM`` the reconstruction is::

    dsigma = (J^T Sigma^-1 J + a_FSM P_FSM + a_SM P_SM + a_LM P_LM)^-1 J^T Sigma^-1 dU

The normal matrix is factorised once per (level, weights); each
reconstruction afterwards is a matrix-vector product plus a Cholesky solve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from skimage.filters import threshold_otsu

from .errors import ConfigError, DimensionError, NumericalError, ParseError
from .interp import MeshPixelInterpolator, disk_mask
from .priors import PriorMatrix, build_lm

ENSEMBLE_LABELS = ("FSM", "SM", "SM+LM", "FSM+SM+LM (weak)", "FSM+SM+LM (strong)")
BACKGROUND, RESISTIVE, CONDUCTIVE = 0, 1, 2


@dataclass(eq=False)
class NoiseModel:
    diag: np.ndarray  # per-measurement variances

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=np.float64)
        if d.ndim != 1 or d.size == 0 or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ConfigError("noise variances must be a nonempty vector of positive numbers")
        self.diag = d


def build_noise_model(u_ref, as_std: bool = False) -> NoiseModel:
    """``diag = 0.05 |u_ref| + 0.01 max |u_ref|``.

    With ``as_std=True`` the same expression is taken as a standard deviation
    and squared.  The default reads it as a variance.
    """
    u = np.abs(np.asarray(getattr(u_ref, "values", u_ref), dtype=np.float64))
    if u.size == 0:
        raise ConfigError("reference measurements are empty")
    if not np.any(u > 0):
        raise ConfigError("reference measurements are all zero; noise model would be degenerate")
    d = 0.05 * u + 0.01 * u.max()
    return NoiseModel(d * d if as_std else d)


@dataclass(frozen=True)
class RegWeights:
    alpha_fsm: float = 0.0
    alpha_sm: float = 0.0
    alpha_lm: float = 0.0
    label: str = ""

    def __post_init__(self):
        a = (self.alpha_fsm, self.alpha_sm, self.alpha_lm)
        if any(not np.isfinite(x) or x < 0 for x in a):
            raise ConfigError(f"regularisation strengths must be finite and >= 0, got {a}")
        if not any(x > 0 for x in a):
            raise ConfigError("at least one regularisation strength must be positive")

    def scaled(self, factor: float) -> "RegWeights":
        return RegWeights(self.alpha_fsm * factor, self.alpha_sm * factor,
                          self.alpha_lm * factor, self.label)


@dataclass
class Priors:
    fsm: PriorMatrix | None = None
    sm: PriorMatrix | None = None


def _as_dense(P) -> np.ndarray:
    return P.toarray() if sp.issparse(P) else np.asarray(P)


class Reconstructor:
    """Factorised regularised normal equations for one level and one weight triple.

    With ``normalize=True`` each strength is multiplied by
    ``trace(J^T Sigma^-1 J) / trace(P)`` so that weights are comparable across
    meshes, current amplitudes and levels.
    """

    def __init__(self, J, noise: NoiseModel, priors: Priors, weights: RegWeights,
                 level: int | None = None, normalize: bool = False):
        Jm = np.asarray(getattr(J, "matrix", J), dtype=np.float64)
        if Jm.ndim != 2 or noise.diag.shape != (Jm.shape[0],):
            raise DimensionError(
                f"Jacobian has {Jm.shape[0]} rows but the noise model has {noise.diag.size}"
            )
        self.level = level if level is not None else getattr(J, "level", None)
        self.weights = weights
        self.n_rows, self.n_elements = Jm.shape
        self.JtSi = (Jm / noise.diag[:, None]).T  # (M, rows)
        H = self.JtSi @ Jm
        base_trace = np.trace(H)
        self.effective = {}
        terms = []
        if weights.alpha_fsm > 0:
            terms.append(("fsm", weights.alpha_fsm, _require(priors.fsm, "FSM").matrix))
        if weights.alpha_sm > 0:
            terms.append(("sm", weights.alpha_sm, _require(priors.sm, "SM").matrix))
        if weights.alpha_lm > 0:
            terms.append(("lm", weights.alpha_lm, build_lm(Jm, noise).matrix))
        for name, alpha, P in terms:
            Pd = _as_dense(P)
            if Pd.shape != H.shape:
                raise DimensionError(f"{name} prior has shape {Pd.shape}, expected {H.shape}")
            if normalize:
                alpha = alpha * base_trace / np.trace(Pd)
            self.effective[name] = alpha
            H += alpha * Pd
        self.normal_matrix = 0.5 * (H + H.T)
        try:
            self._chol = sla.cho_factor(self.normal_matrix, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"regularised normal matrix is not positive definite for weights "
                f"(fsm={weights.alpha_fsm}, sm={weights.alpha_sm}, lm={weights.alpha_lm})"
            ) from exc

    def __call__(self, delta_u) -> np.ndarray:
        return reconstruct(self, delta_u)

    def rhs(self, delta_u) -> np.ndarray:
        du = np.asarray(getattr(delta_u, "values", delta_u), dtype=np.float64)
        if du.shape[0] != self.n_rows:
            raise DimensionError(
                f"measurement has {du.shape[0]} values, reconstructor expects {self.n_rows}"
            )
        return self.JtSi @ du

    def residual(self, delta_u, dsigma) -> float:
        """Relative residual of the normal equations."""
        b = self.rhs(delta_u)
        nb = np.linalg.norm(b)
        r = np.linalg.norm(self.normal_matrix @ dsigma - b)
        return float(r / nb) if nb > 0 else float(r)


def _require(P, name):
    if P is None:
        raise ConfigError(f"{name} prior requested by the weights but not provided")
    return P


def build_reconstructor(J, noise: NoiseModel, priors: Priors, weights: RegWeights,
                        normalize: bool = False) -> Reconstructor:
    return Reconstructor(J, noise, priors, weights, normalize=normalize)


def reconstruct(rec: Reconstructor, delta_u) -> np.ndarray:
    b = rec.rhs(delta_u)
    if not np.any(b):
        return np.zeros(rec.n_elements)
    return sla.cho_solve(rec._chol, b, check_finite=False)


# ---------------------------------------------------------------------------
# weight configuration and ensembles


def load_weights_config(path=None) -> tuple[dict[int, list[RegWeights]], bool]:
    """Read ``{level: [{label, alpha_fsm, alpha_sm, alpha_lm}, ...]}``.

    An optional top-level ``"normalization": "trace"`` entry switches on
    trace-normalised strengths.  ``path=None`` loads the bundled defaults.
    """
    if path is None:
        text = resources.files("eitkit").joinpath("data/default_weights.json").read_text()
        source = "default_weights.json"
    else:
        text, source = Path(path).read_text(), str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno}: {exc.msg}") from exc
    norm = doc.pop("normalization", "none")
    if norm not in ("none", "trace"):
        raise ConfigError(f"{source}: unknown normalization {norm!r}")
    out = {}
    for key, members in doc.items():
        try:
            level = int(key)
            out[level] = [
                RegWeights(float(m["alpha_fsm"]), float(m["alpha_sm"]), float(m["alpha_lm"]),
                           str(m.get("label", "")))
                for m in members
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: bad entry for level {key!r}: {exc}") from exc
    return out, norm == "trace"


def save_weights_config(weights: dict[int, list[RegWeights]], path, normalize: bool = False) -> None:
    doc = {"normalization": "trace" if normalize else "none"}
    for level in sorted(weights):
        doc[str(level)] = [
            {"label": w.label, "alpha_fsm": w.alpha_fsm, "alpha_sm": w.alpha_sm, "alpha_lm": w.alpha_lm}
            for w in weights[level]
        ]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


@dataclass(eq=False)
class ReconstructionEnsemble:
    """Five reconstructors per level plus the mesh-to-pixel map."""

    members: dict[int, list[Reconstructor]]
    interpolator: MeshPixelInterpolator
    labels: tuple[str, ...] = ENSEMBLE_LABELS
    noise: dict[int, NoiseModel] = field(default_factory=dict)

    def __post_init__(self):
        for level, recs in self.members.items():
            if len(recs) != 5:
                raise ConfigError(f"level {level} has {len(recs)} ensemble members, expected 5")


def build_ensemble(J_by_level: dict, u_ref_by_level: dict, priors: Priors,
                   weights: dict[int, list[RegWeights]], interpolator: MeshPixelInterpolator,
                   normalize: bool = False) -> ReconstructionEnsemble:
    members, noise = {}, {}
    for level, J in J_by_level.items():
        if level not in weights:
            raise ConfigError(f"no ensemble weights configured for level {level}")
        noise[level] = build_noise_model(u_ref_by_level[level])
        members[level] = [
            Reconstructor(J, noise[level], priors, w, level=level, normalize=normalize)
            for w in weights[level]
        ]
    return ReconstructionEnsemble(members, interpolator, noise=noise)


def reconstruct_ensemble(ens: ReconstructionEnsemble, delta_u, level: int | None = None) -> np.ndarray:
    """Five interpolated reconstructions, shape (5, n, n), in label order."""
    if level is None:
        level = getattr(delta_u, "level", None)
    if level not in ens.members:
        raise ConfigError(f"ensemble has no members for level {level}")
    cols = np.column_stack([reconstruct(r, delta_u) for r in ens.members[level]])
    img = ens.interpolator(cols)  # (n, n, 5)
    return np.moveaxis(img, -1, 0)


# ---------------------------------------------------------------------------
# segmentation


def _otsu(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.min() == values.max():
        return float(values.max())
    return float(threshold_otsu(values))


def auto_thresholds(image: np.ndarray, min_fraction: float = 0.25) -> tuple[float, float]:
    """Two-sided Otsu on the negative and positive parts of the in-disk pixels.

    Each threshold is pushed out to at least ``min_fraction * max|image|`` so a
    side that only contains low-level fluctuations stays background.
    """
    v = np.asarray(image, dtype=np.float64)[disk_mask(image.shape[0])]
    peak = np.abs(v).max() if v.size else 0.0
    if peak == 0:
        return -np.inf, np.inf
    floor = min_fraction * peak
    neg, pos = -v[v < 0], v[v > 0]
    t_low = -max(_otsu(neg), floor) if neg.size else -np.inf
    t_high = max(_otsu(pos), floor) if pos.size else np.inf
    return t_low, t_high


def segment(image: np.ndarray, thresholds=None) -> np.ndarray:
    """Class map: 1 where ``image < t_low``, 2 where ``image > t_high``, else 0.

    ``thresholds=None`` selects them with :func:`auto_thresholds`.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DimensionError(f"expected a square image, got {image.shape}")
    if thresholds is None:
        t_low, t_high = auto_thresholds(image)
    else:
        t_low, t_high = thresholds
        if not t_low < 0 < t_high:
            raise ConfigError(f"thresholds must satisfy t_low < 0 < t_high, got {thresholds}")
    out = np.zeros(image.shape, dtype=np.uint8)
    out[image < t_low] = RESISTIVE
    out[image > t_high] = CONDUCTIVE
    out[~disk_mask(image.shape[0])] = BACKGROUND
    return out


