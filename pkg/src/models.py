"""
Pydantic models for the beamgraph toolkit.

Configs are validated on construction. Tensor containers hold numpy arrays
(``arbitrary_types_allowed``) with the index orders documented per field.
"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SimConfig(BaseModel):
    """Scenario geometry, antenna counts and link budget."""
    n_pairs: int = Field(ge=1)  # N
    n_tx: int = Field(ge=1)  # Nt, transmit antennas (and transmit codewords)
    n_rx: int = Field(ge=1)  # Nr
    n_paths: int = Field(default=2, ge=1)  # Np
    region_side: float = Field(gt=0)  # meters
    d1: float = Field(gt=0)  # minimum pair distance, meters
    d2: float = Field(gt=0)  # maximum pair distance, meters
    snr_db: float = 0.0
    noise_power: float = Field(default=1.0, gt=0)  # sigma^2, watts
    tx_power: Optional[float] = Field(default=None, gt=0)  # p, watts
    weights: Optional[List[float]] = None  # w_m, defaults to all ones

    @model_validator(mode="after")
    def _check_link_budget(self) -> "SimConfig":
        if self.d1 > self.d2:
            raise ValueError(f"d1 ({self.d1}) must not exceed d2 ({self.d2})")
        derived = self.noise_power * 10.0 ** (self.snr_db / 10.0)
        if self.tx_power is None:
            self.tx_power = derived
        elif abs(10.0 * math.log10(self.tx_power / self.noise_power) - self.snr_db) > 1e-9:
            raise ValueError(
                f"snr_db={self.snr_db} disagrees with tx_power={self.tx_power} "
                f"and noise_power={self.noise_power}"
            )
        if self.weights is None:
            self.weights = [1.0] * self.n_pairs
        elif len(self.weights) != self.n_pairs:
            raise ValueError(f"Expected {self.n_pairs} weights, got {len(self.weights)}")
        elif any(w < 0 for w in self.weights):
            raise ValueError("Pair weights must be nonnegative")
        return self

    @property
    def feature_dim(self) -> int:
        """Length of a vertex or edge feature vector (Nt * Nr)."""
        return self.n_tx * self.n_rx

    def weight_vector(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


class NetworkTopology(_ArrayModel):
    """Pair positions; dist[m, n] is the distance from transmitter n to receiver m."""
    tx_pos: np.ndarray  # (N, 2)
    rx_pos: np.ndarray  # (N, 2)
    dist: np.ndarray  # (N, N)


class ChannelSet(_ArrayModel):
    """H[m, n] is the Nr x Nt channel from transmitter n to receiver m."""
    H: np.ndarray  # (N, N, Nr, Nt) complex


class Codebook(_ArrayModel):
    """Beam codebooks with codewords as columns."""
    u_t: np.ndarray  # (Nt, Nt) complex, transmit
    v_r: np.ndarray  # (Nr, Nr) complex, receive


class EffectiveGains(_ArrayModel):
    """rho[m, r, n, l] = |v_r^H H[m, n] u_l|^2."""
    rho: np.ndarray  # (N, Nr, N, Nt)

    @property
    def n_pairs(self) -> int:
        return self.rho.shape[0]


class GraphFeatures(_ArrayModel):
    """kappa[i, i] is the vertex feature of pair i, kappa[i, j] the edge i -> j."""
    kappa: np.ndarray  # (N, N, Nr * Nt)


class BeamPolicy(_ArrayModel):
    """Continuous beam selection matrices with entries in [0, 1]."""
    phi: np.ndarray  # (N, Nr) receive selection
    psi: np.ndarray  # (N, Nt) transmit selection


class BinarySelection(BaseModel):
    """Per pair either None (inactive) or the (receive beam, transmit beam) pair."""
    beams: List[Optional[Tuple[int, int]]]

    @property
    def active_count(self) -> int:
        return sum(1 for b in self.beams if b is not None)


class DualMultipliers(_ArrayModel):
    """Nonnegative multipliers of the relaxed constraints."""
    lam: np.ndarray  # (N, Nt) transmit binary relaxation
    mu: np.ndarray  # (N, Nr) receive binary relaxation
    nu: np.ndarray  # (N,) transmit row sum
    xi: np.ndarray  # (N,) receive row sum
    rho_dual: np.ndarray  # (N,) activation coupling

    @classmethod
    def zeros(cls, n_pairs: int, n_tx: int, n_rx: int) -> "DualMultipliers":
        return cls(
            lam=np.zeros((n_pairs, n_tx)),
            mu=np.zeros((n_pairs, n_rx)),
            nu=np.zeros(n_pairs),
            xi=np.zeros(n_pairs),
            rho_dual=np.zeros(n_pairs),
        )

    def norms(self) -> Dict[str, float]:
        return {
            "lambda": float(np.linalg.norm(self.lam)),
            "mu": float(np.linalg.norm(self.mu)),
            "nu": float(np.linalg.norm(self.nu)),
            "xi": float(np.linalg.norm(self.xi)),
            "rho": float(np.linalg.norm(self.rho_dual)),
        }


class ViolationReport(_ArrayModel):
    """Constraint residuals of a policy (all >= 0 on box policies)."""
    binary_tx: np.ndarray  # (N, Nt) psi - psi^2
    binary_rx: np.ndarray  # (N, Nr) phi - phi^2
    row_tx: np.ndarray  # (N,) max(0, sum_t psi - 1)
    row_rx: np.ndarray  # (N,) max(0, sum_r phi - 1)
    coupling: np.ndarray  # (N,) |sum_t psi - sum_r phi|

    def means(self) -> Dict[str, float]:
        return {
            "binary_tx": float(np.mean(self.binary_tx)),
            "binary_rx": float(np.mean(self.binary_rx)),
            "row_tx": float(np.mean(self.row_tx)),
            "row_rx": float(np.mean(self.row_rx)),
            "coupling": float(np.mean(self.coupling)),
        }


class Activation(str, Enum):
    """Output activations an MLP may end with."""
    RELU = "relu"
    PROJECT = "project"
    NONE = "none"


class MlpParams(_ArrayModel):
    """Dense layers computing x @ W + b, ReLU between layers."""
    weights: List[np.ndarray]  # (fan_in, fan_out) each
    biases: List[np.ndarray]
    output_activation: Activation

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


class LayerParams(_ArrayModel):
    """One graph convolution layer: message MLP and the two policy MLPs."""
    mlp1: MlpParams
    mlp_tx: MlpParams
    mlp_rx: MlpParams


class ModelParams(_ArrayModel):
    """GBLinks weights; layers are independent when K > 1."""
    n_tx: int
    n_rx: int
    agg_width: int  # f, output width of mlp1
    layers: List[LayerParams]

    @property
    def n_layers(self) -> int:
        return len(self.layers)


class AdamState(_ArrayModel):
    """Moment accumulators aligned with the canonical parameter order."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class OptimizerName(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class TrainConfig(BaseModel):
    """Training loop settings."""
    epochs: int = Field(ge=0)
    batch_size: int = Field(default=20, ge=1)
    lr: float = Field(default=1e-3, gt=0)  # zeta
    eps_lambda: float = Field(default=1e-6, ge=0)
    eps_mu: float = Field(default=1e-6, ge=0)
    eps_nu: float = Field(default=1e-6, ge=0)
    eps_xi: float = Field(default=1e-6, ge=0)
    eps_rho: float = Field(default=1e-6, ge=0)
    seed: int = 0
    reproducible_mode: bool = True
    shuffle: bool = False
    optimizer: OptimizerName = OptimizerName.ADAM
    round_threshold: float = Field(default=0.5, gt=0, le=1)


class EpochRecord(BaseModel):
    """One row of the training report."""
    epoch: int
    loss: float
    wsr: float
    violations: Dict[str, float]
    dual_norms: Dict[str, float]


class TrainReport(_ArrayModel):
    """Per-epoch training curves plus the final multipliers."""
    records: List[EpochRecord] = []
    final_duals: Optional[DualMultipliers] = None


class ScaConfig(BaseModel):
    """Settings of the successive convex approximation solver."""
    dual_step: float = Field(default=1.0, gt=0)  # epsilon step for theta and delta
    tolerance: float = Field(default=1e-5, gt=0)  # relative change stopping rule
    max_inner: int = Field(default=50, ge=1)  # surrogate rebuilds per multiplier value
    max_outer: int = Field(default=100, ge=1)  # multiplier updates
    al_max_iter: int = Field(default=40, ge=1)  # augmented Lagrangian rounds
    pg_max_iter: int = Field(default=400, ge=1)  # projected gradient steps per round
    pg_tolerance: float = Field(default=1e-6, gt=0)
    feasibility_tolerance: float = Field(default=1e-6, gt=0)
    max_repair_violation: float = Field(default=1e-2, gt=0)
    initial_penalty: float = Field(default=10.0, gt=0)
    binary_tolerance: float = Field(default=1e-3, gt=0)  # mean x - x^2 accepted as binary at exit
    round_threshold: float = Field(default=0.5, gt=0, le=1)


class ScaTraceRecord(BaseModel):
    """One inner iteration of the SCA solver."""
    iteration: int
    outer: int
    surrogate: float  # varsigma
    objective: float  # eta of the current outer round
    theta: float
    delta: float
    max_violation: float


class StorageMode(str, Enum):
    SEEDS = "seeds"
    TENSORS = "tensors"


class DatasetHeader(BaseModel):
    """JSON header of a dataset file."""
    format_version: int = 1
    sim_config: SimConfig
    master_seed: int = Field(ge=0, lt=2**64)
    sample_count: int = Field(ge=1)
    storage_mode: StorageMode = StorageMode.SEEDS


class Dataset(_ArrayModel):
    """Loaded samples sharing one scenario configuration."""
    header: DatasetHeader
    stream_ids: List[int]
    rho: np.ndarray  # (S, N, Nr, N, Nt)
    kappa: np.ndarray  # (S, N, N, Nr * Nt)

    @property
    def config(self) -> SimConfig:
        return self.header.sim_config

    def __len__(self) -> int:
        return len(self.stream_ids)


class MetricsRow(BaseModel):
    """Per-sample evaluation result of one method."""
    sample_id: int
    method: str
    wsr: float = Field(ge=0)
    active_pairs: int
    runtime_ms: float
    ra: Optional[float] = None
    status: str = "ok"


class RatioReport(BaseModel):
    """Per-sample and aggregate weighted sum rate ratios."""
    sample_ids: List[int]
    ratios: List[Optional[float]]  # None when flagged (zero denominator)
    flagged: List[int]
    mean: float
    threshold: float
    fraction_above: float


class GradCheckReport(BaseModel):
    """Finite-difference comparison against the analytic gradient."""
    max_rel_err: float
    mean_rel_err: float
    checked: int
    excluded: int  # perturbation crossed a kink
    unverifiable: int = 0  # gradient below the resolution of the difference quotient
    step: float


class ScaState(_ArrayModel):
    """Iterate of the SCA solver; w_bar[m, n, r, l] relaxes phi[m, r] * psi[n, l]."""
    phi: np.ndarray  # (N, Nr)
    psi: np.ndarray  # (N, Nt)
    w_bar: np.ndarray  # (N, N, Nr, Nt)
    theta: float = 0.0
    delta: float = 0.0
    inner: int = 0
    outer: int = 0
    surrogate: Optional[float] = None
    al_multipliers: Dict[str, np.ndarray] = {}  # warm start of the subproblem solver


class ScaSurrogates(_ArrayModel):
    """First-order expansions anchored at (phi0, psi0, w_bar0)."""
    phi0: np.ndarray
    psi0: np.ndarray
    theta: float
    delta: float
    h1_0: float
    h2_0: float
    h1_grad: np.ndarray  # (N, Nt)
    h2_grad: np.ndarray  # (N, Nr)
    q0: np.ndarray  # (N, Nr) log2(I0 + sigma^2)
    interference0: np.ndarray  # (N, Nr)
    denom0: np.ndarray  # (N, Nr) I0 + sigma^2
