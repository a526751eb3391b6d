"""
Dataset Storage: generation and persistence of scenario samples.

A dataset file is one JSON header line followed by a binary body. In seeds
mode the body holds one little-endian uint64 stream id per sample and the
tensors are regenerated on load; in tensors mode it holds, per sample, the
gain tensor (m, r, n, l) then the feature tensor (i, j, k) as little-endian
float64.
"""

import json
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.models import (
    Dataset,
    DatasetHeader,
    NetworkTopology,
    SimConfig,
    StorageMode,
)
from services.channel import effective_gains, generate_sample
from services.graph_features import build_features
from services.rng import seed_from

logger = logging.getLogger(__name__)

_SEED_DTYPE = np.dtype("<u8")
_FLOAT_DTYPE = np.dtype("<f8")


class FileFormatError(ValueError):
    """Raised when a dataset or model file is truncated, corrupt or of an unsupported version."""


def generate_one(config: SimConfig, master_seed: int,
                 stream_id: int) -> Tuple[np.ndarray, np.ndarray, NetworkTopology]:
    """
    Regenerate one sample from its stream.

    Returns:
        (rho (N, Nr, N, Nt), kappa (N, N, Nr * Nt), topology)
    """
    rng = seed_from(master_seed, stream_id)
    topology, channels, codebook = generate_sample(config, rng)
    gains = effective_gains(channels, codebook)
    features = build_features(channels, codebook)
    return gains.rho, features.kappa, topology


def _materialize(header: DatasetHeader, stream_ids: List[int]) -> Dataset:
    cfg = header.sim_config
    rho = np.zeros((len(stream_ids), cfg.n_pairs, cfg.n_rx, cfg.n_pairs, cfg.n_tx))
    kappa = np.zeros((len(stream_ids), cfg.n_pairs, cfg.n_pairs, cfg.feature_dim))
    for i, stream_id in enumerate(stream_ids):
        rho[i], kappa[i], _ = generate_one(cfg, header.master_seed, stream_id)
    return Dataset(header=header, stream_ids=stream_ids, rho=rho, kappa=kappa)


def gen_dataset(config: SimConfig, count: int, master_seed: int,
                mode: StorageMode = StorageMode.SEEDS,
                path: Union[str, Path, None] = None) -> Dataset:
    """
    Generate ``count`` samples; sample i uses stream id i.

    Args:
        config: Scenario configuration
        count: Number of samples (>= 1)
        master_seed: 64-bit dataset seed
        mode: Body layout when written
        path: Optional output file

    Returns:
        The generated Dataset

    Raises:
        ValueError: If count < 1
        OSError: If the file cannot be written
    """
    if count < 1:
        raise ValueError(f"Sample count must be >= 1, got {count}")
    header = DatasetHeader(sim_config=config, master_seed=master_seed, sample_count=count, storage_mode=mode)
    dataset = _materialize(header, list(range(count)))
    logger.info(f"Generated {count} samples (N={config.n_pairs}, Nt={config.n_tx}, Nr={config.n_rx})")
    if path is not None:
        save_dataset(dataset, path)
    return dataset


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> str:
    """
    Write a dataset file.

    Returns:
        Absolute path string of the written file
    """
    file_path = Path(path)
    header = dataset.header.model_dump_json().encode("utf-8")
    if dataset.header.storage_mode == StorageMode.SEEDS:
        body = np.asarray(dataset.stream_ids, dtype=_SEED_DTYPE).tobytes()
    else:
        parts = []
        for i in range(len(dataset)):
            parts.append(np.ascontiguousarray(dataset.rho[i], dtype=_FLOAT_DTYPE).tobytes())
            parts.append(np.ascontiguousarray(dataset.kappa[i], dtype=_FLOAT_DTYPE).tobytes())
        body = b"".join(parts)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "wb") as f:
            f.write(header + b"\n" + body)
    except OSError as e:
        raise OSError(f"Failed to write dataset {file_path}: {e}")
    return str(file_path.absolute())


def load_dataset(path: Union[str, Path]) -> Dataset:
    """
    Read a dataset file, regenerating tensors in seeds mode.

    Raises:
        OSError: If the file cannot be read
        FileFormatError: If the header or body is malformed
    """
    file_path = Path(path)
    try:
        raw = file_path.read_bytes()
    except OSError as e:
        raise OSError(f"Failed to read dataset {file_path}: {e}")
    newline = raw.find(b"\n")
    if newline < 0:
        raise FileFormatError(f"Dataset {file_path} has no header line")
    try:
        header = DatasetHeader.model_validate(json.loads(raw[:newline].decode("utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as e:
        raise FileFormatError(f"Invalid dataset header in {file_path}: {e}")
    body = raw[newline + 1:]
    cfg, count = header.sim_config, header.sample_count

    if header.storage_mode == StorageMode.SEEDS:
        if len(body) != count * _SEED_DTYPE.itemsize:
            raise FileFormatError(f"Dataset {file_path}: expected {count} stream ids, body has {len(body)} bytes")
        stream_ids = [int(s) for s in np.frombuffer(body, dtype=_SEED_DTYPE)]
        return _materialize(header, stream_ids)

    rho_size = cfg.n_pairs * cfg.n_rx * cfg.n_pairs * cfg.n_tx
    kappa_size = cfg.n_pairs * cfg.n_pairs * cfg.feature_dim
    if len(body) != count * (rho_size + kappa_size) * _FLOAT_DTYPE.itemsize:
        raise FileFormatError(f"Dataset {file_path}: body size does not match {count} tensor samples")
    values = np.frombuffer(body, dtype=_FLOAT_DTYPE)
    records = values.reshape(count, rho_size + kappa_size)
    rho = records[:, :rho_size].reshape(count, cfg.n_pairs, cfg.n_rx, cfg.n_pairs, cfg.n_tx).copy()
    kappa = records[:, rho_size:].reshape(count, cfg.n_pairs, cfg.n_pairs, cfg.feature_dim).copy()
    return Dataset(header=header, stream_ids=list(range(count)), rho=rho, kappa=kappa)
