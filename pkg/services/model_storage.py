"""
Model Storage: GBLinks weight files.

JSON header line {version, Nt, Nr, K, f, widths} followed by every weight
matrix then every bias vector, MLP by MLP and layer by layer, row-major
little-endian float64.
"""

import json
from pathlib import Path
from typing import Union

import numpy as np

from src.models import Activation, LayerParams, MlpParams, ModelParams
from services.dataset_storage import FileFormatError
from services.gblinks import flatten_params

MODEL_FORMAT_VERSION = 1
_FLOAT_DTYPE = np.dtype("<f8")
_MLP_NAMES = ("mlp1", "mlp_tx", "mlp_rx")
_OUTPUT_ACTIVATION = {"mlp1": Activation.RELU, "mlp_tx": Activation.PROJECT, "mlp_rx": Activation.PROJECT}


def model_header(params: ModelParams) -> dict:
    first = params.layers[0]
    return {
        "version": MODEL_FORMAT_VERSION,
        "Nt": params.n_tx,
        "Nr": params.n_rx,
        "K": params.n_layers,
        "f": params.agg_width,
        "widths": {name: getattr(first, name).widths for name in _MLP_NAMES},
    }


def save_model(params: ModelParams, path: Union[str, Path]) -> str:
    """
    Write a model file.

    Returns:
        Absolute path string of the written file
    """
    file_path = Path(path)
    header = json.dumps(model_header(params)).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype=_FLOAT_DTYPE).tobytes() for a in flatten_params(params))
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "wb") as f:
            f.write(header + b"\n" + body)
    except OSError as e:
        raise OSError(f"Failed to write model {file_path}: {e}")
    return str(file_path.absolute())


def load_model(path: Union[str, Path]) -> ModelParams:
    """
    Read a model file.

    Raises:
        OSError: If the file cannot be read
        FileFormatError: If header and body disagree
    """
    file_path = Path(path)
    try:
        raw = file_path.read_bytes()
    except OSError as e:
        raise OSError(f"Failed to read model {file_path}: {e}")
    newline = raw.find(b"\n")
    if newline < 0:
        raise FileFormatError(f"Model {file_path} has no header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        widths = {name: [int(w) for w in header["widths"][name]] for name in _MLP_NAMES}
        n_layers = int(header["K"])
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"Invalid model header in {file_path}: {e}")
    if header.get("version") != MODEL_FORMAT_VERSION:
        raise FileFormatError(f"Unsupported model version {header.get('version')} in {file_path}")

    values = np.frombuffer(raw[newline + 1:], dtype=_FLOAT_DTYPE)
    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        if offset + size > values.size:
            raise FileFormatError(f"Model {file_path} body is shorter than its header declares")
        chunk = values[offset:offset + size].reshape(shape).copy()
        offset += size
        return chunk

    layers = []
    for _ in range(n_layers):
        mlps = {}
        for name in _MLP_NAMES:
            w = widths[name]
            weights = [take((a, b)) for a, b in zip(w[:-1], w[1:])]
            biases = [take((b,)) for b in w[1:]]
            mlps[name] = MlpParams(weights=weights, biases=biases, output_activation=_OUTPUT_ACTIVATION[name])
        layers.append(LayerParams(**mlps))
    if offset != values.size:
        raise FileFormatError(f"Model {file_path} body is longer than its header declares")
    return ModelParams(n_tx=int(header["Nt"]), n_rx=int(header["Nr"]), agg_width=int(header["f"]), layers=layers)
