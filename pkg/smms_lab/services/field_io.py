"""Field references, background descriptors and CSV/JSON artifacts."""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import numpy as np
import pandas as pd
import structlog

from smms_lab.exceptions import InvalidInputError
from smms_lab.models import FieldRef, NodalField, ProfileRef, SmmsDescriptor
from smms_lab.services import domain_grid, smms_core
from smms_lab.services.domain_grid import DiscreteDomain
from smms_lab.services.smms_core import SmmsBackground

logger = structlog.get_logger()

# Shortest round-trip representation of a float64
FLOAT_FORMAT = "%.17g"


def _profile_values(ref: ProfileRef, coords: np.ndarray) -> NodalField:
    if ref.axis >= coords.shape[1]:
        raise InvalidInputError(
            "Profile axis out of range", axis=ref.axis, dimensions=coords.shape[1]
        )
    if ref.profile == "cosine":
        return np.asarray(
            ref.offset + ref.amplitude * np.cos(ref.wavenumber * coords[:, ref.axis]),
            dtype=np.float64,
        )
    coefficients = list(ref.coefficients) + [0.0] * (coords.shape[1] - len(ref.coefficients))
    if len(coefficients) > coords.shape[1]:
        raise InvalidInputError(
            "Too many profile coefficients", given=len(ref.coefficients), axes=coords.shape[1]
        )
    power = 1 if ref.profile == "linear" else 2
    values = np.full(coords.shape[0], ref.offset, dtype=np.float64)
    for axis, coefficient in enumerate(coefficients):
        values += coefficient * coords[:, axis] ** power
    return values


def _read_csv_field(path: Path, size: int) -> NodalField:
    if not path.is_file():
        raise InvalidInputError("Field file not found", path=str(path))
    frame = pd.read_csv(path)
    column = "value" if "value" in frame.columns else frame.columns[-1]
    values = frame[column].to_numpy(dtype=np.float64)
    if values.size != size:
        raise InvalidInputError(
            "Field file has the wrong number of rows", path=str(path), rows=values.size, size=size
        )
    return values


def resolve_field(
    ref: FieldRef,
    domain: DiscreteDomain,
    boundary: bool = False,
    base_dir: Optional[Path] = None,
) -> NodalField:
    """Sample a field reference on all nodes, or on the boundary nodes when ``boundary``.

    Lists and CSV files must already have one value per target node; a CSV uses its ``value``
    column (or its last column) and relative paths resolve against ``base_dir``.
    """
    size = domain.boundary_count if boundary else domain.node_count
    if isinstance(ref, ProfileRef):
        coords = domain.coords[domain.boundary_index] if boundary else domain.coords
        values = _profile_values(ref, coords)
    elif isinstance(ref, str):
        path = Path(ref)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        values = _read_csv_field(path, size)
    elif isinstance(ref, list):
        values = np.asarray(ref, dtype=np.float64)
        if values.shape != (size,):
            raise InvalidInputError("Inline field has the wrong length", got=values.size, size=size)
    else:
        values = np.full(size, float(ref))
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Field has non-finite values")
    return values


def background_from_descriptor(
    descriptor: SmmsDescriptor, base_dir: Optional[Path] = None
) -> SmmsBackground:
    """Build the domain and the background ``(phi0, R_g0, H_g0)`` of a descriptor."""
    domain = domain_grid.build_domain(descriptor.domain.model_dump(mode="json"))
    phi0 = resolve_field(descriptor.phi0, domain, base_dir=base_dir)
    r_g0 = (
        None if descriptor.R_g0 is None else resolve_field(descriptor.R_g0, domain, False, base_dir)
    )
    h_g0 = (
        None if descriptor.H_g0 is None else resolve_field(descriptor.H_g0, domain, True, base_dir)
    )
    return smms_core.make_background(domain, phi0=phi0, R_g0=r_g0, H_g0=h_g0)


def node_frame(
    domain: DiscreteDomain, columns: Mapping[str, Iterable[float]], boundary: bool = False
) -> pd.DataFrame:
    """Frame with a ``node`` index, the coordinates and ``columns`` in the given order."""
    index = domain.boundary_index if boundary else np.arange(domain.node_count)
    data: Dict[str, Any] = {"node": index}
    for axis_index, axis in enumerate(domain.axes):
        data[axis.name] = domain.coords[index, axis_index]
    for name, values in columns.items():
        array = np.asarray(list(values), dtype=np.float64)
        if array.shape != (index.size,):
            raise InvalidInputError(f"Column {name} has the wrong length", size=index.size)
        data[name] = array
    return pd.DataFrame(data)


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("artifact_written", path=str(path), rows=len(frame))
    return path


def write_field_csv(
    path: Path,
    domain: DiscreteDomain,
    columns: Mapping[str, Iterable[float]],
    boundary: bool = False,
) -> Path:
    return write_frame(node_frame(domain, columns, boundary), path)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)
    path.write_text(text + "\n", encoding="utf-8")
    logger.debug("artifact_written", path=str(path))
    return path


def output_names(paths: List[Path], root: Path) -> List[str]:
    """Artifact paths relative to the output directory, sorted."""
    return sorted(str(path.relative_to(root)) for path in paths)
