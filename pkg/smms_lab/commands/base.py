"""Execution context shared by the subcommand handlers."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional

import numpy as np
import pandas as pd

from smms_lab.models import ExperimentConfig, StrictModel
from smms_lab.services import field_io
from smms_lab.services.smms_core import SmmsBackground


@dataclass
class CommandContext:
    """One command invocation: validated inputs, the background and the artifacts written."""

    config: ExperimentConfig
    params: StrictModel
    bg: SmmsBackground
    out_dir: Path
    seed: int
    base_dir: Optional[Path] = None
    outputs: List[Path] = field(default_factory=list)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def resolve(self, ref: Any, boundary: bool = False) -> np.ndarray:
        return field_io.resolve_field(ref, self.bg.domain, boundary, self.base_dir)

    def write_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        return self._record(field_io.write_json(self.out_dir / name, payload))

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        return self._record(field_io.write_frame(frame, self.out_dir / name))

    def write_fields(
        self, name: str, columns: Mapping[str, Iterable[float]], boundary: bool = False
    ) -> Path:
        path = field_io.write_field_csv(self.out_dir / name, self.bg.domain, columns, boundary)
        return self._record(path)

    def _record(self, path: Path) -> Path:
        if path not in self.outputs:
            self.outputs.append(path)
        return path


# Handlers return the summary stored in the manifest
Handler = Callable[[CommandContext], Dict[str, Any]]
