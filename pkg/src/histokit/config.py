"""Project configuration: an INI document with [paths], [clustering], [survival], [serve].

Flags given on the command line override file values. The parsed config
round-trips losslessly through ``to_ini``/``from_ini``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import HistokitError


@dataclass
class PathsConfig:
    embeddings: str = ""
    manifest: str = ""
    clinical: str = ""
    tree: str = ""
    output_dir: str = "out"


@dataclass
class ClusteringConfig:
    k: int = 32
    batch_size: int = 1024
    max_iters: int = 100
    seed: int = 0
    normalize: bool = False


@dataclass
class SurvivalConfig:
    penalizer: float = 0.001
    l1_ratio: float = 0.5
    horizon_years: float = 15.0
    test_fraction: float = 0.25
    n_splits: int = 1000
    n_selected: int = 6
    importance_fits: int = 50
    covariates: str = "capra_s"
    seed: int = 0


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    tile_root: str = "."
    ui_root: str = ""
    sample_size: int = 16
    labels: str = "cancer,benign epithelium,stroma,other"  # comma-separated vocabulary

    def label_vocabulary(self) -> tuple[str, ...]:
        return tuple(v.strip() for v in self.labels.split(",") if v.strip())


@dataclass
class ProjectConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    survival: SurvivalConfig = field(default_factory=SurvivalConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)

    _SECTIONS = ("paths", "clustering", "survival", "serve")

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section in self._SECTIONS:
            block = getattr(self, section)
            parser[section] = {
                f.name: _render(getattr(block, f.name)) for f in fields(block)
            }
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    @classmethod
    def from_ini(cls, text: str, check_paths: bool = True) -> "ProjectConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise HistokitError(f"bad config: {exc}") from None
        config = cls()
        for section in cls._SECTIONS:
            if not parser.has_section(section):
                continue
            block = getattr(config, section)
            known = {f.name: f for f in fields(block)}
            for key, raw in parser.items(section):
                if key not in known:
                    raise HistokitError(f"unknown config key [{section}] {key}")
                setattr(block, key, _parse(raw, type(getattr(block, key)), section, key))
        if check_paths:
            config.check_input_paths()
        return config

    @classmethod
    def load(cls, path: str | Path, check_paths: bool = True) -> "ProjectConfig":
        path = Path(path)
        if not path.exists():
            raise HistokitError(f"config file not found: {path}")
        return cls.from_ini(path.read_text(encoding="utf-8"), check_paths=check_paths)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    def check_input_paths(self) -> None:
        """Input files named in [paths] must exist; outputs (tree, output_dir) may not yet."""
        for key in ("embeddings", "manifest", "clinical"):
            value = getattr(self.paths, key)
            if value and not Path(value).exists():
                raise HistokitError(f"[paths] {key} does not exist: {value}")

    def require(self, *keys: str) -> None:
        for key in keys:
            if not getattr(self.paths, key):
                raise HistokitError(f"config is missing required [paths] {key}")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(raw: str, kind, section: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise HistokitError(f"bad config value [{section}] {key} = {raw!r} ({exc})") from None
