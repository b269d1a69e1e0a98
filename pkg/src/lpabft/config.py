"""Campaign configuration files (TOML) and shape lists."""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .faultlab import CampaignConfig, EbWorkload, FaultSpec, GemmWorkload, default_seed
from .gemm import BlockLayout


class ConfigError(ValueError):
    pass


class ConfigNotFound(ConfigError):
    pass


class ConfigParseError(ConfigError):
    pass


def read_shapes(path) -> list[tuple[int, int, int]]:
    """Shape file: one ``m n k`` triple per line (spaces or commas), ``#`` comments."""
    shapes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].replace(",", " ").split()
        if not text:
            continue
        try:
            m, n, k = (int(x) for x in text)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: expected 'm n k', got {line.strip()!r}") from None
        if min(m, n, k) < 1:
            raise ConfigError(f"{path}:{lineno}: dimensions must be positive")
        shapes.append((m, n, k))
    if not shapes:
        raise ConfigError(f"{path}: no shapes")
    return shapes


def builtin_shapes(name: str) -> list[tuple[int, int, int]]:
    """Shipped shape sets: ``bench`` (DLRM-like sizes) and ``desk`` (campaign-sized)."""
    ref = resources.files("lpabft") / "data" / f"shapes_{name}.txt"
    with resources.as_file(ref) as p:
        return read_shapes(p)


_FAULT_KEYS = {"target", "model", "bit_range", "before_encoding"}
_GEMM_KEYS = {"trials", "shapes", "shapes_file", "shape_set", "layout"}
_EB_KEYS = {"rows", "dims", "pooling", "batch", "trials", "exact", "weighted"}


def _check_keys(section: dict, allowed: set, name: str):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")


def parse_config(doc: dict, base_dir: Path = Path(".")) -> CampaignConfig:
    _check_keys(doc, {"seed", "workers", "fault", "gemm", "eb"}, "top level")
    seed = int(doc.get("seed", default_seed()))
    fault = doc.get("fault", {})
    _check_keys(fault, _FAULT_KEYS, "fault")
    has_gemm, has_eb = "gemm" in doc, "eb" in doc
    if has_gemm == has_eb:
        raise ConfigError("config needs exactly one of [gemm] or [eb]")
    try:
        spec = FaultSpec(
            target=fault.get("target", "none"),
            model=fault.get("model", "single_bit_flip"),
            bitRange=fault.get("bit_range", "all"),
            seed=seed,
            beforeEncoding=bool(fault.get("before_encoding", False)),
        )
        if has_gemm:
            g = doc["gemm"]
            _check_keys(g, _GEMM_KEYS, "gemm")
            sources = [key for key in ("shapes", "shapes_file", "shape_set") if key in g]
            if len(sources) != 1:
                raise ConfigError("[gemm] needs exactly one of shapes, shapes_file, shape_set")
            if "shapes" in g:
                shapes = g["shapes"]
            elif "shapes_file" in g:
                shapes = read_shapes(base_dir / g["shapes_file"])
            else:
                shapes = builtin_shapes(g["shape_set"])
            layout = BlockLayout(*g.get("layout", (BlockLayout.rowBlock, BlockLayout.colBlock)))
            workload = GemmWorkload(shapes, int(g.get("trials", 100)), layout)
        else:
            e = doc["eb"]
            _check_keys(e, _EB_KEYS, "eb")
            workload = EbWorkload(**{k: e[k] for k in e})
        return CampaignConfig(workload, spec, int(doc.get("workers", 1)))
    except ConfigError:
        raise
    except (ValueError, TypeError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> CampaignConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(f"config not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"config parse error in {path}: {exc}") from None
    return parse_config(doc, path.parent)
