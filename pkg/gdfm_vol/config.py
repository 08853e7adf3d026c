"""
Configuration manager for gdfm-vol
Loads JSON pipeline and simulation configurations, applies CLI overrides
and checks them against the data they will be used on
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import ValidationError

from .console import console
from .errors import ConfigError
from .panel_io import Panel, PipelineConfig, read_json, write_json
from .simulate import DgpConfig

TEMPLATE_SUFFIX = "_config"
DEFAULT_COVERAGE = {"eval_points": 100, "window": None}


def _format_validation(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


class ConfigManager:
    """Named configuration templates plus validation of ad-hoc config files"""

    def __init__(self, config_dir: Union[str, Path] = "configs", quiet: bool = True):
        self.config_dir = Path(config_dir)
        self.quiet = quiet
        self.templates: Dict[str, Dict[str, Any]] = {}
        self.load_templates()

    def _say(self, message: str) -> None:
        if not self.quiet:
            console.print(message)

    def load_templates(self) -> None:
        """Load every *_config.json in the config directory"""
        if not self.config_dir.is_dir():
            return
        for template_file in sorted(self.config_dir.glob(f"*{TEMPLATE_SUFFIX}.json")):
            name = template_file.stem[: -len(TEMPLATE_SUFFIX)]
            try:
                with template_file.open(encoding="utf-8") as f:
                    self.templates[name] = json.load(f)
                self._say(f"[green]✓[/green] Loaded template: {name}")
            except (OSError, json.JSONDecodeError) as e:
                self._say(f"[red]✗[/red] Error loading template {name}: {e}")

    def get_available_templates(self) -> List[str]:
        return list(self.templates)

    def describe_templates(self) -> List[Dict[str, Any]]:
        """One summary row per template: name, kind and the headline settings"""
        rows = []
        for name, data in self.templates.items():
            pipeline = data.get("pipeline", data)
            dgp = data.get("dgp")
            rows.append(
                {
                    "name": name,
                    "kind": "simulation" if dgp else "pipeline",
                    "q/Q": f"{pipeline.get('q', 1)}/{pipeline.get('Q', 1)}",
                    "B_T/M_T": f"{pipeline.get('B_T', 2)}/{pipeline.get('M_T', 17)}",
                    "kappa_T": pipeline.get("kappa_T", 0.25),
                    "panel": f"n={dgp.get('n')}, T={dgp.get('T')}" if dgp else "",
                }
            )
        return rows

    def load(self, source: Union[str, Path, None]) -> Dict[str, Any]:
        """Raw config dict from a file path or a template name; {} for None"""
        if source is None:
            return {}
        path = Path(source)
        if path.suffix == ".json" or path.exists():
            return read_json(path)
        if str(source) in self.templates:
            return json.loads(json.dumps(self.templates[str(source)]))
        raise ConfigError(
            f"Config '{source}' is neither a file nor a known template "
            f"(available: {', '.join(self.get_available_templates()) or 'none'})"
        )

    def pipeline_config(self, data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
        """PipelineConfig from a flat dict or the 'pipeline' section, CLI overrides on top"""
        section = dict(data.get("pipeline", data)) if data else {}
        for key in ("comment", "dgp", "coverage", "metrics"):
            section.pop(key, None)
        section.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return PipelineConfig(**section)
        except ValidationError as e:
            raise ConfigError(f"Invalid pipeline configuration: {_format_validation(e)}") from None

    def simulation_config(
        self, data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None
    ) -> Tuple[DgpConfig, PipelineConfig, Dict[str, Any], List[str]]:
        """(dgp, pipeline, coverage settings, metrics) from a simulation config"""
        if "dgp" not in data:
            raise ConfigError("Simulation config needs a 'dgp' section")
        dgp_section = dict(data["dgp"])
        dgp_keys = set(DgpConfig.model_fields)
        pipeline_overrides = {}
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key in dgp_keys:
                dgp_section[key] = value
            else:
                pipeline_overrides[key] = value
        try:
            dgp = DgpConfig(**dgp_section)
        except ValidationError as e:
            raise ConfigError(f"Invalid dgp configuration: {_format_validation(e)}") from None
        pipeline = self.pipeline_config({"q": dgp.q, "Q": dgp.Q, **data.get("pipeline", {})}, pipeline_overrides)
        coverage = {**DEFAULT_COVERAGE, **data.get("coverage", {})}
        metrics = list(data.get("metrics", ["errors"]))
        return dgp, pipeline, coverage, metrics

    def validate_for_panel(self, config: PipelineConfig, panel: Panel) -> bool:
        """Check factor counts and bandwidths against the panel; warnings are logged"""
        if config.q + 1 > panel.n or config.Q + 1 > panel.n:
            self._say(f"[red]✗[/red] q={config.q}, Q={config.Q} need more than {panel.n} series")
            raise ConfigError(f"q={config.q} and Q={config.Q} must be smaller than n={panel.n}")
        warnings = config.validate_for_sample(panel.T)
        if not warnings:
            self._say("[green]✓[/green] Configuration validation passed")
        return not warnings

    def create_configuration(
        self, template_name: str, overrides: Dict[str, Any], output_path: Optional[Union[str, Path]] = None
    ) -> Dict[str, Any]:
        """Template with pipeline overrides applied, validated and optionally saved"""
        if template_name not in self.templates:
            raise ConfigError(f"Template '{template_name}' not found")
        data = json.loads(json.dumps(self.templates[template_name]))
        if "pipeline" in data or "dgp" in data:
            data["pipeline"] = self.pipeline_config(data, overrides).model_dump(mode="json")
        else:
            data = self.pipeline_config(data, overrides).model_dump(mode="json")
        if output_path:
            write_json(data, output_path)
            self._say(f"[green]✓[/green] Configuration saved to: {output_path}")
        return data
