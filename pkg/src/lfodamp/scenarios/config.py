"""Scenario configuration: dataclass defaults plus TOML loading.

Every section of a config file maps onto one dataclass below; a key that
has no matching field is rejected.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..gfl import PodParams, PpcParams
from ..gfm import GfmParams
from ..machines import ExciterParams, GovernorParams, PssParams, SyncMachineParams

STRATEGIES = ("no_pss", "pss", "gfl_pod_p", "gfl_pod_q", "gfm_vsm", "gfm_droop", "regfm")
GFL_STRATEGIES = {"gfl_pod_p": "p", "gfl_pod_q": "q"}
GFM_STRATEGIES = {"gfm_vsm": "vsm", "gfm_droop": "droop", "regfm": "regfm"}
DEFAULT_POD_INPUT = {"p": "branch_p", "q": "branch_q"}

#: report labels in the style of the comparison table
LABELS = {"no_pss": "NO_PSS", "pss": "PSS", "gfl_pod_p": "GFL_POD_P", "gfl_pod_q": "GFL_POD_Q",
          "gfm_vsm": "GFM_VSM", "gfm_droop": "GFM_Droop", "regfm": "REGFM"}

DISTURBANCES = ("fault", "load_step", "none")


class ConfigError(ValueError):
    pass


@dataclass
class Disturbance:
    kind: str = "fault"
    bus: int = 2
    t_on: float = 1.0
    duration: float = 0.015
    fault_admittance: float = 1e5
    delta_mw: float = -150.0


@dataclass
class NetworkData:
    """Two-area network data on the 100 MVA system base."""

    base_mva: float = 100.0
    f_nom: float = 60.0
    base_kv: float = 230.0
    # line constants per km (Kundur's two-area values)
    r_km: float = 0.0001
    x_km: float = 0.001
    b_km: float = 0.00175
    tie_km: float = 40.0
    x_tr: float = 0.15           # step-up transformers, on device base
    x_tr_cig: float = 0.15
    sg1_mva: float = 1100.0
    sg2_mva: float = 1450.0
    cig_mva: float = 150.0
    sg1_mw: float = 925.0
    sg1_mw_no_cig: float = 1000.0
    sg2_mw: float = 1300.0
    cig_mw: float = 75.0
    load1_mw: float = 1000.0
    load1_mvar: float = 100.0
    load2_mw: float = 1300.0
    load2_mvar: float = 100.0
    v_sg1: float = 1.0
    v_sg2: float = 1.0
    v_low: float = 0.2


@dataclass
class Analysis:
    delay: float = 0.5           # window start after clearing / step
    length: float = 10.0
    order: int = 8
    prony_rate: float = 10.0      # Hz, samples kept for the fit
    f_lo: float = 0.2
    f_hi: float = 2.0
    settle_band: float = 0.02


@dataclass
class ScenarioConfig:
    strategy: str = "no_pss"
    tie_scale: float = 1.0
    dt: float = 1.0 / 240.0
    t_end: float = 15.0
    decimate: int = 1            # CSV row every n steps
    disturbance: Disturbance = field(default_factory=Disturbance)
    network: NetworkData = field(default_factory=NetworkData)
    analysis: Analysis = field(default_factory=Analysis)
    # aggregated plant: a little speed damping lumps turbine and load effects
    machine: SyncMachineParams = field(default_factory=lambda: SyncMachineParams(D=1.5))
    exciter: ExciterParams = field(default_factory=ExciterParams)
    governor: GovernorParams = field(default_factory=GovernorParams)
    pss: PssParams = field(default_factory=PssParams)
    ppc: PpcParams = field(default_factory=PpcParams)
    pod: PodParams = field(default_factory=PodParams)
    gfm: GfmParams = field(default_factory=GfmParams)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not self.tie_scale > 0:
            raise ConfigError("tie_scale must be > 0")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.decimate < 1:
            raise ConfigError("decimate must be >= 1")
        d = self.disturbance
        if d.kind not in DISTURBANCES:
            raise ConfigError(f"disturbance.kind must be one of {DISTURBANCES}")
        end = d.t_on + (d.duration if d.kind == "fault" else 0.0)
        if d.kind != "none" and not end < self.t_end:
            raise ConfigError("disturbance must end before t_end")
        if d.kind == "fault" and not d.duration > 0:
            raise ConfigError("fault duration must be > 0")

    @property
    def label(self) -> str:
        return LABELS[self.strategy]

    @property
    def has_cig(self) -> bool:
        return self.strategy not in ("no_pss", "pss")

    def pod_params(self) -> PodParams | None:
        """POD settings for a grid-following strategy, mode taken from the strategy."""
        if self.strategy not in GFL_STRATEGIES:
            return None
        mode = GFL_STRATEGIES[self.strategy]
        pod = self.pod
        if pod.mode == "off":
            return pod
        if pod.mode != mode:
            raise ConfigError(f"pod.mode {pod.mode!r} contradicts strategy {self.strategy!r}")
        return pod

    def gfm_params(self) -> GfmParams | None:
        if self.strategy not in GFM_STRATEGIES:
            return None
        return dataclasses.replace(self.gfm, variant=GFM_STRATEGIES[self.strategy])

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with top-level fields replaced; strategy changes re-derive POD defaults."""
        cfg = dataclasses.replace(self, **changes)
        if "strategy" in changes and "pod" not in changes:
            cfg.pod = default_pod(cfg.strategy, self.pod)
        return cfg


#: POD tuning per mode. Tie-line P lags the relative rotor speed by about
#: 90 degrees near 0.9 Hz, so POD-P lags its input by about as much; POD-Q
#: lags tie-line Q by about 45 degrees. POD-Q gains above about 2.5 push a
#: slow 0.47 Hz mode unstable until the output limit holds a limit cycle.
POD_DEFAULTS = {
    "p": dict(Kw=0.3, Tw=5.0, T1=0.05, T2=0.3, T3=0.05, T4=0.3, out_min=-0.1, out_max=0.1),
    "q": dict(Kw=2.5, Tw=5.0, T1=0.05, T2=0.14, T3=0.05, T4=0.14, out_min=-0.1, out_max=0.1),
}


def default_pod(strategy: str, base: PodParams | None = None) -> PodParams:
    mode = GFL_STRATEGIES.get(strategy)
    if mode is None:
        return base if base is not None else PodParams()
    return PodParams(mode=mode, input=DEFAULT_POD_INPUT[mode], **POD_DEFAULTS[mode])


def default_config(strategy: str = "no_pss", **changes) -> ScenarioConfig:
    return ScenarioConfig(strategy=strategy, pod=default_pod(strategy), **changes)


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    return data


def from_dict(data: dict[str, Any]) -> ScenarioConfig:
    """Build a config from nested mappings (the parsed TOML document)."""
    top = dict(data)
    strategy = top.get("strategy", "no_pss")
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    base = default_config(strategy)
    sections = {f.name: f for f in dataclasses.fields(ScenarioConfig)
                if dataclasses.is_dataclass(getattr(base, f.name))}
    _build(ScenarioConfig, top, "top level")
    kwargs = {}
    for key, value in top.items():
        if key in sections:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            current = getattr(base, key)
            _build(type(current), value, key)
            try:
                kwargs[key] = dataclasses.replace(current, **value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{key}]: {exc}") from exc
        else:
            kwargs[key] = value
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)
