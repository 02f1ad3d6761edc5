"""Fitted parameter sets: shared clinical rates plus per-region map and initial state."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .epimodel import GlobalParams, RegionInit
from .errors import InputError
from .mobility import MobilityMapParams


@dataclass(frozen=True)
class RegionParams:
    mobility_map: MobilityMapParams
    init: RegionInit


@dataclass(frozen=True)
class ParamSet:
    global_params: GlobalParams
    per_region: dict[str, RegionParams]

    def region(self, region_id: str) -> RegionParams:
        try:
            return self.per_region[region_id]
        except KeyError:
            raise InputError(f"no parameters for region {region_id!r}") from None

    def to_json(self) -> dict:
        return {
            "global": self.global_params.to_json(),
            "regions": {
                rid: {"mobility_map": rp.mobility_map.to_json(), "init": rp.init.to_json()}
                for rid, rp in sorted(self.per_region.items())
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ParamSet":
        try:
            return cls(
                global_params=GlobalParams.from_json(obj["global"]),
                per_region={
                    rid: RegionParams(MobilityMapParams.from_json(r["mobility_map"]), RegionInit.from_json(r["init"]))
                    for rid, r in obj["regions"].items()
                },
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed parameter file: missing {exc}") from exc

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ParamSet":
        return cls.from_json(json.loads(Path(path).read_text()))
