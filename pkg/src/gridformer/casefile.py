"""JSON case files: load, validate, build models, and re-emit.

A case names its buses by ``id`` and tags each as ``device``, ``interior``
or ``ground``.  Internally device buses come first in file order, then
interior buses, then the single ground node.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .converters import DeviceSpec, canonical_arch
from .errors import CaseFileError, UnsupportedArchitecture
from .lti import FrequencyGrid
from .network import NetworkModel, PowerSystem
from .outputs import atomic_write_text

CASE_VERSION = 1
BUS_KINDS = ("device", "interior", "ground")
MIN_POINTS = 50
DEFAULT_SWEEP = {"f_min_hz": 0.05, "f_max_hz": 2000.0, "points": 500}
DEFAULT_BAND = {"f_lo_hz": 5.0, "f_hi_hz": 200.0}


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise CaseFileError(f"{where}: missing field {key!r}")
    return obj[key]


def _number(x, where, positive=False, nonneg=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise CaseFileError(f"{where}: expected a finite number, got {x!r}")
    if positive and not x > 0:
        raise CaseFileError(f"{where}: must be positive")
    if nonneg and x < 0:
        raise CaseFileError(f"{where}: must be nonnegative")
    return float(x)


@dataclass(frozen=True)
class CaseBranch:
    src: object
    dst: object
    b_pu: float
    tau: float | None = None


@dataclass(frozen=True)
class CaseDevice:
    bus: object
    arch: str
    params: dict = field(default_factory=dict)
    capacity_pu: float = 1.0
    p0_pu: float = 0.5
    q0_or_v0_pu: float | None = None

    def spec(self):
        return DeviceSpec(self.arch, dict(self.params), self.capacity_pu, self.p0_pu,
                          self.q0_or_v0_pu)


@dataclass(frozen=True, eq=False)
class CaseFile:
    version: int
    omega0_hz: float
    tau_default: float
    buses: tuple
    branches: tuple
    devices: tuple
    sweep: dict
    band: dict
    source: str | None = None

    def __post_init__(self):
        if self.version != CASE_VERSION:
            raise CaseFileError(f"unsupported case version {self.version!r}")
        ids = [b for b, _ in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseFileError("duplicate bus ids")
        kinds = [k for _, k in self.buses]
        if kinds.count("ground") != 1:
            raise CaseFileError("need exactly one ground bus")
        if "device" not in kinds:
            raise CaseFileError("need at least one device bus")
        kind_of = dict(self.buses)
        seen = set()
        for d in self.devices:
            if kind_of.get(d.bus) != "device":
                raise CaseFileError(f"device at bus {d.bus!r}: not a device bus")
            if d.bus in seen:
                raise CaseFileError(f"two devices at bus {d.bus!r}")
            seen.add(d.bus)
        missing = [b for b, k in self.buses if k == "device" and b not in seen]
        if missing:
            raise CaseFileError(f"device buses without a device: {missing}")
        for br in self.branches:
            for end in (br.src, br.dst):
                if end not in kind_of:
                    raise CaseFileError(f"branch references unknown bus {end!r}")
        sw = self.sweep
        if not 0 < sw["f_min_hz"] < sw["f_max_hz"]:
            raise CaseFileError("sweep needs 0 < f_min_hz < f_max_hz")
        if sw["points"] < MIN_POINTS:
            raise CaseFileError(f"sweep needs at least {MIN_POINTS} points")
        if not 0 < self.band["f_lo_hz"] < self.band["f_hi_hz"]:
            raise CaseFileError("band needs 0 < f_lo_hz < f_hi_hz")

    # -- bus indexing ------------------------------------------------------

    @property
    def order(self):
        """Bus ids in internal index order."""
        return ([b for b, k in self.buses if k == "device"] +
                [b for b, k in self.buses if k == "interior"] +
                [b for b, k in self.buses if k == "ground"])

    def index_of(self, bus_id):
        order = self.order
        for k, b in enumerate(order):
            if b == bus_id or str(b) == str(bus_id):
                return k
        raise CaseFileError(f"unknown bus {bus_id!r}")

    def id_of(self, index):
        return self.order[index]

    # -- models ------------------------------------------------------------

    @property
    def omega0(self):
        return 2 * math.pi * self.omega0_hz

    def device_specs(self):
        by_bus = {d.bus: d for d in self.devices}
        return tuple(by_bus[b].spec() for b, k in self.buses if k == "device")

    def network(self):
        n = sum(k == "device" for _, k in self.buses)
        m = sum(k == "interior" for _, k in self.buses)
        br = []
        for b in self.branches:
            tau = self.tau_default if b.tau is None else b.tau
            br.append((self.index_of(b.src), self.index_of(b.dst), b.b_pu, tau))
        caps = [s.capacity for s in self.device_specs()]
        try:
            return NetworkModel(n, m, tuple(br), caps, self.omega0)
        except ValueError as exc:
            raise CaseFileError(str(exc)) from exc

    def system(self):
        return PowerSystem(self.network(), self.device_specs())

    def grid(self):
        sw = self.sweep
        return FrequencyGrid.log(sw["f_min_hz"], sw["f_max_hz"], sw["points"])

    @property
    def band_hz(self):
        return (self.band["f_lo_hz"], self.band["f_hi_hz"])

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        branches = []
        for b in self.branches:
            d = {"from": b.src, "to": b.dst, "b_pu": b.b_pu}
            if b.tau is not None:
                d["tau"] = b.tau
            branches.append(d)
        devices = []
        for d in self.devices:
            e = {"bus": d.bus, "arch": d.arch, "params": dict(d.params),
                 "capacity_pu": d.capacity_pu, "p0_pu": d.p0_pu}
            if d.q0_or_v0_pu is not None:
                e["q0_or_v0_pu"] = d.q0_or_v0_pu
            devices.append(e)
        return {
            "version": self.version,
            "system": {"omega0_hz": self.omega0_hz, "tau_default": self.tau_default},
            "buses": [{"id": b, "kind": k} for b, k in self.buses],
            "branches": branches,
            "devices": devices,
            "sweep": dict(self.sweep),
            "band": dict(self.band),
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    def dump(self, path):
        atomic_write_text(path, self.dumps() + "\n")


def parse_case(doc, source=None):
    """Validate a decoded JSON document and return a :class:`CaseFile`."""
    if not isinstance(doc, dict):
        raise CaseFileError("case file must be a JSON object")
    version = _require(doc, "version", "case")
    if isinstance(version, bool) or not isinstance(version, int):
        raise CaseFileError("version must be an integer")
    sysd = doc.get("system", {})
    omega0_hz = _number(sysd.get("omega0_hz", 50.0), "system.omega0_hz", positive=True)
    tau_default = _number(sysd.get("tau_default", 0.1), "system.tau_default", positive=True)

    buses = []
    for k, b in enumerate(_require(doc, "buses", "case")):
        bid = _require(b, "id", f"buses[{k}]")
        kind = _require(b, "kind", f"buses[{k}]")
        if kind not in BUS_KINDS:
            raise CaseFileError(f"buses[{k}]: kind must be one of {BUS_KINDS}")
        buses.append((bid, kind))

    branches = []
    for k, b in enumerate(_require(doc, "branches", "case")):
        where = f"branches[{k}]"
        tau = b.get("tau") if isinstance(b, dict) else None
        branches.append(CaseBranch(
            _require(b, "from", where), _require(b, "to", where),
            _number(_require(b, "b_pu", where), where + ".b_pu", positive=True),
            None if tau is None else _number(tau, where + ".tau", positive=True)))

    devices = []
    for k, d in enumerate(_require(doc, "devices", "case")):
        where = f"devices[{k}]"
        arch = _require(d, "arch", where)
        try:
            canonical_arch(arch)
        except UnsupportedArchitecture as exc:
            raise CaseFileError(f"{where}: {exc}") from exc
        params = d.get("params", {})
        if not isinstance(params, dict):
            raise CaseFileError(f"{where}.params must be an object")
        params = {p: _number(v, f"{where}.params.{p}") for p, v in params.items()}
        qv = d.get("q0_or_v0_pu")
        dev = CaseDevice(
            _require(d, "bus", where), arch, params,
            _number(d.get("capacity_pu", 1.0), where + ".capacity_pu", positive=True),
            _number(d.get("p0_pu", 0.5), where + ".p0_pu"),
            None if qv is None else _number(qv, where + ".q0_or_v0_pu"))
        try:
            dev.spec()
        except ValueError as exc:
            raise CaseFileError(f"{where}: {exc}") from exc
        devices.append(dev)

    sw = dict(DEFAULT_SWEEP)
    sw.update(doc.get("sweep", {}))
    sweep = {"f_min_hz": _number(sw["f_min_hz"], "sweep.f_min_hz", positive=True),
             "f_max_hz": _number(sw["f_max_hz"], "sweep.f_max_hz", positive=True),
             "points": sw["points"]}
    if isinstance(sweep["points"], bool) or not isinstance(sweep["points"], int):
        raise CaseFileError("sweep.points must be an integer")
    bd = dict(DEFAULT_BAND)
    bd.update(doc.get("band", {}))
    band = {"f_lo_hz": _number(bd["f_lo_hz"], "band.f_lo_hz", positive=True),
            "f_hi_hz": _number(bd["f_hi_hz"], "band.f_hi_hz", positive=True)}
    return CaseFile(version, omega0_hz, tau_default, tuple(buses), tuple(branches),
                    tuple(devices), sweep, band, source)


def loads(text, source=None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFileError(f"invalid JSON: {exc}") from exc
    return parse_case(doc, source)


def load(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CaseFileError(f"cannot read {path}: {exc}") from exc
    return loads(text, str(path))


def bundled_case(name):
    """Load one of the example cases shipped with the package."""
    ref = resources.files("gridformer") / "cases" / f"{name}.json"
    return loads(ref.read_text(encoding="utf-8"), f"<bundled:{name}>")


def bundled_case_names():
    d = resources.files("gridformer") / "cases"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))
