"""Flat ``section.key = value`` run configurations."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from abreu.errors import AbreuError
from abreu.grid import Disk, Domain, Grid, Rectangle, Superellipse, build_domain
from abreu.models import allen_cahn, power_gauge, rochet_chone, tracking_lagrangian
from abreu.oracle import OracleConfig
from abreu.system import AbreuProblem, HomotopyConfig, RhsMode


class ConfigError(AbreuError, ValueError):
    """Unparseable, unknown or out-of-range configuration entry."""


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v not in ("true", "false"):
        raise ValueError(f"expected true or false, got {s!r}")
    return v == "true"


def _choice(*options):
    def parse(s: str) -> str:
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return v

    return parse


# key -> (parser, default)
SCHEMA = {
    "domain.omega": (_choice("rectangle", "superellipse"), "rectangle"),
    "domain.omega_params": (_floats, (-1.0, 1.0, -1.0, 1.0)),
    "domain.omega0": (_choice("rectangle", "disk"), "rectangle"),
    "domain.omega0_params": (_floats, (-0.5, 0.5, -0.5, 0.5)),
    "grid.n": (int, 65),
    "model.name": (_choice("rochet_chone", "allen_cahn", "tracking"), "rochet_chone"),
    "model.gamma": (str, "1.0"),
    "model.rho": (float, 1.0),
    "model.target": (_choice("saddle", "quadratic"), "saddle"),
    "data.phi_scale": (float, 1.0),
    "data.psi": (float, 1.0),
    "problem.mode": (_choice("fixed_delta", "continuation", "general_div", "allen_cahn"), "fixed_delta"),
    "problem.theta": (float, 0.0),
    "problem.delta": (float, 0.1),
    "problem.eps_list": (_floats, (0.2, 0.1, 0.05)),
    "homotopy.t_schedule": (_floats, (0.0, 0.25, 0.5, 0.75, 1.0)),
    "homotopy.picard_damping": (float, 0.5),
    "homotopy.w_floor": (float, 1e-8),
    "homotopy.outer_tol": (float, 1e-7),
    "homotopy.max_outer": (int, 200),
    "homotopy.cold_start": (_bool, False),
    "homotopy.halt_on_failure": (_bool, False),
    "homotopy.multistart": (_bool, False),
    "oracle.pen_eps": (float, 1e-4),
    "oracle.max_iter": (int, 20000),
    "output.fields": (_bool, True),
    "run.seed": (int, 0),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> RunConfig:
        vals = {k: d for k, (_, d) in SCHEMA.items()}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                vals[key] = SCHEMA[key][0](value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
        cfg = cls(vals, source)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc}") from None
        return cls.parse(text, str(p))

    def override(self, **kw) -> RunConfig:
        vals = dict(self.values)
        vals.update({k: v for k, v in kw.items() if v is not None})
        cfg = RunConfig(vals, self.source)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        if not 0 <= v["problem.theta"] < 0.5:
            raise ConfigError(f"problem.theta = {v['problem.theta']} outside the admissible range [0, 0.5)")
        if not v["problem.delta"] > 0:
            raise ConfigError("problem.delta must be > 0")
        eps = v["problem.eps_list"]
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("problem.eps_list must be positive and strictly decreasing")
        if v["model.rho"] < 0:
            raise ConfigError("model.rho must be >= 0")
        if not v["data.psi"] > 0:
            raise ConfigError("data.psi must be > 0 (positive infimum on the boundary)")
        if v["grid.n"] < 5:
            raise ConfigError("grid.n must be >= 5")
        if not v["oracle.pen_eps"] > 0:
            raise ConfigError("oracle.pen_eps must be > 0")
        ts = v["homotopy.t_schedule"]
        if not ts or ts[0] != 0.0 or ts[-1] != 1.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("homotopy.t_schedule must increase from 0 to 1")
        if not 0 < v["homotopy.picard_damping"] <= 1:
            raise ConfigError("homotopy.picard_damping must lie in (0, 1]")
        if v["model.gamma"] != "bump":
            try:
                float(v["model.gamma"])
            except ValueError:
                raise ConfigError("model.gamma must be a number or 'bump'") from None
        need = {"rectangle": 4, "superellipse": 5, "disk": 3}
        for key, kind in (("domain.omega_params", v["domain.omega"]), ("domain.omega0_params", v["domain.omega0"])):
            if len(v[key]) != need[kind]:
                raise ConfigError(f"{key} needs {need[kind]} numbers for a {kind}")

    # -- builders -----------------------------------------------------------

    def domain(self) -> Domain:
        v = self.values
        n = v["grid.n"]
        if v["domain.omega"] == "rectangle":
            omega = Rectangle(*v["domain.omega_params"])
            grid = Grid(n, n, (omega.a1, omega.b1, omega.a2, omega.b2))
        else:
            cx, cy, a, b, k = v["domain.omega_params"]
            omega = Superellipse((cx, cy), a, b, k)
            pad = 2.5 * max(a, b) / (n - 6)
            grid = Grid(n, n, (cx - a - pad, cx + a + pad, cy - b - pad, cy + b + pad))
        if v["domain.omega0"] == "rectangle":
            omega0 = Rectangle(*v["domain.omega0_params"])
        else:
            cx, cy, r = v["domain.omega0_params"]
            omega0 = Disk((cx, cy), r)
        return build_domain(omega, omega0, grid)

    def model(self, domain: Domain):
        v = self.values
        name = v["model.name"]
        if name == "allen_cahn":
            return allen_cahn()
        if name == "tracking":
            if v["model.target"] == "saddle":
                return tracking_lagrangian(lambda a, b: a**2 - b**2, rho=v["model.rho"])
            return tracking_lagrangian(lambda a, b: 0.5 * (a**2 + b**2) + 0.1, rho=v["model.rho"])
        if v["model.gamma"] == "bump":
            gamma, grad = bump_weight(domain.omega0)
            return rochet_chone(gamma, rho=v["model.rho"], gamma_grad=grad, omega0=domain.omega0)
        return rochet_chone(float(v["model.gamma"]), rho=v["model.rho"], omega0=domain.omega0)

    def phi(self, domain: Domain) -> np.ndarray:
        x1, x2 = domain.grid.coords
        return self.values["data.phi_scale"] * (x1**2 + x2**2)

    def problem(self, domain: Domain | None = None, eps: float | None = None) -> AbreuProblem:
        v = self.values
        d = domain or self.domain()
        mode = v["problem.mode"]
        rhs = {"allen_cahn": RhsMode.ALLEN_CAHN, "general_div": RhsMode.GENERAL_DIV}.get(mode, RhsMode.PENALIZED)
        kw = {}
        if mode == "fixed_delta":
            kw["delta"] = v["problem.delta"]
        elif mode == "continuation":
            kw["eps"] = v["problem.eps_list"][0] if eps is None else eps
        return AbreuProblem(d, self.phi(d), v["data.psi"], self.model(d), power_gauge(v["problem.theta"]), rhs_mode=rhs, **kw)

    def homotopy(self) -> HomotopyConfig:
        v = self.values
        return HomotopyConfig(
            t_schedule=v["homotopy.t_schedule"],
            picard_damping=v["homotopy.picard_damping"],
            w_floor=v["homotopy.w_floor"],
            outer_tol=v["homotopy.outer_tol"],
            max_outer=v["homotopy.max_outer"],
        )

    def oracle(self) -> OracleConfig:
        return OracleConfig(pen_eps=self.values["oracle.pen_eps"], max_iter=self.values["oracle.max_iter"])


def bump_weight(omega0):
    """Weight equal to 1 at the centre of Omega_0 and vanishing on its boundary."""
    if isinstance(omega0, Disk):
        c, r = np.asarray(omega0.center), omega0.radius

        def gamma(a, b):
            return (r**2 - (a - c[0]) ** 2 - (b - c[1]) ** 2) / r**2

        def grad(x):
            return -2 * (np.asarray(x, float) - c) / r**2

        return gamma, grad
    a1, b1, a2, b2 = omega0.a1, omega0.b1, omega0.a2, omega0.b2
    s1, s2 = ((b1 - a1) / 2) ** 2, ((b2 - a2) / 2) ** 2

    def gamma(a, b):
        return (b1 - a) * (a - a1) * (b2 - b) * (b - a2) / (s1 * s2)

    def grad(x):
        x = np.asarray(x, float)
        a, b = x[..., 0], x[..., 1]
        ga = (a1 + b1 - 2 * a) * (b2 - b) * (b - a2) / (s1 * s2)
        gb = (b1 - a) * (a - a1) * (a2 + b2 - 2 * b) / (s1 * s2)
        return np.stack([ga, gb], -1)

    return gamma, grad


def bundled_config(name: str) -> Path:
    """Path of a configuration shipped with the package."""
    p = Path(__file__).parent / "configs" / name
    if not p.suffix:
        p = p.with_suffix(".cfg")
    if not p.exists():
        raise ConfigError(f"no bundled config {name!r}")
    return p


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "bump_weight", "bundled_config"]
