"""Run configuration: a flat key=value format and its validation.

The format is one ``key = value`` pair per line with ``#`` comments.
Parsing collects every violation before failing so a bad file reports
all its problems at once.
"""

from dataclasses import dataclass, fields

from .errors import ConfigError

PROBLEMS = ("stationary_bubble", "expanding_bubble", "relaxation", "custom")
ELEMENTS = ("p2p1", "p2p0", "p2p1p0")
SCHEMES = ("main", "dziuk")
DOMAINS = ("square", "square_with_hole")
CURVES = ("uniform_circle", "fig4_nonuniform")

_BOOL_WORDS = {
    "on": True,
    "off": False,
    "true": True,
    "false": False,
    "1": True,
    "0": False,
    "yes": True,
    "no": False,
}


@dataclass
class RunConfig:
    problem: str = "stationary_bubble"
    element: str = "p2p1"
    xfem: bool = True
    scheme: str = "main"
    domain: str = "square"
    mu_minus: float = 1.0
    mu_plus: float = 1.0
    gamma: float = 1.0
    alpha: float = 0.15
    n_gamma: int = 64
    radius: float = 0.5
    h_f: float = 2**0.5 / 4
    h_c: float = 2**0.5 / 4
    tau: float = 1e-2
    t_end: float = 1.0
    out_dir: str = ""
    dump_every: int = 0
    solver_tol: float = 1e-10
    initial_curve: str = "uniform_circle"

    def validate(self):
        """Return the list of all invariant violations (empty when valid)."""
        problems = []
        if self.problem not in PROBLEMS:
            problems.append(f"problem must be one of {PROBLEMS}")
        if self.element not in ELEMENTS:
            problems.append(f"element must be one of {ELEMENTS}")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}")
        if self.domain not in DOMAINS:
            problems.append(f"domain must be one of {DOMAINS}")
        if self.initial_curve not in CURVES:
            problems.append(f"initial_curve must be one of {CURVES}")
        if self.mu_minus <= 0 or self.mu_plus <= 0:
            problems.append("mu_minus and mu_plus must be positive")
        if self.gamma < 0:
            problems.append("gamma must be nonnegative")
        if self.tau <= 0:
            problems.append("tau must be positive")
        if self.t_end < 0:
            problems.append("t_end must be nonnegative")
        if self.h_f <= 0 or self.h_c <= 0:
            problems.append("h_f and h_c must be positive")
        elif self.h_f > self.h_c * (1 + 1e-12):
            problems.append("h_f must not exceed h_c")
        if self.n_gamma < 8:
            problems.append("n_gamma must be at least 8")
        if self.radius <= 0:
            problems.append("radius must be positive")
        if self.dump_every < 0:
            problems.append("dump_every must be nonnegative")
        if self.solver_tol <= 0:
            problems.append("solver_tol must be positive")
        if self.problem == "expanding_bubble" and self.domain != "square_with_hole":
            problems.append(
                "expanding_bubble requires domain=square_with_hole "
                "(the velocity field excludes the origin)"
            )
        return problems

    def resolved(self) -> "RunConfig":
        """Apply problem presets and validate; raises on violations."""
        from dataclasses import replace

        cfg = self
        if self.problem == "expanding_bubble":
            cfg = replace(cfg, domain="square_with_hole")
        if self.problem == "relaxation":
            cfg = replace(cfg, initial_curve="fig4_nonuniform")
        if self.problem == "stationary_bubble":
            cfg = replace(cfg, initial_curve="uniform_circle", domain="square")
        errs = cfg.validate()
        if errs:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
        return cfg


def parse_config(text: str) -> RunConfig:
    """Parse the key=value format; raises ConfigError listing every problem."""
    spec = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    problems = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {ln}: expected key = value, got {raw!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in spec:
            problems.append(f"line {ln}: unknown key '{key}'")
            continue
        if key in kwargs:
            problems.append(f"line {ln}: duplicate key '{key}'")
            continue
        try:
            kwargs[key] = _convert(key, val)
        except ValueError as exc:
            problems.append(f"line {ln}: {exc}")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    cfg = RunConfig(**kwargs)
    errs = cfg.validate()
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def _convert(key, val):
    kind = RunConfig.__dataclass_fields__[key].type
    kind = getattr(kind, "__name__", kind)
    if kind == "bool":
        word = val.lower()
        if word not in _BOOL_WORDS:
            raise ValueError(f"cannot parse '{val}' as a flag for '{key}'")
        return _BOOL_WORDS[word]
    if kind == "int":
        try:
            return int(val)
        except ValueError:
            raise ValueError(f"cannot parse '{val}' as an integer for '{key}'")
    if kind == "float":
        try:
            return float(val)
        except ValueError:
            raise ValueError(f"cannot parse '{val}' as a number for '{key}'")
    return val
