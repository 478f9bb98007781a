"""System models: autonomous dynamics ``dx/dt = f(x)`` with outputs ``y = h(x)``.

Every model exposes ``n_x``, ``n_y`` and the four maps ``f``, ``jac_f``, ``h``,
``jac_h``. Models hold no mutable state after construction, so one instance may
be evaluated from several threads at once.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError

BUILTIN_MODELS = ("h2o2_surrogate", "lorenz63", "cycle3")


class SystemModel:
    """Base class. Subclasses set ``n_x``/``n_y`` and implement ``f`` and ``jac_f``.

    The default output map is ``h(x) = C x`` with ``C`` the identity unless an
    output matrix is supplied.
    """

    name = "model"
    n_x: int
    n_y: int

    def __init__(self, n_x, c=None, domain=None, name=None):
        self.n_x = int(n_x)
        if c is None:
            c = np.eye(self.n_x)
        c = np.atleast_2d(np.asarray(c, dtype=float))
        if c.shape[1] != self.n_x:
            raise ConfigError(f"output matrix has {c.shape[1]} columns, expected {self.n_x}", "c")
        self._c = c
        self._c.setflags(write=False)
        self.n_y = c.shape[0]
        if domain is not None:
            domain = np.asarray(domain, dtype=float)
            if domain.shape != (self.n_x, 2) or np.any(domain[:, 0] > domain[:, 1]):
                raise ConfigError("domain must be n_x rows of [min, max]", "domain")
            domain.setflags(write=False)
        self.domain = domain
        if name is not None:
            self.name = name

    @property
    def output_matrix(self):
        return self._c

    def f(self, x):
        raise NotImplementedError

    def jac_f(self, x):
        raise NotImplementedError

    def h(self, x):
        return self._c @ x

    def jac_h(self, x):
        return self._c

    def with_output(self, c):
        """Copy of this model with a different linear output matrix."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        SystemModel.__init__(clone, self.n_x, c=c, domain=self.domain, name=self.name)
        return clone

    def sample_states(self, n, rng):
        """Draw ``n`` states uniformly from the model's domain box."""
        if self.domain is None:
            raise ConfigError("model has no domain box to sample from", "domain")
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        return lo + (hi - lo) * rng.random((n, self.n_x))

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, n_x={self.n_x}, n_y={self.n_y})"


class FunctionModel(SystemModel):
    """Model assembled from plain callables; handy for tests and ad hoc systems."""

    def __init__(
        self,
        n_x: int,
        f: Callable,
        jac_f: Callable,
        h: Optional[Callable] = None,
        jac_h: Optional[Callable] = None,
        n_y: Optional[int] = None,
        domain=None,
        name: str = "function",
    ):
        super().__init__(n_x, domain=domain, name=name)
        self._f = f
        self._jac_f = jac_f
        if h is not None:
            if jac_h is None or n_y is None:
                raise ConfigError("a custom output map needs jac_h and n_y", "h")
            self._h, self._jac_h = h, jac_h
            self.n_y = int(n_y)
        else:
            self._h = self._jac_h = None

    def f(self, x):
        return np.asarray(self._f(x), dtype=float)

    def jac_f(self, x):
        return np.asarray(self._jac_f(x), dtype=float)

    def h(self, x):
        if self._h is None:
            return super().h(x)
        return np.asarray(self._h(x), dtype=float)

    def jac_h(self, x):
        if self._jac_h is None:
            return super().jac_h(x)
        return np.atleast_2d(np.asarray(self._jac_h(x), dtype=float))


def zero_dynamics(n_x):
    """``dx/dt = 0`` with identity output."""
    zeros = np.zeros((n_x, n_x))
    zeros.setflags(write=False)
    return FunctionModel(n_x, lambda x: np.zeros(n_x), lambda x: zeros, name="zero")


class LinearModel(SystemModel):
    """Continuous-time LTI model ``dx/dt = A x``, ``y = C x``."""

    name = "lti"

    def __init__(self, a, c=None, domain=None, name=None):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError(f"state matrix must be square, got shape {a.shape}", "a")
        super().__init__(a.shape[0], c=c, domain=domain, name=name)
        self.a = a
        self.a.setflags(write=False)

    def f(self, x):
        return self.a @ x

    def jac_f(self, x):
        return self.a


class Lorenz63(SystemModel):
    name = "lorenz63"

    def __init__(self, sigma=10.0, rho=28.0, beta=8.0 / 3.0, c=None, domain=None):
        if domain is None:
            domain = [[-20.0, 20.0], [-25.0, 25.0], [0.0, 50.0]]
        super().__init__(3, c=c, domain=domain)
        self.sigma, self.rho, self.beta = float(sigma), float(rho), float(beta)

    def f(self, x):
        s, r, b = self.sigma, self.rho, self.beta
        return np.array([s * (x[1] - x[0]), x[0] * (r - x[2]) - x[1], x[0] * x[1] - b * x[2]])

    def jac_f(self, x):
        s, r, b = self.sigma, self.rho, self.beta
        return np.array([
            [-s, s, 0.0],
            [r - x[2], -1.0, -x[0]],
            [x[1], x[0], -b],
        ])


@dataclass(frozen=True)
class MassActionNetwork:
    """Mass-action reaction network ``dx/dt = theta @ psi(x)``.

    ``psi_j(x) = k_j * prod_i x_i ** order_ji`` where the reactant orders of
    reaction ``j`` are given as ``(species_index, order)`` pairs.
    """

    theta: np.ndarray
    reactant_orders: tuple
    rate_constants: np.ndarray
    species_names: tuple = ()
    orders: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        n_x, n_r = theta.shape
        rates = np.asarray(self.rate_constants, dtype=float).reshape(-1)
        if len(self.reactant_orders) != n_r:
            raise ConfigError(
                f"{len(self.reactant_orders)} reactions listed but theta has {n_r} columns", "reactions"
            )
        if rates.shape[0] != n_r:
            raise ConfigError(f"expected {n_r} rate constants, got {rates.shape[0]}", "reactions")
        orders = np.zeros((n_r, n_x), dtype=np.int64)
        for j, pairs in enumerate(self.reactant_orders):
            for species, order in pairs:
                if not (0 <= int(species) < n_x):
                    raise ConfigError(f"species index {species} out of range", f"reactions[{j}].reactants")
                if int(order) != order or order < 0:
                    raise ConfigError("exponents must be nonnegative integers", f"reactions[{j}].reactants")
                orders[j, int(species)] += int(order)
            if not (np.isfinite(rates[j]) and rates[j] > 0):
                raise ConfigError("rate constants must be strictly positive", f"reactions[{j}].rate")
        theta.setflags(write=False)
        rates.setflags(write=False)
        orders.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "rate_constants", rates)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "reactant_orders", tuple(tuple(map(tuple, p)) for p in self.reactant_orders))
        names = tuple(self.species_names) or tuple(f"x{i}" for i in range(n_x))
        if len(names) != n_x:
            raise ConfigError(f"{len(names)} species names for {n_x} species", "species_names")
        object.__setattr__(self, "species_names", names)

    @property
    def n_x(self):
        return self.theta.shape[0]

    @property
    def n_reactions(self):
        return self.theta.shape[1]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_x,):
            raise ConfigError(f"state has shape {x.shape}, network has {self.n_x} species", "x")
        return x

    def rates(self, x):
        """Reaction rate vector ``psi(x)``."""
        x = self._check(x)
        return self.rate_constants * np.prod(x ** self.orders, axis=1)

    def scaled(self, factor):
        """Same network with every rate constant multiplied by ``factor``."""
        return MassActionNetwork(self.theta, self.reactant_orders, self.rate_constants * factor, self.species_names)


def eval_mass_action(net: MassActionNetwork, x) -> np.ndarray:
    """``theta @ psi(x)``."""
    return net.theta @ net.rates(x)


def jacobian_mass_action(net: MassActionNetwork, x) -> np.ndarray:
    """Exact Jacobian of :func:`eval_mass_action`.

    A zero exponent contributes nothing to the derivative (``0 * x**-1 := 0``),
    so states on the boundary of the orthant are handled without division.
    """
    x = net._check(x)
    p = net.orders
    if p.shape[0] == 0:
        return np.zeros((net.n_x, net.n_x))
    powers = x ** p
    ones = np.ones((p.shape[0], 1))
    # product over i != m via prefix/suffix products, no division by x_m
    prefix = np.cumprod(np.hstack([ones, powers[:, :-1]]), axis=1)
    suffix = np.cumprod(np.hstack([ones, powers[:, :0:-1]]), axis=1)[:, ::-1]
    others = prefix * suffix
    own = np.where(p > 0, p * x ** np.maximum(p - 1, 0), 0.0)
    dpsi = net.rate_constants[:, None] * own * others
    return net.theta @ dpsi


class MassActionModel(SystemModel):
    name = "mass_action"

    def __init__(self, network: MassActionNetwork, c=None, domain=None, name=None):
        super().__init__(network.n_x, c=c, domain=domain, name=name)
        self.network = network

    @property
    def species_names(self):
        return self.network.species_names

    def f(self, x):
        return eval_mass_action(self.network, x)

    def jac_f(self, x):
        return jacobian_mass_action(self.network, x)


# --------------------------------------------------------------------------- loading


def _matrix(doc, key, path):
    if key not in doc:
        raise ConfigError("missing field", f"{path}{key}")
    try:
        m = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"not a numeric matrix ({exc})", f"{path}{key}") from None
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise ConfigError("must be a finite row-major matrix", f"{path}{key}")
    return m


def _network_from_doc(doc):
    theta = _matrix(doc, "theta", "") if doc.get("theta") not in (None, []) else None
    reactions = doc.get("reactions")
    if reactions is None:
        raise ConfigError("missing field", "reactions")
    if not isinstance(reactions, list):
        raise ConfigError("must be a list", "reactions")
    orders, rates = [], []
    for j, r in enumerate(reactions):
        if not isinstance(r, dict):
            raise ConfigError("must be an object", f"reactions[{j}]")
        for key in ("reactants", "rate"):
            if key not in r:
                raise ConfigError("missing field", f"reactions[{j}].{key}")
        pairs = r["reactants"]
        if not isinstance(pairs, list) or any(not isinstance(p, (list, tuple)) or len(p) != 2 for p in pairs):
            raise ConfigError("must be a list of [species_idx, order] pairs", f"reactions[{j}].reactants")
        orders.append(tuple((int(s), o) for s, o in pairs))
        rates.append(r["rate"])
    names = doc.get("species_names") or ()
    if theta is None:
        if not names:
            raise ConfigError("missing field", "theta")
        theta = np.zeros((len(names), 0))
    if reactions and theta.shape[1] != len(reactions):
        raise ConfigError(f"theta has {theta.shape[1]} columns for {len(reactions)} reactions", "theta")
    n_x = doc.get("n_x")
    if n_x is not None and theta.shape[0] != n_x:
        raise ConfigError(f"theta has {theta.shape[0]} rows, n_x is {n_x}", "theta")
    if names and len(names) != theta.shape[0]:
        raise ConfigError(f"theta has {theta.shape[0]} rows for {len(names)} species", "theta")
    for j, rate in enumerate(rates):
        if not isinstance(rate, (int, float)) or isinstance(rate, bool):
            raise ConfigError("must be a number", f"reactions[{j}].rate")
    return MassActionNetwork(theta, tuple(orders), np.array(rates, dtype=float), tuple(names))


def load_model(spec) -> SystemModel:
    """Build a model from a model-spec document (a mapping, or a JSON/YAML path)."""
    if isinstance(spec, (str, Path)):
        return load_model_file(spec)
    if not isinstance(spec, dict):
        raise ConfigError("model spec must be an object", "")
    kind = spec.get("kind")
    if kind is None:
        raise ConfigError("missing field", "kind")
    c = _matrix(spec, "c", "") if spec.get("c") is not None else None
    domain = spec.get("domain")
    name = spec.get("name")
    if kind == "lti":
        a = _matrix(spec, "a", "")
        if a.shape[0] != a.shape[1]:
            raise ConfigError(f"state matrix must be square, got {a.shape[0]}x{a.shape[1]}", "a")
        c = _matrix(spec, "c", "")
        return LinearModel(a, c, domain=domain, name=name or "lti")
    if kind == "lorenz63":
        params = {k: spec[k] for k in ("sigma", "rho", "beta") if k in spec}
        for k, v in params.items():
            if not isinstance(v, (int, float)):
                raise ConfigError("must be a number", k)
        model = Lorenz63(c=c, domain=domain, **params)
        if name:
            model.name = name
        return model
    if kind == "mass_action":
        net = _network_from_doc(spec)
        return MassActionModel(net, c=c, domain=domain, name=name or "mass_action")
    if kind == "random_mass_action":
        try:
            return random_mass_action(int(spec["n_species"]), int(spec["n_reactions"]), int(spec.get("seed", 0)))
        except KeyError as exc:
            raise ConfigError("missing field", exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid random network parameters: {exc}", "n_species") from None
    raise ConfigError(
        f"unknown model kind {kind!r} (expected lti, lorenz63, mass_action or random_mass_action)", "kind"
    )


def read_document(path):
    """Read a JSON or YAML document."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    import yaml

    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None


def load_model_file(path) -> SystemModel:
    path = str(path)
    if path.startswith("builtin:"):
        return builtin_model(path.split(":", 1)[1])
    return load_model(read_document(path))


def builtin_model(name: str) -> SystemModel:
    """Load one of the model configs bundled with the package."""
    if name not in BUILTIN_MODELS:
        raise ConfigError(f"unknown builtin model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")
    text = resources.files("vargram.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return load_model(json.loads(text))


def random_mass_action(n_species: int, n_reactions: int, seed: int = 0, rate_range=(0.1, 2.0)) -> MassActionModel:
    """Random bimolecular network ``A + B -> C + D`` (and unimolecular ``A -> B``).

    Every reaction conserves the molecule count, so total concentration is
    invariant and trajectories from positive states stay bounded.
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros((n_species, n_reactions))
    orders = []
    for j in range(n_reactions):
        width = 2 if rng.random() < 0.7 else 1
        reactants = rng.choice(n_species, size=width, replace=False)
        products = rng.choice(n_species, size=width, replace=False)
        for s in reactants:
            theta[s, j] -= 1
        for s in products:
            theta[s, j] += 1
        orders.append(tuple((int(s), 1) for s in reactants))
    rates = rng.uniform(*rate_range, size=n_reactions)
    net = MassActionNetwork(theta, tuple(orders), rates, tuple(f"S{i}" for i in range(n_species)))
    domain = np.tile([0.1, 2.0], (n_species, 1))
    return MassActionModel(net, domain=domain, name=f"random_mass_action_{n_species}")


def model_to_doc(model: SystemModel) -> dict:
    """Inverse of :func:`load_model` for the built-in kinds."""
    if isinstance(model, LinearModel):
        return {"kind": "lti", "a": model.a.tolist(), "c": model.output_matrix.tolist()}
    if isinstance(model, Lorenz63):
        return {"kind": "lorenz63", "sigma": model.sigma, "rho": model.rho, "beta": model.beta}
    if isinstance(model, MassActionModel):
        net = model.network
        return {
            "kind": "mass_action",
            "theta": net.theta.tolist(),
            "reactions": [
                {"reactants": [list(p) for p in pairs], "rate": float(k)}
                for pairs, k in zip(net.reactant_orders, net.rate_constants)
            ],
            "species_names": list(net.species_names),
        }
    raise ConfigError(f"cannot serialise {type(model).__name__}")


def central_difference_jacobian(fun: Callable, x, step: Optional[Sequence[float]] = None) -> np.ndarray:
    """Central finite-difference Jacobian with step ``1e-6 * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    if step is None:
        step = 1e-6 * (1.0 + np.abs(x))
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step[i]
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step[i]))
    return np.column_stack(cols)
