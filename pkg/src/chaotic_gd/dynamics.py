"""Gradient maps, momentum variants and orbit / ensemble evolution.

Four map kinds share one compiled driver:

``gd``
    ``x' = x - eta (grad f0(x) + grad f1(x))``
``stochastic-gd``
    ``x' = x - eta grad f0(x) + eta zeta`` with fresh bounded noise
``heavy-ball``
    ``v' = gamma v - eta grad f(x)``, ``x' = x + v'``
``nag-sc``
    ``y' = x - eta grad f(x)``, ``x' = y' + c (y' - y)`` with
    ``c = (1 - sqrt(mu eta)) / (1 + sqrt(mu eta))``
"""
from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .errors import DivergenceError, DomainError
from .objective import (MacroFunction, MultiscaleObjective, NoiseModel, _zero_grad,
                        as_batch)
from .rng import MemberStreams, check_seed, stream

KINDS = ("gd", "stochastic-gd", "heavy-ball", "nag-sc")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
DIVERGENCE_BOUND = 1e12
# uniforms per noise block per member are capped at this many doubles overall
_NOISE_BLOCK_DOUBLES = 1 << 22


@dataclass(frozen=True, eq=False)
class MapSpec:
    """A gradient map with its learning rate and momentum parameters.

    ``gd`` and the momentum kinds take a :class:`MultiscaleObjective`;
    ``stochastic-gd`` takes a :class:`MacroFunction` plus a :class:`NoiseModel`
    (a :class:`MultiscaleObjective` whose micro-scale carries a noise model is
    also accepted and split accordingly).
    """

    kind: str
    objective: object
    eta: float
    noise: Optional[NoiseModel] = None
    gamma: float = 0.0
    mu_hint: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown map kind {self.kind!r}; expected one of {KINDS}")
        eta = float(self.eta)
        if not (eta > 0 and math.isfinite(eta)):
            raise DomainError(f"eta must be positive and finite, got {self.eta}")
        object.__setattr__(self, "eta", eta)
        obj = self.objective
        if self.kind == "stochastic-gd":
            if isinstance(obj, MultiscaleObjective):
                if self.noise is None:
                    if obj.micro is None or obj.micro.noise is None:
                        raise DomainError("stochastic-gd needs a noise model")
                    object.__setattr__(self, "noise", obj.micro.noise)
                obj = obj.macro
                object.__setattr__(self, "objective", obj)
            if not isinstance(obj, MacroFunction) or self.noise is None:
                raise DomainError("stochastic-gd takes a MacroFunction and a NoiseModel")
            if self.noise.dim != obj.dim:
                raise DomainError("noise dimension does not match the objective")
        else:
            if isinstance(obj, MacroFunction):
                obj = MultiscaleObjective(obj)
                object.__setattr__(self, "objective", obj)
            if not isinstance(obj, MultiscaleObjective):
                raise DomainError(f"{self.kind} takes a MultiscaleObjective")
        if self.kind == "heavy-ball" and not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.kind == "nag-sc":
            if self.mu_hint is None or not self.mu_hint > 0:
                raise DomainError("nag-sc needs a positive mu_hint")
            if not self.mu_hint * eta < 1.0:
                raise DomainError(f"nag-sc needs mu*eta < 1, got {self.mu_hint * eta}")

    @property
    def dim(self):
        return self.objective.dim

    @property
    def momentum(self):
        return self.kind in ("heavy-ball", "nag-sc")

    @property
    def nag_c(self):
        r = math.sqrt(self.mu_hint * self.eta)
        return (1.0 - r) / (1.0 + r)

    def _kernels(self):
        if self.kind == "stochastic-gd":
            f0 = self.objective
            return f0.grad_kernel, f0.params, _zero_grad, np.zeros(1)
        obj = self.objective
        g1, _, p1 = obj.micro_kernels
        return obj.macro.grad_kernel, obj.macro.params, g1, p1

    def describe(self):
        out = {"kind": self.kind, "eta": self.eta}
        if self.kind == "stochastic-gd":
            out["macro"] = self.objective.name
            out["noise"] = self.noise.name
        else:
            out.update(self.objective.describe())
        if self.kind == "heavy-ball":
            out["gamma"] = self.gamma
        if self.kind == "nag-sc":
            out["mu_hint"] = self.mu_hint
        return out


# ---------------------------------------------------------------------------
# compiled driver
# ---------------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _advance(X, V, n, kind, eta, a, g0, p0, g1, p1, Z, step0, thin, rec, recv):
    """Advance all members ``n`` steps in place.

    ``Z`` holds noise of shape ``(m, n, d)`` for the stochastic kind.  Every
    state whose global index ``step0 + s + 1`` is a multiple of ``thin`` is
    stored in ``rec[(step0 + s + 1) // thin - 1]`` when ``rec`` has room.
    Returns ``(-1, -1)`` on success or ``(s, member)`` of the first state
    that broke the divergence guard.
    """
    m, d = X.shape
    G = np.empty((m, d))
    G1 = np.empty((m, d))
    nrec = rec.shape[0]
    for s in range(n):
        g0(X, p0, G)
        if kind != 1:
            g1(X, p1, G1)
        for j in range(m):
            for i in range(d):
                if kind == 0:
                    X[j, i] = X[j, i] - eta * (G[j, i] + G1[j, i])
                elif kind == 1:
                    X[j, i] = X[j, i] - eta * G[j, i] + eta * Z[j, s, i]
                elif kind == 2:
                    v = a * V[j, i] - eta * (G[j, i] + G1[j, i])
                    V[j, i] = v
                    X[j, i] = X[j, i] + v
                else:
                    y = X[j, i] - eta * (G[j, i] + G1[j, i])
                    X[j, i] = y + a * (y - V[j, i])
                    V[j, i] = y
        bad = -1
        for j in range(m):
            for i in range(d):
                x = X[j, i]
                if not (abs(x) <= 1e12):
                    bad = j
                    break
            if bad >= 0:
                break
        if bad >= 0:
            return s, bad
        t = step0 + s + 1
        if t % thin == 0:
            r = t // thin - 1
            if r < nrec:
                for j in range(m):
                    for i in range(d):
                        rec[r, j, i] = X[j, i]
                        recv[r, j, i] = V[j, i]
    return -1, -1


_EMPTY_REC = np.empty((0, 0, 0))


def _noise_block_steps(m, q, remaining):
    return int(max(1, min(remaining, _NOISE_BLOCK_DOUBLES // max(1, m * q))))


def _run(spec, X, V, n, seed, lo, step_offset, thin=1, rec=None, recv=None, rec_step0=0):
    """Advance members ``lo .. lo + len(X) - 1`` by ``n`` steps.

    ``step_offset`` is the global step index used to address noise streams,
    ``rec_step0`` the index used for recording.  Raises DivergenceError.
    """
    g0, p0, g1, p1 = spec._kernels()
    kind = _KIND_CODE[spec.kind]
    a = spec.gamma if spec.kind == "heavy-ball" else (spec.nag_c if spec.kind == "nag-sc" else 0.0)
    rec = _EMPTY_REC if rec is None else rec
    recv = rec if recv is None else recv
    if kind != 1:
        s, j = _advance(X, V, n, kind, spec.eta, a, g0, p0, g1, p1, _EMPTY_REC,
                        rec_step0, thin, rec, recv)
        if s >= 0:
            _raise_divergence(X, s, j, lo, step_offset)
        return
    noise = spec.noise
    streams = MemberStreams(seed, lo, lo + X.shape[0], step_offset, noise.n_uniforms)
    done = 0
    while done < n:
        b = _noise_block_steps(X.shape[0], noise.n_uniforms, n - done)
        u = streams.draw(b)
        Z = noise.transform(u.reshape(-1, noise.n_uniforms)).reshape(X.shape[0], b, -1)
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        s, j = _advance(X, V, b, kind, spec.eta, a, g0, p0, g1, p1, Z,
                        rec_step0 + done, thin, rec, recv)
        if s >= 0:
            _raise_divergence(X, s + done, j, lo, step_offset)
        done += b


def _raise_divergence(X, s, j, lo, step_offset):
    raise DivergenceError(
        f"iterate left the bounded region at step {step_offset + s} "
        f"(member {lo + j}): {X[j]}", state=X[j].copy(), step=step_offset + s,
        member=lo + j)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def _state(x, dim):
    arr = np.array(x, dtype=np.float64, ndmin=1)
    if arr.shape != (dim,):
        raise DomainError(f"expected a state of dimension {dim}, got shape {np.shape(x)}")
    return arr


def _guard(x):
    if not np.all(np.abs(x) <= DIVERGENCE_BOUND):
        raise DivergenceError(f"non-finite or runaway state {x}", state=x, step=0)
    return x


def _eta(eta):
    eta = float(eta)
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta}")
    return eta


def gd_step(obj, eta, x):
    """One step of ``x - eta grad f(x)``."""
    if isinstance(obj, MacroFunction):
        obj = MultiscaleObjective(obj)
    eta = _eta(eta)
    x = _state(x, obj.dim)
    X = x.reshape(1, -1)
    g0, p0, g1, p1 = MapSpec("gd", obj, eta)._kernels()
    G = np.empty_like(X)
    G1 = np.empty_like(X)
    g0(X, p0, G)
    g1(X, p1, G1)
    return _guard(x - eta * (G[0] + G1[0]))


def stochastic_step(f0, noise, eta, x, rng=None, zeta=None):
    """One step of ``x - eta grad f0(x) + eta zeta``.

    ``zeta`` may be supplied to condition on a particular draw; otherwise it
    is sampled from ``noise`` with ``rng`` (a Generator or a seed).
    """
    eta = _eta(eta)
    x = _state(x, f0.dim)
    if zeta is None:
        gen = rng if isinstance(rng, np.random.Generator) else stream(0 if rng is None else rng)
        zeta = noise.sample(gen, 1)[0]
    zeta = np.asarray(zeta, dtype=np.float64).reshape(f0.dim)
    G = np.empty((1, f0.dim))
    f0.grad_kernel(x.reshape(1, -1), f0.params, G)
    return _guard(x - eta * G[0] + eta * zeta)


def heavy_ball_step(obj, eta, gamma, state):
    """One heavy-ball step on ``state = (x, v)``; returns ``(x', v')``."""
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    x, v = state
    spec = MapSpec("heavy-ball", obj, eta, gamma=gamma)
    x = _state(x, spec.dim).reshape(1, -1)
    v = _state(v, spec.dim).reshape(1, -1)
    _run(spec, x, v, 1, 0, 0, 0)
    return x[0], v[0]


def nag_sc_step(obj, eta, mu_hint, state):
    """One NAG-SC step on ``state = (x, y)``; returns ``(x', y')``."""
    x, y = state
    spec = MapSpec("nag-sc", obj, eta, mu_hint=mu_hint)
    x = _state(x, spec.dim).reshape(1, -1)
    y = _state(y, spec.dim).reshape(1, -1)
    _run(spec, x, y, 1, 0, 0, 0)
    return x[0], y[0]


# ---------------------------------------------------------------------------
# orbits and ensembles
# ---------------------------------------------------------------------------

_MAGIC = b"CGDS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


def write_binary(path, states):
    """Dump ``(count, d)`` states: header ``magic, version, d, count`` then f64 LE."""
    states = np.ascontiguousarray(np.asarray(states, dtype="<f8"))
    count, d = states.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, count))
        fh.write(states.tobytes())


def read_binary(path):
    """Inverse of :func:`write_binary`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DomainError(f"{path}: truncated header")
        magic, version, d, count = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise DomainError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise DomainError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count * d:
        raise DomainError(f"{path}: expected {count * d} values, found {data.size}")
    return data.reshape(count, d).astype(np.float64)


def write_csv(path, states):
    """One row per state: ``index, x1 .. xd``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"x{i + 1}" for i in range(states.shape[1])])
        for i, row in enumerate(states):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)


@dataclass(eq=False)
class Orbit:
    """Recorded states ``x_0 .. `` of one trajectory after burn-in.

    ``states[0]`` is the state right after burn-in; ``states[i]`` is the
    state ``i * thin`` steps later.  Momentum maps also keep the auxiliary
    component (velocity or look-ahead point) in ``aux``.
    """

    states: np.ndarray
    spec: MapSpec
    burn_in: int
    thin: int
    seed: int
    x0: np.ndarray
    aux: Optional[np.ndarray] = None

    def __len__(self):
        return self.states.shape[0]

    @property
    def x(self):
        """States as a flat array for 1-D maps."""
        return self.states[:, 0] if self.states.shape[1] == 1 else self.states

    def to_csv(self, path):
        write_csv(path, self.states)

    def to_binary(self, path):
        write_binary(path, self.states)


@dataclass(eq=False)
class Ensemble:
    """Members evolved in lockstep; ``generation`` counts steps taken so far."""

    members: np.ndarray
    generation: int = 0
    seed: int = 0
    aux: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.members, dtype=np.float64)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        self.members = np.ascontiguousarray(m)
        if self.aux is not None:
            self.aux = np.ascontiguousarray(np.asarray(self.aux, dtype=np.float64)
                                            .reshape(self.members.shape))

    def __len__(self):
        return self.members.shape[0]

    @property
    def dim(self):
        return self.members.shape[1]

    @property
    def x(self):
        return self.members[:, 0] if self.dim == 1 else self.members

    @classmethod
    def uniform(cls, n, low=-2.0, high=2.0, dim=1, seed=0):
        """``n`` members uniform on ``[low, high]^dim`` from stream ``(seed, 0)``."""
        u = stream(seed, 0).random((int(n), int(dim)))
        return cls(low + (high - low) * u, 0, check_seed(seed))

    def to_csv(self, path):
        write_csv(path, self.members)

    def to_binary(self, path):
        write_binary(path, self.members)


def _initial_aux(spec, X, aux):
    if aux is not None:
        return np.ascontiguousarray(np.asarray(aux, dtype=np.float64).reshape(X.shape))
    if spec.kind == "nag-sc":
        return X.copy()
    return np.zeros_like(X)


def iterate(spec, x0, n, burn_in=0, thin=1, seed=0, aux0=None):
    """Run one trajectory.

    Discards ``burn_in`` steps, then records the current state and every
    ``thin``-th of the next ``n`` states (``1 + n // thin`` states in all).
    Momentum maps start from ``v = 0`` (heavy ball) or ``y = x0`` (NAG-SC)
    unless ``aux0`` is given.  Stochastic maps read noise from stream
    ``(seed, 0)``, the same stream member 0 of an ensemble would use.
    """
    n, burn_in, thin = int(n), int(burn_in), int(thin)
    if n < 0 or burn_in < 0 or thin < 1:
        raise DomainError("need n >= 0, burn_in >= 0 and thin >= 1")
    seed = check_seed(seed)
    X = _state(x0, spec.dim).reshape(1, -1)
    start = X[0].copy()
    V = _initial_aux(spec, X, aux0)
    if burn_in:
        _run(spec, X, V, burn_in, seed, 0, 0, thin=burn_in + 1)
    count = 1 + n // thin
    rec = np.empty((count, 1, spec.dim))
    recv = np.empty((count, 1, spec.dim))
    rec[0] = X
    recv[0] = V
    if n:
        _run(spec, X, V, n, seed, 0, burn_in, thin, rec[1:], recv[1:])
    aux = recv[:, 0, :] if spec.momentum else None
    return Orbit(rec[:, 0, :], spec, burn_in, thin, seed, start, aux)


def evolve_ensemble(spec, init, n, seed=None, workers=1):
    """Advance every member ``n`` steps and return a new :class:`Ensemble`.

    Stochastic maps draw member ``j``'s noise for global step ``t`` from
    stream ``(seed, j)`` at offset ``t * q``; results therefore do not depend
    on ``workers``.  ``seed`` defaults to ``init.seed``.
    """
    if not isinstance(init, Ensemble):
        init = Ensemble(init)
    n = int(n)
    if n < 0:
        raise DomainError("n must be nonnegative")
    if init.dim != spec.dim:
        raise DomainError("ensemble dimension does not match the map")
    seed = check_seed(init.seed if seed is None else seed)
    X = init.members.copy()
    V = _initial_aux(spec, X, init.aux)
    if n:
        workers = max(1, int(workers))
        m = X.shape[0]
        bounds = np.linspace(0, m, min(workers, m) + 1).astype(int)
        jobs = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

        def job(lohi):
            lo, hi = lohi
            Xc = np.ascontiguousarray(X[lo:hi])
            Vc = np.ascontiguousarray(V[lo:hi])
            try:
                _run(spec, Xc, Vc, n, seed, lo, init.generation)
            except DivergenceError as exc:
                return exc
            X[lo:hi] = Xc
            V[lo:hi] = Vc
            return None

        if len(jobs) == 1:
            errors = [job(jobs[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
                errors = list(pool.map(job, jobs))
        errors = [e for e in errors if e is not None]
        if errors:
            raise min(errors, key=lambda e: (e.step, e.member))
    aux = V if spec.momentum else None
    return Ensemble(X, init.generation + n, seed, aux)
