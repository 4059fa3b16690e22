"""Effective single-excitation model of the dual Heisenberg chain.

Two identical ferromagnetic/antiferromagnetic Heisenberg chains of ``N``
spins each carry one logical qubit in the odd-parity subspace of a node
pair.  Because each chain Hamiltonian conserves its excitation number, the
coded state stays inside ``span{|psi_n>}`` (one vector per node) and the
whole protocol reduces to an ``N``-dimensional problem:

* the hopping amplitude between neighbouring nodes is ``2J``
  (from ``sx sx + sy sy = 2 (s+ s- + s- s+)``);
* the diagonal is ``J (N - 1 - 2 t_n)`` where ``t_n`` counts the chain
  bonds touching node ``n``;
* the receiver's parity observable is ``diag(+1, ..., +1, -1)``.

The brute-force :class:`FullModel` builds the same physics on the full
``2**(2N)``-dimensional space and is only meant as an oracle for small N.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Literal

import numpy as np
import scipy.sparse as sp

FULL_MODEL_MAX_SITES = 6


class ConfigError(ValueError):
    """Raised when a configuration value is out of range.

    ``field_name`` carries the offending field so front ends can name it.
    """

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass(frozen=True)
class ChainConfig:
    """Physical and numerical parameters, rates in units of J and times in 1/J.

    ``field_sites`` selects whether the Zeeman term acts on all ``N`` spins
    of each chain (``"all"``, the default) or only on spins ``1..N-1``
    (``"truncated"``, the literal upper limit of the printed chain
    Hamiltonian).
    """

    n_sites: int = 10
    coupling: float = 1.0
    field: float = 0.0
    meas_strength: float = 2.0
    efficiency: float = 1.0
    dt: float = 1e-4
    fidelity_threshold: float = 0.99
    t_max: float = 2000.0
    field_sites: Literal["all", "truncated"] = "all"

    def __post_init__(self):
        if isinstance(self.n_sites, bool) or int(self.n_sites) != self.n_sites:
            raise ConfigError("n_sites", f"must be an integer, got {self.n_sites!r}")
        if self.n_sites < 2:
            raise ConfigError("n_sites", f"must be >= 2, got {self.n_sites}")
        for name in ("coupling", "field", "meas_strength", "efficiency", "dt",
                     "fidelity_threshold", "t_max"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")
        if self.meas_strength < 0:
            raise ConfigError("meas_strength", f"must be >= 0, got {self.meas_strength}")
        if not 0 < self.efficiency <= 1:
            raise ConfigError("efficiency", f"must lie in (0, 1], got {self.efficiency}")
        if self.dt <= 0:
            raise ConfigError("dt", f"must be > 0, got {self.dt}")
        if not 0 < self.fidelity_threshold < 1:
            raise ConfigError(
                "fidelity_threshold", f"must lie in (0, 1), got {self.fidelity_threshold}"
            )
        if self.t_max <= self.dt:
            raise ConfigError("t_max", f"must exceed dt, got {self.t_max}")
        if self.field_sites not in ("all", "truncated"):
            raise ConfigError("field_sites", f"must be 'all' or 'truncated', got {self.field_sites!r}")

    @property
    def max_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def replace(self, **changes) -> "ChainConfig":
        return ChainConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CodedQubit:
    alpha: complex = 1 / math.sqrt(2)
    beta: complex = 1 / math.sqrt(2)

    def __post_init__(self):
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(norm - 1) > 1e-12:
            raise ConfigError("qubit", f"|alpha|^2 + |beta|^2 must be 1, got {norm}")


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    """Real symmetric tridiagonal Hamiltonian plus the diagonal parity operator."""

    hamiltonian: np.ndarray
    parity: np.ndarray

    def __post_init__(self):
        self.hamiltonian.setflags(write=False)
        self.parity.setflags(write=False)

    @property
    def n(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.hamiltonian).copy()

    @property
    def offdiag(self) -> float:
        return float(self.hamiltonian[0, 1])

    def expect_parity(self, rho: np.ndarray) -> float:
        """<X> for a sector density matrix; equals 1 - 2 rho_NN at unit trace."""
        return float(np.real(np.dot(self.parity, np.diag(rho))))

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "diag": self.diag.tolist(),
            "offdiag": self.offdiag,
            "parity": self.parity.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "EffectiveModel":
        data = json.loads(text)
        n = data["n"]
        h = np.diag(np.asarray(data["diag"], dtype=float))
        h[np.arange(n - 1), np.arange(1, n)] = data["offdiag"]
        h[np.arange(1, n), np.arange(n - 1)] = data["offdiag"]
        return cls(hamiltonian=h, parity=np.asarray(data["parity"], dtype=float))


def bond_counts(n: int) -> np.ndarray:
    t = np.full(n, 2)
    t[0] = t[-1] = 1
    return t


def build_effective_model(config: ChainConfig) -> EffectiveModel:
    n = config.n_sites
    if n < 2:
        raise ConfigError("n_sites", f"must be >= 2, got {n}")
    J = config.coupling
    diag = J * (n - 1 - 2 * bond_counts(n)).astype(float)
    if config.field_sites == "truncated" and config.field != 0:
        # Field on spins 1..N-1 only: the end node sits 2B below the rest.
        diag[-1] -= 2 * config.field
    h = np.diag(diag)
    idx = np.arange(n - 1)
    h[idx, idx + 1] = 2 * J
    h[idx + 1, idx] = 2 * J
    parity = np.ones(n)
    parity[-1] = -1.0
    return EffectiveModel(hamiltonian=h, parity=parity)


def initial_state(model: EffectiveModel) -> np.ndarray:
    """Coded qubit sitting on the sender's node: rho = |psi_1><psi_1|."""
    rho = np.zeros((model.n, model.n), dtype=complex)
    rho[0, 0] = 1.0
    return rho


# -- brute-force oracle -------------------------------------------------------

# Single-spin basis order (|0>, |1>) with sz|0> = -|0>.
_SX = sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
_SY = sp.csr_matrix(np.array([[0, 1j], [-1j, 0]], dtype=complex))
_SZ = sp.csr_matrix(np.diag([-1.0, 1.0]).astype(complex))
_ID = sp.identity(2, dtype=complex, format="csr")


@dataclass(frozen=True, eq=False)
class FullModel:
    """Dual chain on the full ``2**(2N)`` space.

    Spin ``(chain, site)`` with chain in {1, 2} and site in 1..N maps to
    tensor factor ``(chain - 1) * N + (site - 1)`` (most significant first).
    """

    n_sites: int
    hamiltonian: sp.csr_matrix
    parity_op: sp.csr_matrix
    coded_basis: np.ndarray  # shape (2**(2N), N), columns |psi_n>
    field_term: sp.csr_matrix = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.hamiltonian.shape[0]

    def excitation_number(self, chain: int) -> sp.csr_matrix:
        n = self.n_sites
        ops = [(_SZ + _ID) / 2 for _ in range(n)]
        return sum(_site_op(op, (chain - 1) * n + s, 2 * n) for s, op in enumerate(ops))


def _site_op(op, position: int, n_spins: int) -> sp.csr_matrix:
    factors = [_ID] * n_spins
    factors[position] = op
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)


def _basis_index(bits: list[int]) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | b
    return out


def build_full_model(config: ChainConfig, qubit: CodedQubit) -> FullModel:
    n = config.n_sites
    if n > FULL_MODEL_MAX_SITES:
        raise ValueError(
            f"oracle scale exceeded: n_sites={n} > {FULL_MODEL_MAX_SITES} "
            f"(full space would have dimension 2**{2 * n})"
        )
    n_spins = 2 * n
    dim = 2 ** n_spins
    J, B = config.coupling, config.field
    h = sp.csr_matrix((dim, dim), dtype=complex)
    zeeman = sp.csr_matrix((dim, dim), dtype=complex)
    field_sites = n if config.field_sites == "all" else n - 1
    for chain in range(2):
        off = chain * n
        for s in range(n - 1):
            a, b = off + s, off + s + 1
            for pauli in (_SX, _SY, _SZ):
                h = h + J * (_site_op(pauli, a, n_spins) @ _site_op(pauli, b, n_spins))
        for s in range(field_sites):
            zeeman = zeeman + B * _site_op(_SZ, off + s, n_spins)
    h = (h + zeeman).tocsr()
    parity = (_site_op(_SZ, n - 1, n_spins) @ _site_op(_SZ, 2 * n - 1, n_spins)).tocsr()

    basis = np.zeros((dim, n), dtype=complex)
    for site in range(n):
        odd_a = [0] * n_spins
        odd_a[n + site] = 1          # |0>^(1)_n |1>^(2)_n
        odd_b = [0] * n_spins
        odd_b[site] = 1              # |1>^(1)_n |0>^(2)_n
        basis[_basis_index(odd_a), site] += qubit.alpha
        basis[_basis_index(odd_b), site] += qubit.beta
    return FullModel(n_sites=n, hamiltonian=h, parity_op=parity,
                     coded_basis=basis, field_term=zeeman.tocsr())


def restrict(full: FullModel, op: sp.spmatrix | None = None) -> np.ndarray:
    """Matrix of ``op`` (default: the Hamiltonian) in the coded basis."""
    op = full.hamiltonian if op is None else op
    v = full.coded_basis
    return v.conj().T @ (op @ v)


def block_residual(full: FullModel, op: sp.spmatrix) -> float:
    """Largest component of ``op |psi_n>`` that leaves the coded span."""
    v = full.coded_basis
    w = op @ v
    return float(np.abs(w - v @ (v.conj().T @ w)).max())
