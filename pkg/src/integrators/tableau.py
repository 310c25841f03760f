"""
Butcher tableaus

Collocation tableaus (Gauss-Legendre, Radau IIA) are computed from their
nodes: A_ij is the integral of the j-th Lagrange basis polynomial over
[0, c_i] and b_j its integral over [0, 1].
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from numpy.polynomial import legendre
from numpy.polynomial import polynomial as P

from src.utils.errors import ArgumentError


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    implicit: bool = True

    def __post_init__(self) -> None:
        s = self.b.size
        if self.A.shape != (s, s) or self.c.shape != (s,):
            raise ArgumentError(f"inconsistent tableau shapes for {self.name}")
        if abs(self.b.sum() - 1.0) > 1e-12:
            raise ArgumentError(f"tableau {self.name} violates sum(b) = 1")

    @property
    def stages(self) -> int:
        return int(self.b.size)


def _collocation(name: str, nodes: np.ndarray, order: int) -> ButcherTableau:
    s = nodes.size
    A = np.zeros((s, s))
    b = np.zeros(s)
    for j in range(s):
        others = np.delete(nodes, j)
        basis = P.polyfromroots(others) / np.prod(nodes[j] - others)
        antiderivative = P.polyint(basis)
        b[j] = P.polyval(1.0, antiderivative)
        A[:, j] = P.polyval(nodes, antiderivative)  # 下限 0 的積分值為 0
    return ButcherTableau(name=name, A=A, b=b, c=nodes.copy(), order=order)


@lru_cache(maxsize=None)
def gauss_legendre(stages: int) -> ButcherTableau:
    if stages < 1:
        raise ArgumentError("Gauss-Legendre needs at least one stage")
    roots, _ = legendre.leggauss(stages)
    return _collocation(f"gauss{stages}", np.sort((roots + 1.0) / 2.0), 2 * stages)


@lru_cache(maxsize=None)
def radau_iia(stages: int) -> ButcherTableau:
    if stages < 1:
        raise ArgumentError("Radau IIA needs at least one stage")
    # P_s - P_{s-1} 在 [0, 1] 上的根，最後一個節點為 1
    coefficients = np.zeros(stages + 1)
    coefficients[stages] = 1.0
    coefficients[stages - 1] = -1.0
    roots = np.real(legendre.legroots(coefficients))
    nodes = np.sort((roots + 1.0) / 2.0)
    nodes[-1] = 1.0
    return _collocation(f"radau{stages}", nodes, 2 * stages - 1)


@lru_cache(maxsize=None)
def rk4() -> ButcherTableau:
    A = np.zeros((4, 4))
    A[1, 0] = 0.5
    A[2, 1] = 0.5
    A[3, 2] = 1.0
    return ButcherTableau(
        name="rk4",
        A=A,
        b=np.array([1.0, 2.0, 2.0, 1.0]) / 6.0,
        c=np.array([0.0, 0.5, 0.5, 1.0]),
        order=4,
        implicit=False,
    )


def by_name(name: str) -> ButcherTableau:
    """'gauss4' / 'radau3' / 'rk4' 等名稱轉成 tableau"""
    key = name.lower()
    if key == "rk4":
        return rk4()
    for prefix, factory in (("gauss", gauss_legendre), ("radau", radau_iia)):
        if key.startswith(prefix) and key[len(prefix) :].isdigit():
            return factory(int(key[len(prefix) :]))
    raise ArgumentError(f"unknown tableau '{name}'")


def stability_function(
    tableau: ButcherTableau, z: Union[complex, np.ndarray]
) -> Union[complex, np.ndarray]:
    """R(z) = 1 + z b^T (I - z A)^{-1} 1"""
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    s = tableau.stages
    ones = np.ones(s)
    values = np.empty_like(z_arr)
    for index, zi in np.ndenumerate(z_arr):
        stage = np.linalg.solve(np.eye(s) - zi * tableau.A, ones)
        values[index] = 1.0 + zi * tableau.b @ stage
    if np.ndim(z) == 0:
        return complex(values.reshape(-1)[0])
    return values
