"""Block partitions of a flat parameter vector and the penalty weight layout.

A model with m parameter blocks of sizes n_1, ..., n_m is stored as one flat
vector of length n = sum(n_j).  ``BlockStructure`` records the partition,
``PenaltySpec`` attaches the mixing parameter and the per-block / per-parameter
penalty weights, and ``BlockVector`` couples a flat value array with its
partition.  Unpenalized blocks (an intercept, typically) carry zero weights so
the solver can treat every block uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BlockStructure",
    "PenaltySpec",
    "BlockVector",
    "count_nonzero_blocks",
    "count_nonzero_params",
]


@dataclass(frozen=True)
class BlockStructure:
    """Partition of ``n`` flat parameters into ``m`` contiguous blocks.

    Parameters
    ----------
    dims : tuple of int
        Block sizes, all positive.  Block ``J`` (0-based) occupies the flat
        index range ``offsets[J]:offsets[J + 1]``.
    """

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) == 0:
            raise ValueError("a block structure needs at least one block")
        if any(d <= 0 for d in dims):
            raise ValueError("block sizes must be positive, got %r" % (dims,))
        object.__setattr__(self, "dims", dims)
        offsets = np.zeros(len(dims) + 1, dtype=np.intp)
        np.cumsum(dims, out=offsets[1:])
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @property
    def m(self):
        return len(self.dims)

    @property
    def n(self):
        return int(self.offsets[-1])

    def slice(self, J):
        """Flat slice covering block ``J``."""
        if not 0 <= J < self.m:
            raise IndexError("block index %d out of range [0, %d)" % (J, self.m))
        return slice(int(self.offsets[J]), int(self.offsets[J + 1]))

    def check_flat(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n,):
            raise ValueError(
                "flat vector has shape %r, expected (%d,)" % (values.shape, self.n)
            )
        return values


@dataclass(frozen=True)
class PenaltySpec:
    """Sparse group penalty: ``(1 - alpha) * sum_J gamma_J * ||b_J||_2
    + alpha * sum_i xi_i * |b_i|``.

    ``alpha`` in [0, 1] trades the group term against the parameterwise term;
    ``gamma`` holds one nonnegative weight per block and ``xi`` one per
    parameter.  A block whose gamma and xi entries are all zero is unpenalized
    and is skipped by zero tests, screening, and the lambda_max computation.
    """

    structure: BlockStructure
    alpha: float
    gamma: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        alpha = float(self.alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1], got %r" % alpha)
        gamma = np.ascontiguousarray(self.gamma, dtype=float)
        xi = np.ascontiguousarray(self.xi, dtype=float)
        if gamma.shape != (self.structure.m,):
            raise ValueError("gamma must hold one weight per block")
        if xi.shape != (self.structure.n,):
            raise ValueError("xi must hold one weight per parameter")
        if np.any(gamma < 0) or np.any(xi < 0):
            raise ValueError("penalty weights must be nonnegative")
        gamma.setflags(write=False)
        xi.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "xi", xi)
        unpen = np.zeros(self.structure.m, dtype=bool)
        for J in range(self.structure.m):
            sl = self.structure.slice(J)
            unpen[J] = gamma[J] == 0.0 and not np.any(xi[sl])
        unpen.setflags(write=False)
        object.__setattr__(self, "unpenalized", unpen)

    @classmethod
    def build(cls, structure, alpha, gamma="sqrt_dim", xi=1.0, unpenalized_blocks=()):
        """Assemble a spec from weight policies.

        ``gamma`` may be the string ``"sqrt_dim"`` (gamma_J = sqrt(n_J), the
        default used throughout), a scalar, or an array of per-block weights;
        ``xi`` a scalar or per-parameter array.  Blocks listed in
        ``unpenalized_blocks`` get both weights zeroed.
        """
        m, n = structure.m, structure.n
        if isinstance(gamma, str):
            if gamma != "sqrt_dim":
                raise ValueError("unknown gamma policy %r" % gamma)
            gamma_arr = np.sqrt(np.asarray(structure.dims, dtype=float))
        else:
            gamma_arr = np.broadcast_to(np.asarray(gamma, dtype=float), (m,)).copy()
        xi_arr = np.broadcast_to(np.asarray(xi, dtype=float), (n,)).copy()
        for J in unpenalized_blocks:
            gamma_arr[J] = 0.0
            xi_arr[structure.slice(J)] = 0.0
        return cls(structure=structure, alpha=alpha, gamma=gamma_arr, xi=xi_arr)

    def xi_block(self, J):
        return self.xi[self.structure.slice(J)]

    def penalized_blocks(self):
        return [J for J in range(self.structure.m) if not self.unpenalized[J]]


class BlockVector:
    """A flat parameter vector together with its block partition.

    Blocks are read and written through views into the flat array; nonzero
    bookkeeping is derived from the stored values, so a block counts as
    nonzero exactly when some entry differs from 0.0 under exact float
    comparison.
    """

    __slots__ = ("structure", "values")

    def __init__(self, structure, values=None):
        self.structure = structure
        if values is None:
            self.values = np.zeros(structure.n)
        else:
            self.values = structure.check_flat(np.array(values, dtype=float))

    def block(self, J):
        """Writable view of block ``J``; mutations land in the flat array."""
        return self.values[self.structure.slice(J)]

    def set_block(self, J, vals):
        sl = self.structure.slice(J)
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (sl.stop - sl.start,):
            raise ValueError(
                "block %d has size %d, got values of shape %r"
                % (J, sl.stop - sl.start, vals.shape)
            )
        self.values[sl] = vals

    @property
    def nonzero_blocks(self):
        """Set of block indices with at least one nonzero entry."""
        return {
            J for J in range(self.structure.m) if np.any(self.block(J) != 0.0)
        }

    def copy(self):
        return BlockVector(self.structure, self.values.copy())

    def __len__(self):
        return self.structure.n

    def __repr__(self):
        return "BlockVector(m=%d, n=%d, nonzero_blocks=%d)" % (
            self.structure.m,
            self.structure.n,
            len(self.nonzero_blocks),
        )


def count_nonzero_blocks(v):
    """Number of blocks of ``v`` with at least one exactly-nonzero entry."""
    return len(v.nonzero_blocks)


def count_nonzero_params(v):
    """Number of exactly-nonzero entries of ``v``."""
    return int(np.count_nonzero(v.values))
