"""Forward-mode dual numbers over complex numpy arrays.

A :class:`Dual` stores a value array together with a stack of tangent
arrays, one per differentiation direction.  All arithmetic propagates the
tangents exactly (product/quotient/chain rule), so derivatives obtained this
way carry no truncation error.  Tangents always refer to derivatives with
respect to *real* parameters; this makes ``conj`` and ``abs`` legal,
differentiable operations even though they are not complex-analytic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual", "value", "tangent", "seed", "is_dual", "nd",
           "dual_concat", "dual_block2", "dual_array"]


class Dual:
    """Array value plus tangent stack.

    Attributes:
        val: ndarray of shape ``shape``.
        tan: ndarray of shape ``(ndir,) + shape``; ``tan[k]`` is the
            directional derivative along parameter ``k``.
    """

    __slots__ = ("val", "tan")
    # Let Dual win binary ops against plain ndarrays.
    __array_priority__ = 100.0

    def __init__(self, val, tan):
        self.val = np.asarray(val)
        self.tan = np.asarray(tan)
        if self.tan.shape[1:] != self.val.shape:
            raise ValueError(
                f"tangent shape {self.tan.shape} does not extend value shape {self.val.shape}"
            )

    # -- basic introspection -------------------------------------------------

    @property
    def ndir(self) -> int:
        return self.tan.shape[0]

    @property
    def shape(self):
        return self.val.shape

    @property
    def dtype(self):
        return self.val.dtype

    def __repr__(self):
        return f"Dual(val={self.val!r}, ndir={self.ndir})"

    # -- arithmetic ----------------------------------------------------------

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def _tan_for(self, result_shape):
        """Tangent stack viewed as the derivative of the broadcast value."""
        t = _pad_dirs(self.tan, self.val.ndim, len(result_shape))
        return np.broadcast_to(t, t.shape[:1] + tuple(result_shape))

    def __add__(self, other):
        if isinstance(other, Dual):
            v = self.val + other.val
            return Dual(v, self._tan_for(v.shape) + other._tan_for(v.shape))
        v = self.val + other
        return Dual(v, self._tan_for(v.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return self.__add__(-other if isinstance(other, Dual) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if isinstance(other, Dual):
            v = self.val * other.val
            return Dual(v, self._tan_for(v.shape) * other.val
                        + self.val * other._tan_for(v.shape))
        other = np.asarray(other)
        v = self.val * other
        return Dual(v, self._tan_for(v.shape) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            v = self.val * inv
            return Dual(v, (self._tan_for(v.shape) - v * other._tan_for(v.shape)) * inv)
        other = np.asarray(other)
        v = self.val / other
        return Dual(v, self._tan_for(v.shape) / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        v = np.asarray(other) * inv
        return Dual(v, -(v * inv) * self._tan_for(v.shape))

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise TypeError("Dual.__pow__ supports integer exponents only")
        v = self.val ** n
        return Dual(v, n * self.val ** (n - 1) * self.tan)

    def __matmul__(self, other):
        o_val = other.val if isinstance(other, Dual) else np.asarray(other)
        if self.val.ndim == 1 and o_val.ndim == 1:
            t = self.tan @ o_val
            if isinstance(other, Dual):
                t = t + other.tan @ self.val
            return Dual(self.val @ o_val, t)
        if self.val.ndim == 1:
            r = self.reshape(1, -1) @ other
            return Dual(np.squeeze(r.val, -2), np.squeeze(r.tan, -2))
        if o_val.ndim == 1:
            o2 = other.reshape(-1, 1) if isinstance(other, Dual) else o_val[:, None]
            r = self @ o2
            return Dual(np.squeeze(r.val, -1), np.squeeze(r.tan, -1))
        v = self.val @ o_val
        t = _pad_dirs(self.tan, self.val.ndim, v.ndim) @ o_val
        if isinstance(other, Dual):
            t = t + self.val @ _pad_dirs(other.tan, o_val.ndim, v.ndim)
        return Dual(v, t)

    def __rmatmul__(self, other):
        other = np.asarray(other)
        if self.val.ndim == 1 and other.ndim == 1:
            return Dual(other @ self.val, self.tan @ other)
        if self.val.ndim == 1:
            r = other @ self.reshape(-1, 1)
            return Dual(np.squeeze(r.val, -1), np.squeeze(r.tan, -1))
        if other.ndim == 1:
            # leading-1 contraction broadcasts across the direction axis
            return Dual(other @ self.val, other @ self.tan)
        v = other @ self.val
        return Dual(v, other @ _pad_dirs(self.tan, self.val.ndim, v.ndim))

    # -- structural ops ------------------------------------------------------

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.tan[(slice(None),) + _as_tuple(idx)])

    @property
    def T(self):
        return Dual(self.val.T, np.stack([t.T for t in self.tan]))

    @property
    def mT(self):
        """Transpose of the last two axes (matrix transpose, batch aware)."""
        return Dual(np.swapaxes(self.val, -1, -2), np.swapaxes(self.tan, -1, -2))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.tan.reshape((self.ndir,) + tuple(shape)))

    def conj(self):
        return Dual(np.conj(self.val), np.conj(self.tan))

    @property
    def real(self):
        return Dual(self.val.real, self.tan.real)

    @property
    def imag(self):
        return Dual(self.val.imag, self.tan.imag)

    def copy(self):
        return Dual(self.val.copy(), self.tan.copy())

    def astype(self, dtype):
        return Dual(self.val.astype(dtype), self.tan.astype(dtype))

    # -- elementary functions ------------------------------------------------

    def exp(self):
        v = np.exp(self.val)
        return Dual(v, v * self.tan)

    def sqrt(self):
        v = np.sqrt(self.val)
        return Dual(v, 0.5 * self.tan / v)

    def abs2(self):
        """|z|^2 as a real-valued differentiable quantity."""
        v = self.val.real ** 2 + self.val.imag ** 2
        t = 2.0 * (self.val.real * self.tan.real + self.val.imag * self.tan.imag)
        return Dual(v, t)


def _as_tuple(idx):
    return idx if isinstance(idx, tuple) else (idx,)


def _pad_dirs(tan, val_ndim, result_ndim):
    """Insert singleton axes after the direction axis so that elementwise or
    matmul broadcasting treats the tangent exactly like its value."""
    extra = result_ndim - val_ndim
    if extra <= 0:
        return tan
    return tan.reshape(tan.shape[:1] + (1,) * extra + tan.shape[1:])


# -- free helpers -------------------------------------------------------------

def is_dual(x) -> bool:
    return isinstance(x, Dual)


def value(x):
    """Value part of ``x`` (identity for plain arrays)."""
    return x.val if isinstance(x, Dual) else x


def nd(x) -> int:
    """Number of tangent directions carried by ``x`` (0 for plain arrays)."""
    return x.ndir if isinstance(x, Dual) else 0


def tangent(x, ndir: int):
    """Tangent stack of ``x``, or zeros for plain arrays."""
    if isinstance(x, Dual):
        return x.tan
    x = np.asarray(x)
    return np.zeros((ndir,) + x.shape, dtype=x.dtype)


def seed(val, direction: int, ndir: int):
    """Dual scalar/array seeded with d/dq_k = 1 along one direction."""
    val = np.asarray(val, dtype=complex)
    tan = np.zeros((ndir,) + val.shape, dtype=complex)
    tan[direction] = 1.0
    return Dual(val, tan)


def dual_concat(parts, axis=0):
    """Concatenate a mix of plain arrays and Duals along a value axis."""
    if not any(isinstance(p, Dual) for p in parts):
        return np.concatenate(parts, axis)
    ndir = next(p.ndir for p in parts if isinstance(p, Dual))
    vals = [np.asarray(value(p)) for p in parts]
    v = np.concatenate(vals, axis)
    tans = [p.tan if isinstance(p, Dual)
            else np.zeros((ndir,) + pv.shape, dtype=v.dtype)
            for p, pv in zip(parts, vals)]
    tan_axis = axis if axis < 0 else axis + 1
    return Dual(v, np.concatenate(tans, tan_axis))


def dual_block2(blocks):
    """2x2 block matrix [[A, B], [C, D]] over the last two axes."""
    (a, b), (c, d) = blocks
    top = dual_concat([a, b], axis=-1)
    bottom = dual_concat([c, d], axis=-1)
    return dual_concat([top, bottom], axis=-2)


def dual_array(rows):
    """Build an array from (possibly nested) sequences of scalars or Duals.

    Plain output when no entry carries a tangent; otherwise every plain
    entry is promoted with a zero tangent.
    """
    flat = []

    def _walk(obj):
        if isinstance(obj, (list, tuple)):
            return [_walk(o) for o in obj]
        flat.append(obj)
        return obj

    _walk(rows)
    duals = [f for f in flat if isinstance(f, Dual)]
    if not duals:
        return np.array(rows)
    ndir = duals[0].ndir

    def _val(obj):
        if isinstance(obj, (list, tuple)):
            return [_val(o) for o in obj]
        return complex(value(obj)) if np.iscomplexobj(value(obj)) else float(value(obj))

    def _tan(obj, k):
        if isinstance(obj, (list, tuple)):
            return [_tan(o, k) for o in obj]
        return obj.tan[k].item() if isinstance(obj, Dual) else 0.0

    val = np.array(_val(rows))
    tan = np.array([_tan(rows, k) for k in range(ndir)])
    return Dual(val, tan)
