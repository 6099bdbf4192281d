"""Local batched C2C transforms, the brute-force DFT oracle and the plan cache.

Forward transforms are unnormalized.  Inverse transforms carry ``1/N`` by
default; the batched ``apply_*`` functions accept an explicit ``scale`` so
the 3D pipeline can fold the whole ``1/(nx*ny*nz)`` into its last stage.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .grid import chunk_view

FORWARD, INVERSE = "forward", "inverse"
SUPPORTED_KINDS = ("c2c",)
RESERVED_KINDS = ("r2c", "r2r")


class UnsupportedTransformError(ValueError):
    pass


class PlanMismatchError(ValueError):
    pass


def _sign(direction: str) -> int:
    if direction == FORWARD:
        return -1
    if direction == INVERSE:
        return 1
    raise ValueError(f"unknown direction {direction!r}")


def _roots(n: int, exponents: np.ndarray, sign: int) -> np.ndarray:
    # Reduce k*n mod N in integers first so large products keep full accuracy.
    return np.exp(sign * 2j * np.pi * (np.mod(exponents, n) / n))


def naive_dft_1d(x, direction: str = FORWARD) -> np.ndarray:
    """Direct O(N^2) DFT. Used as the independent oracle."""
    x = np.asarray(x)
    n = x.shape[0]
    if n < 1:
        raise ValueError("length must be >= 1")
    k = np.arange(n)
    w = _roots(n, np.outer(k, k), _sign(direction))
    out = w @ x.astype(np.complex128)
    if direction == INVERSE:
        out /= n
    return out


def naive_dft_3d(a, direction: str = FORWARD) -> np.ndarray:
    """Direct triple-sum 3D DFT of an ``(nx, ny, nz)`` array, evaluated in f64."""
    a = np.asarray(a, dtype=np.complex128)
    sign = _sign(direction)
    mats = []
    for n in a.shape:
        k = np.arange(n)
        mats.append(_roots(n, np.outer(k, k), sign))
    # optimize=False keeps the literal sum over (i, j, l) for every (kx, ky, kz).
    out = np.einsum("ai,bj,cl,ijl->abc", mats[0], mats[1], mats[2], a, optimize=False)
    if direction == INVERSE:
        out /= a.size
    return out


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


class LinePlan:
    """Unnormalized length-``n`` transform over a batch of contiguous lines.

    Power-of-two lengths use iterative radix-2; other composites split off
    their smallest prime factor recursively; primes use a dense DFT matrix.
    """

    def __init__(self, n: int, direction: str, dtype=np.complex128):
        if n < 1:
            raise ValueError("length must be >= 1")
        self.n = n
        self.direction = direction
        self.dtype = np.dtype(dtype)
        sign = _sign(direction)
        if n == 1:
            self.strategy = "identity"
        elif n & (n - 1) == 0:
            self.strategy = "radix2"
            bits = n.bit_length() - 1
            idx = np.arange(n)
            rev = np.zeros(n, dtype=np.intp)
            for b in range(bits):
                rev |= ((idx >> b) & 1) << (bits - 1 - b)
            self.bitrev = rev
            self.stage_twiddles = []
            h = 1
            while h < n:
                self.stage_twiddles.append(
                    _roots(2 * h, np.arange(h), sign).astype(self.dtype))
                h *= 2
        else:
            p = _smallest_factor(n)
            if p == n:
                self.strategy = "dft"
                k = np.arange(n)
                self.matrix = _roots(n, np.outer(k, k), sign).astype(self.dtype)
            else:
                self.strategy = "mixed"
                m = n // p
                self.radix = p
                self.sub = LinePlan(m, direction, dtype)
                self.twiddles = _roots(n, np.outer(np.arange(p), np.arange(m)), sign).astype(self.dtype)
                q = np.arange(p)
                self.butterfly = _roots(p, np.outer(q, q), sign).astype(self.dtype)

    def execute(self, lines: np.ndarray) -> np.ndarray:
        """Transform a ``(batch, n)`` array; returns a new array."""
        x = np.asarray(lines, dtype=self.dtype)
        if x.shape[-1] != self.n:
            raise PlanMismatchError(f"line length {x.shape[-1]} != plan length {self.n}")
        if self.strategy == "identity":
            return x.copy()
        if self.strategy == "dft":
            return x @ self.matrix.T
        if self.strategy == "radix2":
            return self._radix2(x)
        return self._mixed(x)

    def _radix2(self, x: np.ndarray) -> np.ndarray:
        batch = x.shape[0]
        x = x[:, self.bitrev]
        h = 1
        for tw in self.stage_twiddles:
            blocks = x.reshape(batch, self.n // (2 * h), 2, h)
            even = blocks[:, :, 0, :]
            odd = blocks[:, :, 1, :] * tw
            x = np.stack((even + odd, even - odd), axis=2).reshape(batch, self.n)
            h *= 2
        return x

    def _mixed(self, x: np.ndarray) -> np.ndarray:
        batch, p, m = x.shape[0], self.radix, self.sub.n
        # Decimation in time: subsequence j holds x[j], x[j+p], x[j+2p], ...
        sub = x.reshape(batch, m, p).transpose(0, 2, 1).reshape(batch * p, m)
        y = self.sub.execute(sub).reshape(batch, p, m) * self.twiddles
        if p == 2:
            out = np.stack((y[:, 0] + y[:, 1], y[:, 0] - y[:, 1]), axis=1)
        else:
            out = np.matmul(self.butterfly, y)
        return out.reshape(batch, self.n)


def fast_fft_line(plan, line) -> np.ndarray:
    """Transform one line; inverse carries ``1/N`` to match ``naive_dft_1d``."""
    lp = plan if isinstance(plan, LinePlan) else next(iter(plan.line_plans.values()))
    out = lp.execute(np.asarray(line).reshape(1, -1))[0]
    if lp.direction == INVERSE:
        out = out / lp.n
    return out


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    direction: str
    dims: tuple[int, ...]
    length_per_dim: tuple[int, ...]
    batch: int

    def __post_init__(self):
        if not self.dims or len(set(self.dims)) != len(self.dims):
            raise ValueError("dims must be non-empty and distinct")
        if any(n < 1 for n in self.length_per_dim) or self.batch < 1:
            raise ValueError("lengths and batch must be >= 1")


@dataclass(frozen=True)
class PlanKey:
    element_type: str
    extent: tuple[int, int, int]
    kind: str
    direction: str
    dims: tuple[int, ...]

    @classmethod
    def for_chunk(cls, dtype, extent, dims, direction=FORWARD, kind="c2c") -> PlanKey:
        return cls(np.dtype(dtype).name, tuple(int(e) for e in extent), kind, direction,
                   tuple(dims))

    def spec(self) -> TransformSpec:
        lengths = tuple(self.extent[d] for d in self.dims)
        batch = int(np.prod(self.extent)) // int(np.prod(lengths))
        return TransformSpec(self.kind, self.direction, self.dims, lengths, batch)


@dataclass(frozen=True)
class FftPlan:
    key: PlanKey
    plan_id: int
    line_plans: dict = field(compare=False, repr=False)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.key.element_type)


def build_plan(key: PlanKey, plan_id: int) -> FftPlan:
    if key.kind in RESERVED_KINDS:
        raise UnsupportedTransformError(f"transform kind {key.kind!r} is reserved, only c2c is implemented")
    if key.kind not in SUPPORTED_KINDS:
        raise UnsupportedTransformError(f"unknown transform kind {key.kind!r}")
    key.spec()  # validates dims and lengths
    lines = {d: LinePlan(key.extent[d], key.direction, key.element_type) for d in key.dims}
    return FftPlan(key, plan_id, lines)


class PlanCache:
    """Plans keyed structurally; each distinct key is built at most once."""

    def __init__(self):
        self._plans: dict[PlanKey, FftPlan] = {}
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self.creations = 0
        self.hits = 0

    def __len__(self) -> int:
        return len(self._plans)

    def __contains__(self, key) -> bool:
        return key in self._plans

    def get_or_create_plan(self, key: PlanKey) -> FftPlan:
        with self._lock:
            plan = self._plans.get(key)
            if plan is not None:
                self.hits += 1
                return plan
            plan = build_plan(key, next(self._ids))
            self._plans[key] = plan
            self.creations += 1
            return plan


def get_or_create_plan(cache: PlanCache, key: PlanKey) -> FftPlan:
    return cache.get_or_create_plan(key)


def _check(plan: FftPlan, view: np.ndarray, axes) -> None:
    if view.dtype != plan.dtype:
        raise PlanMismatchError(f"buffer dtype {view.dtype} != plan dtype {plan.dtype}")
    if tuple(view.shape) != plan.key.extent:
        raise PlanMismatchError(f"extent {tuple(view.shape)} != plan extent {plan.key.extent}")
    missing = [a for a in axes if a not in plan.line_plans]
    if missing:
        raise PlanMismatchError(f"plan has no kernel for axes {missing}")


def _default_scale(plan: FftPlan, axes) -> float:
    if plan.key.direction != INVERSE:
        return 1.0
    return 1.0 / float(np.prod([plan.key.extent[a] for a in axes]))


def apply_fft_view(plan: FftPlan, view: np.ndarray, axes=None, scale: float | None = None) -> None:
    """In-place transform of a 3D ``(x, y, z)`` view along ``axes`` in order."""
    axes = plan.key.dims if axes is None else tuple(axes)
    _check(plan, view, axes)
    if scale is None:
        scale = _default_scale(plan, axes)
    for i, axis in enumerate(axes):
        lp = plan.line_plans[axis]
        moved = np.moveaxis(view, axis, -1)
        out = lp.execute(moved.reshape(-1, lp.n))
        if i == len(axes) - 1 and scale != 1.0:
            out *= scale
        moved[...] = out.reshape(moved.shape)


def apply_fft_1d(plan: FftPlan, buffer: np.ndarray, extent, axis: int,
                 scale: float | None = None) -> None:
    if buffer.size != int(np.prod(extent)):
        raise PlanMismatchError(f"buffer length {buffer.size} != prod{tuple(extent)}")
    apply_fft_view(plan, chunk_view(buffer, extent), (axis,), scale)


def apply_fft_2d(plan: FftPlan, buffer: np.ndarray, extent, axes=(0, 1),
                 scale: float | None = None) -> None:
    if buffer.size != int(np.prod(extent)):
        raise PlanMismatchError(f"buffer length {buffer.size} != prod{tuple(extent)}")
    apply_fft_view(plan, chunk_view(buffer, extent), tuple(axes), scale)
