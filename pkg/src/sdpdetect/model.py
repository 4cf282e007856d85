"""System model: constellations, real-valued MIMO instances and the zero-one
constellation expansion ``x = S u``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

_POINT_TOL = 1e-9


def gray_code(n_bits: int) -> np.ndarray:
    """Binary-reflected Gray labels as a ``(2**n_bits, n_bits)`` 0/1 array, MSB first."""
    idx = np.arange(2**n_bits)
    g = idx ^ (idx >> 1)
    shifts = np.arange(n_bits - 1, -1, -1)
    return ((g[:, None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Constellation:
    """An ordered complex point set with a bit label per point.

    ``separable`` is true when the expansion can be done per real dimension:
    either a square Cartesian product of one PAM set with a product labeling
    (QAM), or a purely real PAM set.
    """

    points: np.ndarray
    labels: np.ndarray
    name: str = "custom"
    default_mode: str = "qam"
    separable: bool = field(init=False)
    real_points: Optional[np.ndarray] = field(init=False, repr=False)
    real_labels: Optional[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=complex).ravel()
        labels = np.asarray(self.labels, dtype=np.uint8)
        k = points.size
        if k < 2:
            raise ValueError("constellation needs at least two points")
        n_bits = int(round(math.log2(k)))
        if 2**n_bits != k:
            raise ValueError(f"constellation size {k} is not a power of two")
        if labels.shape != (k, n_bits):
            raise ValueError(f"labels must have shape ({k}, {n_bits}), got {labels.shape}")
        if np.any(labels > 1):
            raise ValueError("labels must be binary")
        if len({tuple(row) for row in labels}) != k:
            raise ValueError("labels are not a bijection onto {0,1}^Nb")
        dist = np.abs(points[:, None] - points[None, :]) + np.eye(k)
        if dist.min() < _POINT_TOL:
            raise ValueError("duplicate constellation points")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        real_points, real_labels = _split_real(points, labels)
        object.__setattr__(self, "separable", real_points is not None)
        object.__setattr__(self, "real_points", real_points)
        object.__setattr__(self, "real_labels", real_labels)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def is_real(self) -> bool:
        return bool(np.all(np.abs(self.points.imag) < _POINT_TOL))

    @property
    def energy(self) -> float:
        """Average symbol energy (uniform priors)."""
        return float(np.mean(np.abs(self.points) ** 2))

    @classmethod
    def pam(cls, order: int) -> "Constellation":
        pts = np.arange(-(order - 1), order, 2, dtype=float)
        return cls(pts, gray_code(int(math.log2(order))), name=f"pam{order}")

    @classmethod
    def qam(cls, order: int) -> "Constellation":
        side = int(round(math.sqrt(order)))
        if side * side != order or side < 2:
            raise ValueError(f"{order}-QAM is not a square constellation")
        pam = np.arange(-(side - 1), side, 2, dtype=float)
        g = gray_code(int(math.log2(side)))
        re, im = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        re, im = re.ravel(), im.ravel()
        pts = pam[re] + 1j * pam[im]
        labels = np.hstack([g[re], g[im]])
        name = "qpsk" if order == 4 else f"{order}qam"
        return cls(pts, labels, name=name)

    @classmethod
    def psk(cls, order: int) -> "Constellation":
        k = np.arange(order)
        pts = np.exp(2j * np.pi * k / order)
        return cls(pts, gray_code(int(math.log2(order))), name=f"{order}psk", default_mode="psk")


def _split_real(points, labels):
    """Return the per-dimension PAM set and labels if the point set allows it."""
    if np.all(np.abs(points.imag) < _POINT_TOL):
        order = np.argsort(points.real)
        return points.real[order].copy(), labels[order].copy()
    n_bits = labels.shape[1]
    if n_bits % 2:
        return None, None
    re_vals = _unique_sorted(points.real)
    im_vals = _unique_sorted(points.imag)
    side = re_vals.size
    if side * side != points.size or im_vals.size != side or not np.allclose(re_vals, im_vals):
        return None, None
    half = n_bits // 2
    re_idx = np.argmin(np.abs(points.real[:, None] - re_vals[None, :]), axis=1)
    im_idx = np.argmin(np.abs(points.imag[:, None] - im_vals[None, :]), axis=1)
    if len(set(zip(re_idx, im_idx))) != points.size:
        return None, None
    pam_labels = np.full((side, half), 255, dtype=np.int16)
    for ri, ii, lab in zip(re_idx, im_idx, labels):
        for idx, bits in ((ri, lab[:half]), (ii, lab[half:])):
            if pam_labels[idx, 0] == 255:
                pam_labels[idx] = bits
            elif not np.array_equal(pam_labels[idx], bits):
                return None, None
    return re_vals, pam_labels.astype(np.uint8)


def _unique_sorted(values):
    v = np.sort(values)
    keep = np.concatenate([[True], np.diff(v) > 1e-7])
    return v[keep]


_BUILTIN = {
    "bpsk": lambda: Constellation.pam(2),
    "pam2": lambda: Constellation.pam(2),
    "pam4": lambda: Constellation.pam(4),
    "pam8": lambda: Constellation.pam(8),
    "qpsk": lambda: Constellation.qam(4),
    "4qam": lambda: Constellation.qam(4),
    "16qam": lambda: Constellation.qam(16),
    "64qam": lambda: Constellation.qam(64),
    "256qam": lambda: Constellation.qam(256),
    "8psk": lambda: Constellation.psk(8),
    "16psk": lambda: Constellation.psk(16),
}


def get_constellation(spec: str) -> Constellation:
    """Resolve a builtin name (``qpsk``, ``16qam``, ``8psk`` ...) or a TOML file path."""
    key = spec.strip().lower()
    if key in _BUILTIN:
        return _BUILTIN[key]()
    path = Path(spec)
    if path.exists():
        return load_constellation(path)
    raise ValueError(f"unknown constellation {spec!r}")


def load_constellation(path) -> Constellation:
    """Read a constellation file with ``points`` ([re, im] pairs), ``labels``
    (bit strings) and optional ``mode`` and ``name``."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    try:
        pts = np.array([complex(re, im) for re, im in data["points"]])
        labels = np.array([[int(c) for c in s] for s in data["labels"]], dtype=np.uint8)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed constellation file {path}: {exc}") from exc
    mode = data.get("mode", "qam")
    if mode not in ("qam", "psk"):
        raise ValueError(f"unknown mode {mode!r} in {path}")
    return Constellation(pts, labels, name=data.get("name", Path(path).stem), default_mode=mode)


def constellation_to_toml(const: Constellation) -> str:
    pts = ", ".join(f"[{float(p.real)!r}, {float(p.imag)!r}]" for p in const.points)
    labels = ", ".join('"' + "".join(str(b) for b in row) + '"' for row in const.labels)
    return f'name = "{const.name}"\nmode = "{const.default_mode}"\npoints = [{pts}]\nlabels = [{labels}]\n'


def complex_to_real(h_complex, y_complex):
    """Real-valued equivalent of a complex linear model.

    Returns ``[[Re H, -Im H], [Im H, Re H]]`` and ``[Re y; Im y]`` so that
    ``H @ [Re x; Im x] == [Re(Hx); Im(Hx)]``.
    """
    h = np.atleast_2d(np.asarray(h_complex, dtype=complex))
    y = np.asarray(y_complex, dtype=complex).ravel()
    if h.shape[0] != y.size:
        raise ValueError(f"channel has {h.shape[0]} rows but y has {y.size} entries")
    hr = np.block([[h.real, -h.imag], [h.imag, h.real]])
    return hr, np.concatenate([y.real, y.imag])


def stack_complex(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    return np.concatenate([v.real, v.imag])


@dataclass(frozen=True, eq=False)
class SystemInstance:
    """One detection problem ``y = H x + n`` in real form.

    The Eq.-(2) prefactor ``sqrt(snr / (m_complex * e_s_av))`` is already
    folded into ``h``.  ``n_complex``/``m_complex`` are ``None`` for systems
    that are real from the start (PAM on a real channel).
    """

    h: np.ndarray
    y: np.ndarray
    snr: float
    constellation: Constellation
    n_complex: Optional[int] = None
    m_complex: Optional[int] = None
    e_s_av: float = 1.0

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if h.shape[0] != y.size:
            raise ValueError(f"H has {h.shape[0]} rows but y has {y.size} entries")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not self.e_s_av > 0:
            raise ValueError("e_s_av must be positive")
        if self.n_complex is not None and h.shape != (2 * self.m_complex, 2 * self.n_complex):
            raise ValueError(f"H shape {h.shape} does not match {self.m_complex}x{self.n_complex} complex antennas")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_complex(cls, h_complex, y_complex, snr, constellation) -> "SystemInstance":
        """Build from the unscaled complex channel and the complex received vector."""
        h_complex = np.atleast_2d(h_complex)
        m, n = h_complex.shape
        es = constellation.energy
        hr, yr = complex_to_real(h_complex, y_complex)
        return cls(math.sqrt(snr / (m * es)) * hr, yr, snr, constellation, n, m, es)

    @property
    def noise_var(self) -> float:
        """Per-real-component noise variance in this (folded) normalization."""
        return 0.5 if self.n_complex is not None else 1.0


@dataclass(frozen=True, eq=False)
class ExpansionStructure:
    """Zero-one expansion ``x = S u`` with one active entry per block.

    ``point_sets[p]`` holds the candidate values of block ``p`` (real for
    per-dimension expansion, complex for joint PSK symbols) and
    ``labels[p]`` their bit labels, or ``None`` when bits are meaningless
    (lattice-reduced windows).
    """

    s: np.ndarray
    a: np.ndarray
    point_sets: tuple
    labels: Optional[tuple]
    mode: str

    @property
    def n_dims(self) -> int:
        return len(self.point_sets)

    @property
    def block_sizes(self) -> tuple:
        return tuple(len(p) for p in self.point_sets)

    @property
    def k(self) -> Optional[int]:
        sizes = set(self.block_sizes)
        return sizes.pop() if len(sizes) == 1 else None

    @property
    def n(self) -> int:
        return int(sum(self.block_sizes))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_sizes)])

    def x_of(self, u) -> np.ndarray:
        return self.s @ np.asarray(u, dtype=float)

    def selector(self, indices) -> np.ndarray:
        """Selector vector for per-block candidate indices."""
        u = np.zeros(self.n)
        u[self.offsets[:-1] + np.asarray(indices, dtype=int)] = 1.0
        return u


def expansion_from_sets(point_sets: Sequence, labels=None, mode: str = "qam") -> ExpansionStructure:
    """Assemble S and A from per-block candidate sets."""
    sets = tuple(np.asarray(p) for p in point_sets)
    sizes = [len(p) for p in sets]
    n = sum(sizes)
    nd = len(sets)
    a = np.zeros((nd, n))
    blocks = np.zeros((nd, n), dtype=complex)
    start = 0
    for p, vals in enumerate(sets):
        a[p, start:start + sizes[p]] = 1.0
        blocks[p, start:start + sizes[p]] = vals
        start += sizes[p]
    if mode == "qam":
        s = blocks.real.copy()
    elif mode == "psk":
        s = np.vstack([blocks.real, blocks.imag])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if labels is not None:
        labels = tuple(np.asarray(lab, dtype=np.uint8) for lab in labels)
    return ExpansionStructure(s, a, sets, labels, mode)


def build_expansion(constellation: Constellation, n_complex: int, mode: str) -> ExpansionStructure:
    """Expansion for ``n_complex`` transmit symbols.

    ``qam`` expands each real dimension over the PAM set (``N = 2 n_complex``,
    or ``N = n_complex`` for a purely real constellation); ``psk`` keeps each
    complex symbol joint (``N = n_complex``, S has ``2N`` rows).
    """
    if mode == "qam":
        if not constellation.separable:
            raise ValueError(f"{constellation.name} is not separable; use psk mode")
        nd = n_complex if constellation.is_real else 2 * n_complex
        return expansion_from_sets([constellation.real_points] * nd, [constellation.real_labels] * nd, "qam")
    if mode == "psk":
        return expansion_from_sets([constellation.points] * n_complex, [constellation.labels] * n_complex, "psk")
    raise ValueError(f"unknown mode {mode!r}")


def expansion_for(instance: SystemInstance, mode: Optional[str] = None) -> ExpansionStructure:
    const = instance.constellation
    mode = mode or const.default_mode
    n_cols = instance.h.shape[1]
    if mode == "psk":
        return build_expansion(const, n_cols // 2, "psk")
    return build_expansion(const, n_cols if const.is_real else n_cols // 2, "qam")


def check_selector(u, expansion: ExpansionStructure, tol: float = 1e-9) -> bool:
    u = np.asarray(u, dtype=float)
    if u.shape != (expansion.n,):
        return False
    binary = np.all((np.abs(u) < tol) | (np.abs(u - 1) < tol))
    return bool(binary and np.allclose(expansion.a @ u, 1.0, atol=tol))


def selector_indices(u, expansion: ExpansionStructure) -> np.ndarray:
    if not check_selector(u, expansion):
        raise ValueError("invalid selector: needs binary u with A u = e")
    off = expansion.offsets
    return np.array([int(np.argmax(u[off[p]:off[p + 1]])) for p in range(expansion.n_dims)])


def selector_to_bits(u, expansion: ExpansionStructure) -> np.ndarray:
    """Concatenated labels of the selected points."""
    if expansion.labels is None:
        raise ValueError("expansion carries no bit labels")
    idx = selector_indices(u, expansion)
    return np.concatenate([expansion.labels[p][i] for p, i in enumerate(idx)]).astype(np.uint8)


def bits_to_selector(bits, expansion: ExpansionStructure) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    idx = []
    pos = 0
    for lab in expansion.labels:
        nb = lab.shape[1]
        match = np.flatnonzero(np.all(lab == bits[pos:pos + nb], axis=1))
        if match.size != 1:
            raise ValueError(f"bits {bits[pos:pos + nb]} do not label a candidate")
        idx.append(match[0])
        pos += nb
    return expansion.selector(idx)


def decision_indices(x, expansion: ExpansionStructure, tol: float = 1e-6) -> np.ndarray:
    """Per-block candidate index of a real decision vector, ``-1`` where the
    coordinate is not a candidate (off-constellation after lattice reduction)."""
    x = np.asarray(x, dtype=float)
    nd = expansion.n_dims
    vals = x[:nd] + 1j * x[nd:] if expansion.mode == "psk" else x.astype(complex)
    out = np.full(nd, -1)
    for p, cand in enumerate(expansion.point_sets):
        d = np.abs(np.asarray(cand, dtype=complex) - vals[p])
        i = int(np.argmin(d))
        if d[i] < tol:
            out[p] = i
    return out


@dataclass
class DecodeResult:
    """Outcome of one hard decision.

    ``objective`` is ``||y - H x||^2``.  ``u`` is ``None`` when the decision
    fell outside the constellation (lattice-reduced decoding).
    """

    x: np.ndarray
    u: Optional[np.ndarray]
    objective: float
    method: str
    elapsed: float = 0.0
    lower_bound: Optional[float] = None
    status: Optional[str] = None
    iterations: int = 0
    out_of_region: bool = False
    visited_nodes: int = 0
    flagged: bool = False


def residual_norm2(instance: SystemInstance, x) -> float:
    r = instance.y - instance.h @ np.asarray(x, dtype=float)
    return float(r @ r)


# --- instance dump format -------------------------------------------------


def _fmt_row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_instance(path, instance: SystemInstance, x_true=None, mode: Optional[str] = None) -> None:
    """Plain-text dump: scalar header lines then ``H rows cols`` and ``y n`` blocks."""
    const = instance.constellation
    lines = ["# sdpdetect instance v1", f"snr {instance.snr!r}"]
    lines.append(f"n_complex {instance.n_complex if instance.n_complex is not None else '-'}")
    lines.append(f"m_complex {instance.m_complex if instance.m_complex is not None else '-'}")
    lines.append(f"e_s_av {instance.e_s_av!r}")
    lines.append(f"constellation {const.name}")
    lines.append(f"mode {mode or const.default_mode}")
    h = instance.h
    lines.append(f"H {h.shape[0]} {h.shape[1]}")
    lines.extend(_fmt_row(row) for row in h)
    lines.append(f"y {instance.y.size}")
    lines.append(_fmt_row(instance.y))
    if x_true is not None:
        lines.append(f"x {len(x_true)}")
        lines.append(_fmt_row(x_true))
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path):
    """Parse an instance dump.  Returns ``(instance, mode, x_true_or_None)``."""
    text = Path(path).read_text()
    rows = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    rows = [r for r in rows if r]
    header = {}
    blocks = {}
    i = 0
    try:
        while i < len(rows):
            key = rows[i][0]
            if key == "H":
                nr, nc = int(rows[i][1]), int(rows[i][2])
                blocks["H"] = np.array([[float(v) for v in rows[i + 1 + r]] for r in range(nr)]).reshape(nr, nc)
                i += 1 + nr
            elif key in ("y", "x"):
                n = int(rows[i][1])
                vec = np.array([float(v) for v in rows[i + 1]])
                if vec.size != n:
                    raise ValueError(f"block {key} declares {n} entries, found {vec.size}")
                blocks[key] = vec
                i += 2
            else:
                header[key] = " ".join(rows[i][1:])
                i += 1
        const_spec = header["constellation"]
        base = Path(path).parent / const_spec
        const = get_constellation(str(base) if base.exists() else const_spec)

        def _opt_int(v):
            return None if v in ("-", "none", "None") else int(v)

        inst = SystemInstance(
            blocks["H"], blocks["y"], float(header["snr"]), const,
            _opt_int(header.get("n_complex", "-")), _opt_int(header.get("m_complex", "-")),
            float(header.get("e_s_av", const.energy)),
        )
    except (KeyError, IndexError) as exc:
        raise ValueError(f"malformed instance file {path}: missing {exc}") from exc
    return inst, header.get("mode", const.default_mode), blocks.get("x")
