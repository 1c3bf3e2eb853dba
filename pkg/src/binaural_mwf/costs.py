"""Per-bin cost functions: Wiener term, IPD penalty, IC penalty, combined.

All costs are real functions of the stacked real parameter vector
``[Re w_l; Im w_l; Re w_r; Im w_r]`` of length 4M.  Gradients are analytic
(Wirtinger calculus mapped to the real parameterization) and are
cross-checked against central finite differences in the test suite.

The Wiener term is the quadratic

    j_w = sum_e [ q_e' Pxx q_e - 2 Re(w_e^H Pxx q_e) + w_e^H Pyy w_e ]

whose gradient with respect to (Re w_e, Im w_e) is 2(Pyy w_e - Pxx q_e).
The IPD penalty squares the wrapped difference between output and input
noise phase; the IC penalty squares the complex modulus of the coherence
difference.  When the output noise power collapses below the scale-free
guard the penalties return a fixed large value with zero gradient so the
Wiener gradient keeps line searches finite near w = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .spatial_stats import CUE_CUTOFF_HZ, Selector, wrap_angle

VARIANTS = ("mwf", "mwf-itd", "mwf-ic")

DEGENERATE_PENALTY = 1.0e6
_EPS_REL = 1e-12


@dataclass(frozen=True)
class CostSpec:
    """Objective selection: variant, penalty weight, cue gating cutoff."""

    variant: str = "mwf"
    alpha: float = 0.0
    cue_cutoff: float = CUE_CUTOFF_HZ

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}")
        if self.alpha < 0:
            raise InvalidInputError("alpha must be non-negative")

    def with_alpha(self, alpha):
        return CostSpec(variant=self.variant, alpha=alpha, cue_cutoff=self.cue_cutoff)


@dataclass
class FilterPair:
    """Per-bin complex coefficient vectors, each of shape (bins, M)."""

    w_l: np.ndarray
    w_r: np.ndarray

    def __post_init__(self):
        self.w_l = np.asarray(self.w_l, dtype=complex)
        self.w_r = np.asarray(self.w_r, dtype=complex)
        if self.w_l.shape != self.w_r.shape:
            raise InvalidInputError("left/right filter shapes differ")

    @classmethod
    def identity(cls, selector: Selector, bins):
        """Pass-through filters selecting the reference microphones."""
        w_l = np.tile(selector.q_l.astype(complex), (bins, 1))
        w_r = np.tile(selector.q_r.astype(complex), (bins, 1))
        return cls(w_l=w_l, w_r=w_r)

    @property
    def bin_count(self):
        return self.w_l.shape[0]


@dataclass
class CostEval:
    """Scalar cost and its gradient over the 4M real parameters."""

    value: float
    gradient: np.ndarray
    degenerate: bool = False


def pack_filters(w_l, w_r):
    return np.concatenate([w_l.real, w_l.imag, w_r.real, w_r.imag])


def unpack_filters(x):
    m = x.size // 4
    w_l = x[:m] + 1j * x[m : 2 * m]
    w_r = x[2 * m : 3 * m] + 1j * x[3 * m :]
    return w_l, w_r


def _grad_blocks(g_l, g_r):
    """Complex per-ear gradients -> stacked real gradient."""
    return np.concatenate([g_l.real, g_l.imag, g_r.real, g_r.imag])


def j_w(w_l, w_r, phi_xx, phi_yy, q_l, q_r) -> CostEval:
    """Binaural Wiener cost and gradient for one bin."""
    m = q_l.size
    if w_l.size != m or w_r.size != m or phi_xx.shape != (m, m) or phi_yy.shape != (m, m):
        raise InvalidInputError("dimension mismatch in Wiener cost")
    b_l = phi_xx @ q_l
    b_r = phi_xx @ q_r
    y_l = phi_yy @ w_l
    y_r = phi_yy @ w_r
    value = float(
        (q_l @ b_l).real
        + (q_r @ b_r).real
        - 2.0 * (w_l.conj() @ b_l).real
        - 2.0 * (w_r.conj() @ b_r).real
        + (w_l.conj() @ y_l).real
        + (w_r.conj() @ y_r).real
    )
    grad = _grad_blocks(2.0 * (y_l - b_l), 2.0 * (y_r - b_r))
    return CostEval(value=value, gradient=grad)


def _noise_products(w_l, w_r, phi_vv):
    c_l = phi_vv @ w_l
    c_r = phi_vv @ w_r
    u = complex(w_l.conj() @ c_r)
    p_l = float((w_l.conj() @ c_l).real)
    p_r = float((w_r.conj() @ c_r).real)
    eps = _EPS_REL * float(np.trace(phi_vv).real)
    return c_l, c_r, u, p_l, p_r, eps


def _degenerate(n_params):
    return CostEval(
        value=DEGENERATE_PENALTY, gradient=np.zeros(n_params), degenerate=True
    )


def input_ipd(phi_vv, q_l, q_r):
    """Reference-microphone noise phase for one bin, or None if undefined."""
    num = complex(q_l @ phi_vv @ q_r)
    p_l = float((q_l @ phi_vv @ q_l).real)
    p_r = float((q_r @ phi_vv @ q_r).real)
    eps = _EPS_REL * float(np.trace(phi_vv).real)
    if p_l <= eps or p_r <= eps or abs(num) <= eps:
        return None
    return float(np.angle(num))


def input_ic(phi_vv, q_l, q_r):
    """Reference-microphone noise coherence for one bin, or None."""
    num = complex(q_l @ phi_vv @ q_r)
    p_l = float((q_l @ phi_vv @ q_l).real)
    p_r = float((q_r @ phi_vv @ q_r).real)
    eps = _EPS_REL * float(np.trace(phi_vv).real)
    if p_l <= eps or p_r <= eps:
        return None
    return num / np.sqrt(p_l * p_r)


def j_ipd(w_l, w_r, phi_vv, q_l, q_r, ipd_in=None) -> CostEval:
    """Squared wrapped difference between output and input noise phase."""
    if ipd_in is None:
        ipd_in = input_ipd(phi_vv, q_l, q_r)
        if ipd_in is None:
            raise InvalidInputError("input noise phase undefined for this bin")
    c_l, c_r, u, p_l, p_r, eps = _noise_products(w_l, w_r, phi_vv)
    n_params = 4 * w_l.size
    if p_l <= eps or p_r <= eps or abs(u) <= eps:
        return _degenerate(n_params)
    d = float(wrap_angle(np.angle(u) - ipd_in))
    # d(angle u)/d(params): u = w_l^H Phi w_r is linear in conj(w_l) and w_r,
    # and d(angle u)/dx = Im((du/dx)/u).
    ru = c_r / u
    su = c_l.conj() / u
    grad = 2.0 * d * np.concatenate([ru.imag, -ru.real, su.imag, su.real])
    return CostEval(value=d * d, gradient=grad)


def j_ic(w_l, w_r, phi_vv, q_l, q_r, ic_in=None) -> CostEval:
    """Squared modulus of the coherence difference |ic_out - ic_in|^2."""
    if ic_in is None:
        ic_in = input_ic(phi_vv, q_l, q_r)
        if ic_in is None:
            raise InvalidInputError("input noise coherence undefined for this bin")
    c_l, c_r, u, p_l, p_r, eps = _noise_products(w_l, w_r, phi_vv)
    n_params = 4 * w_l.size
    if p_l <= eps or p_r <= eps:
        return _degenerate(n_params)
    den = np.sqrt(p_l * p_r)
    ic_out = u / den
    g = ic_out - ic_in
    value = float(abs(g) ** 2)

    # dic_out/dtheta = [du - u (dp_l/(2 p_l) + dp_r/(2 p_r))] / den, assembled
    # per real parameter; dvalue = 2 Re(conj(g) dic_out).
    def assemble(du_re, du_im, dpl_re, dpl_im, dpr_re, dpr_im):
        dic_re = (du_re - u * (dpl_re / (2 * p_l) + dpr_re / (2 * p_r))) / den
        dic_im = (du_im - u * (dpl_im / (2 * p_l) + dpr_im / (2 * p_r))) / den
        return (
            2.0 * (np.conj(g) * dic_re).real,
            2.0 * (np.conj(g) * dic_im).real,
        )

    zero = np.zeros(w_l.size)
    # w_l block: du/dRe = c_r, du/dIm = -j c_r; dp_l/dRe = 2 Re c_l, /dIm = 2 Im c_l.
    gl_re, gl_im = assemble(c_r, -1j * c_r, 2 * c_l.real, 2 * c_l.imag, zero, zero)
    # w_r block: du/dRe = conj(c_l), du/dIm = +j conj(c_l); dp_r analogous.
    gr_re, gr_im = assemble(
        c_l.conj(), 1j * c_l.conj(), zero, zero, 2 * c_r.real, 2 * c_r.imag
    )
    grad = np.concatenate([gl_re, gl_im, gr_re, gr_im])
    return CostEval(value=value, gradient=grad)


def _realify(mat):
    """Real quadratic-form matrix of w^H M w over [Re w; Im w] (M Hermitian)."""
    return np.block([[mat.real, -mat.imag], [mat.imag, mat.real]])


def hess_j_w(phi_yy, m):
    """Exact (4M, 4M) Hessian of the Wiener term: block-diagonal per ear."""
    block = 2.0 * _realify(phi_yy)
    out = np.zeros((4 * m, 4 * m))
    out[: 2 * m, : 2 * m] = block
    out[2 * m :, 2 * m :] = block
    return out


def _bilinear_terms(w_l, w_r, phi_vv):
    """First/second derivatives of u = w_l^H Phi w_r over the real params.

    Returns (u, u_vec, u2) with u_vec the complex derivative vector and u2
    the symmetric complex second-derivative matrix (nonzero only across the
    w_l/w_r blocks, since u is bilinear).
    """
    m = w_l.size
    c_l = phi_vv @ w_l
    c_r = phi_vv @ w_r
    u = complex(w_l.conj() @ c_r)
    u_vec = np.concatenate([c_r, -1j * c_r, c_l.conj(), 1j * c_l.conj()])
    cross = np.block([[phi_vv, 1j * phi_vv], [-1j * phi_vv, phi_vv]])
    u2 = np.zeros((4 * m, 4 * m), dtype=complex)
    u2[: 2 * m, 2 * m :] = cross
    u2[2 * m :, : 2 * m] = cross.T
    return u, u_vec, u2


def hess_j_ipd(w_l, w_r, phi_vv, q_l, q_r, ipd_in=None):
    """Exact Hessian of the phase penalty, or None on a degenerate bin."""
    if ipd_in is None:
        ipd_in = input_ipd(phi_vv, q_l, q_r)
        if ipd_in is None:
            return None
    _, _, u, p_l, p_r, eps = _noise_products(w_l, w_r, phi_vv)
    if p_l <= eps or p_r <= eps or abs(u) <= eps:
        return None
    u, u_vec, u2 = _bilinear_terms(w_l, w_r, phi_vv)
    d = float(wrap_angle(np.angle(u) - ipd_in))
    grad_phi = (u_vec / u).imag
    hess_phi = (u2 / u).imag - (np.outer(u_vec, u_vec) / (u * u)).imag
    return 2.0 * np.outer(grad_phi, grad_phi) + 2.0 * d * hess_phi


def hess_j_ic(w_l, w_r, phi_vv, q_l, q_r, ic_in=None):
    """Exact Hessian of the coherence penalty, or None on a degenerate bin."""
    if ic_in is None:
        ic_in = input_ic(phi_vv, q_l, q_r)
        if ic_in is None:
            return None
    c_l, c_r, u, p_l, p_r, eps = _noise_products(w_l, w_r, phi_vv)
    if p_l <= eps or p_r <= eps:
        return None
    m = w_l.size
    u, u_vec, u2 = _bilinear_terms(w_l, w_r, phi_vv)
    zeros = np.zeros(2 * m)
    pl_vec = np.concatenate([2 * c_l.real, 2 * c_l.imag, zeros])
    pr_vec = np.concatenate([zeros, 2 * c_r.real, 2 * c_r.imag])
    quad = 2.0 * _realify(phi_vv)
    pl_h = np.zeros((4 * m, 4 * m))
    pl_h[: 2 * m, : 2 * m] = quad
    pr_h = np.zeros((4 * m, 4 * m))
    pr_h[2 * m :, 2 * m :] = quad
    s = 1.0 / np.sqrt(p_l * p_r)
    t_vec = pl_vec / p_l + pr_vec / p_r
    s_vec = -0.5 * s * t_vec
    s_h = (
        np.outer(s_vec, s_vec) / s
        - 0.5 * s * (
            pl_h / p_l - np.outer(pl_vec, pl_vec) / (p_l * p_l)
            + pr_h / p_r - np.outer(pr_vec, pr_vec) / (p_r * p_r)
        )
    )
    ic_vec = u_vec * s + u * s_vec
    ic_h = u2 * s + np.outer(u_vec, s_vec) + np.outer(s_vec, u_vec) + u * s_h
    g = u * s - ic_in
    return (
        2.0 * np.outer(ic_vec, ic_vec.conj()).real
        + 2.0 * (np.conj(g) * ic_h).real
    )


def combined_hessian(
    w_l, w_r, phi_xx, phi_yy, phi_vv, q_l, q_r, spec: CostSpec, freq_hz, cue_in=None
):
    """Exact Hessian of the combined objective (penalty zero where gated)."""
    base = hess_j_w(phi_yy, w_l.size)
    if spec.variant == "mwf" or spec.alpha == 0.0:
        return base
    if freq_hz <= 0.0 or freq_hz > spec.cue_cutoff:
        return base
    if spec.variant == "mwf-itd":
        pen = hess_j_ipd(w_l, w_r, phi_vv, q_l, q_r, ipd_in=cue_in)
    else:
        pen = hess_j_ic(w_l, w_r, phi_vv, q_l, q_r, ic_in=cue_in)
    if pen is None:
        return base
    return base + spec.alpha * pen


def combined(
    w_l, w_r, phi_xx, phi_yy, phi_vv, q_l, q_r, spec: CostSpec, freq_hz, cue_in=None
) -> CostEval:
    """Variant objective for one bin; penalties gate off above the cutoff.

    ``cue_in`` may carry the precomputed input cue (phase for mwf-itd,
    coherence for mwf-ic) to avoid recomputing it in optimizer loops.  Bins
    whose input cue is undefined (e.g. no noise) fall back to the Wiener
    cost alone.
    """
    base = j_w(w_l, w_r, phi_xx, phi_yy, q_l, q_r)
    if spec.variant == "mwf" or spec.alpha == 0.0:
        return base
    if freq_hz <= 0.0 or freq_hz > spec.cue_cutoff:
        return base
    if spec.variant == "mwf-itd":
        if cue_in is None:
            cue_in = input_ipd(phi_vv, q_l, q_r)
        if cue_in is None:
            return base
        pen = j_ipd(w_l, w_r, phi_vv, q_l, q_r, ipd_in=cue_in)
    else:
        if cue_in is None:
            cue_in = input_ic(phi_vv, q_l, q_r)
        if cue_in is None:
            return base
        pen = j_ic(w_l, w_r, phi_vv, q_l, q_r, ic_in=cue_in)
    return CostEval(
        value=base.value + spec.alpha * pen.value,
        gradient=base.gradient + spec.alpha * pen.gradient,
        degenerate=pen.degenerate,
    )
