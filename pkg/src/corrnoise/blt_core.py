"""Buffered linear Toeplitz (BLT) strategy matrices.

A BLT strategy matrix is the lower-triangular Toeplitz matrix C = LtToep(c)
whose first column mixes d geometric decays:

    c_0 = 1,   c_i = sum_j omega_j * theta_j**(i-1)   (i >= 1).

The two key structural facts implemented here:

1. Multiplication by C and by C^-1 can be streamed row by row with a d x m
   buffer matrix S, independent of the number of rounds n.
2. C^-1 is itself a d-buffer BLT: its decays theta_hat are recoverable in
   closed form, and the output scales pair up through ``calc_output_scale``.

All coefficient math is double precision on purpose: decays like
1 - 8e-12 lose all structure in single precision. Several helpers accept
complex inputs so that callers can push complex-step derivatives through
them; nothing here takes an absolute value on the differentiated path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np
import numpy.polynomial.polynomial as npoly

# minimum gap between decay values before the pairing formula is declared
# degenerate (w_i divides by pairwise differences of 1/theta)
DEGENERATE_GAP = 1e-12


class DegenerateParamsError(ValueError):
    """Raised when repeated or near-coincident decays break the pairing."""


@dataclass
class BltParams:
    """BLT parameterization (theta, omega) of a strategy matrix.

    theta: buffer decays, strictly descending in (0, 1), pairwise distinct.
    omega: output scales, positive, with sum(omega) <= 1 so that the
        Toeplitz coefficients are non-increasing (c_1 = sum(omega) <= c_0).

    Validation is explicit (``validate``) rather than implicit so that
    relaxed uses (omega = 0 identity, theta = 1 prefix sums) stay
    representable.
    """

    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if self.theta.shape != self.omega.shape or self.theta.ndim != 1:
            raise ValueError(
                f"theta and omega must be 1-d with equal length, got "
                f"{self.theta.shape} and {self.omega.shape}"
            )

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    def validate(self, relaxed: bool = False) -> "BltParams":
        """Check parameter invariants; returns self for chaining.

        Strict mode (default) enforces the strategy-matrix invariants.
        Relaxed mode only requires theta in (0, 1] and omega >= 0, which
        admits the identity mechanism (omega = 0) and prefix sums
        (theta = 1, omega = 1).
        """
        th, om = self.theta, self.omega
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(om))):
            raise ValueError("non-finite BLT parameters")
        if relaxed:
            if np.any(th <= 0) or np.any(th > 1):
                raise ValueError("relaxed mode requires 0 < theta <= 1")
            if np.any(om < 0):
                raise ValueError("relaxed mode requires omega >= 0")
            return self
        if np.any(th <= 0) or np.any(th >= 1):
            raise ValueError("theta must lie strictly inside (0, 1)")
        if np.any(np.diff(th) >= 0):
            raise ValueError("theta must be strictly descending (canonical order)")
        if self.d > 1 and np.min(-np.diff(th)) < DEGENERATE_GAP:
            raise DegenerateParamsError(
                "theta entries closer than 1e-12; pairing formula is degenerate"
            )
        if np.any(om <= 0):
            raise ValueError("omega must be strictly positive")
        if om.sum() > 1.0 + 1e-12:
            raise ValueError(
                f"sum(omega) = {om.sum()!r} > 1: coefficients would increase"
            )
        return self


def _geometric_coefs(theta, omega, n):
    """c_0 = 1, c_i = sum_j omega_j theta_j^(i-1); no validation, complex-safe."""
    theta = np.atleast_1d(np.asarray(theta))
    omega = np.atleast_1d(np.asarray(omega))
    dt = np.result_type(theta, omega, float)
    c = np.empty(n, dtype=dt)
    c[0] = 1.0
    if n > 1:
        pw = np.power(theta[None, :], np.arange(n - 1, dtype=float)[:, None])
        c[1:] = pw @ omega
    return c


def blt_coefs(params: BltParams, n: int, relaxed: bool = False) -> np.ndarray:
    """First n Toeplitz coefficients of the BLT strategy matrix.

    O(n*d) time and memory. Strictly validated unless ``relaxed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    params.validate(relaxed=relaxed)
    return _geometric_coefs(params.theta, params.omega, n).astype(float)


def _poly_from_decays(decays, dt):
    """Ascending coefficients of prod_i (1 - decays_i * x)."""
    p = np.ones(1, dtype=dt)
    for t in decays:
        p = np.convolve(p, np.array([1.0, -t], dtype=dt))
    return p


def _polyval_ascending(coefs, x):
    """Horner evaluation of sum_k coefs[k] x^k at each point of x."""
    r = np.zeros_like(x) + coefs[-1] if len(coefs) else np.zeros_like(x)
    for ck in coefs[-2::-1]:
        r = r * x + ck
    return r


def _check_distinct(decays, what):
    d = len(decays)
    if d <= 1:
        return
    # control-flow check only; fine to look at magnitudes of complex inputs
    vals = np.sort(np.real(np.asarray(decays)))
    if np.min(np.diff(vals)) < DEGENERATE_GAP:
        raise DegenerateParamsError(
            f"{what} entries closer than {DEGENERATE_GAP}; "
            "pairing weights w_i are undefined or ill-conditioned"
        )


def calc_output_scale(theta, theta_hat) -> np.ndarray:
    """Output scales omega pairing the decays theta with inverse decays theta_hat.

    Returns the unique omega such that C = BLT(theta, omega) has
    C^-1 = BLT(theta_hat, .). Computed through the polynomials
    p(x) = prod(1 - theta_i x), q(x) = prod(1 - theta_hat_i x),
    f = (p - q)/x, the weights w_i = 1/prod_{j!=i}(1/theta_i - 1/theta_j)
    and z = prod(-theta_i):

        omega_i = -f(1/theta_i) * (-theta_i * w_i / z)

    The overall sign is fixed so that the roundtrip identity
    BLT(theta, omega) * BLT(theta_hat, omega_hat) = I holds (the widely
    restated recipe produces the opposite sign, which at d=1 gives
    omega = theta_hat - theta instead of the correct theta - theta_hat;
    see the unit tests, which pin both orientations).

    Complex-safe: accepts complex inputs for derivative propagation.
    Entries of theta and theta_hat may coincide across the two vectors
    (f is a polynomial, so the division by x is exact), but theta itself
    must be pairwise distinct.
    """
    theta = np.atleast_1d(np.asarray(theta))
    theta_hat = np.atleast_1d(np.asarray(theta_hat))
    if theta.shape != theta_hat.shape:
        raise ValueError("theta and theta_hat must have equal length")
    d = theta.shape[0]
    _check_distinct(theta, "theta")
    dt = np.result_type(theta, theta_hat, float)
    p = _poly_from_decays(theta, dt)
    q = _poly_from_decays(theta_hat, dt)
    f = (p - q)[1:]  # (p - q) has zero constant term; divide by x exactly
    inv = 1.0 / theta
    fv = _polyval_ascending(f, inv)
    z = np.prod(-theta)
    if d == 1:
        w = np.ones(1, dtype=dt)
    else:
        w = np.empty(d, dtype=dt)
        for i in range(d):
            w[i] = 1.0 / np.prod(inv[i] - np.delete(inv, i))
    return -fv * (-theta * w / z)


class InversePair(NamedTuple):
    theta_hat: np.ndarray
    omega_hat: np.ndarray
    fallback_used: bool


def _roundtrip_residual(theta, omega, theta_hat, omega_hat, n):
    """max |conv(c, chat) - e_0| on the first n coefficients.

    Products of lower-triangular Toeplitz matrices are lower-triangular
    Toeplitz, so the first column (this convolution) determines the whole
    matrix product; checking it against e_0 checks C * C^-1 = I.
    """
    c = _geometric_coefs(theta, omega, n)
    chat = _geometric_coefs(theta_hat, omega_hat, n)
    conv = np.convolve(c, chat)[:n]
    conv[0] -= 1.0
    return np.max(np.abs(conv))


def _prony_decays(seq, d):
    """Recover d decay rates from a sequence s_i = sum_j a_j r_j^i.

    Least-squares fit of the linear recurrence satisfied by the sequence,
    then roots of its characteristic polynomial. Used as the fallback
    recovery path when polynomial root-finding on the numerator is
    ill-conditioned.
    """
    seq = np.asarray(seq, dtype=float)
    if len(seq) < 2 * d:
        raise ValueError("need at least 2d samples for recovery")
    rows = len(seq) - d
    H = np.empty((rows, d))
    for i in range(rows):
        H[i] = seq[i : i + d][::-1]
    rhs = seq[d:]
    a, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    # recurrence s_{i+d} = a_0 s_{i+d-1} + ... + a_{d-1} s_i
    roots = np.roots(np.concatenate([[1.0], -a]))
    return roots


def inverse_blt_params(params: BltParams, check_tol: float = 1e-9) -> InversePair:
    """Parameters (theta_hat, omega_hat) of the inverse strategy C^-1.

    The generating function of the coefficients is C(x) = N(x)/p(x) with
    N(x) = p(x) + x * sum_j omega_j prod_{l!=j}(1 - theta_l x), a degree-d
    polynomial with N(0) = 1. Hence 1/C(x) = p(x)/N(x) and the inverse
    decays are the reciprocals of the roots of N. omega_hat then follows
    from ``calc_output_scale(theta_hat, theta)``.

    Correctness is defined solely by the roundtrip C * C^-1 = I, which is
    verified on the leading coefficients; on failure (ill-conditioned
    roots) the decays are re-recovered from brute-force inverse
    coefficients and the result is flagged ``fallback_used``.
    """
    params.validate(relaxed=True)
    theta, omega = params.theta, params.omega
    d = params.d
    if np.all(omega == 0.0):
        # identity matrix: canonicalize theta_hat = theta, omega_hat = 0
        return InversePair(theta.copy(), np.zeros(d), False)
    params.validate(relaxed=False)

    numer = _poly_from_decays(theta, float).copy()
    for j in range(d):
        others = np.delete(theta, j)
        numer[1:] += omega[j] * _poly_from_decays(others, float)
    roots = np.roots(numer[::-1])  # np.roots wants descending coefficients
    # polish: companion eigenvalues lose digits on clustered roots, Newton
    # restores them as long as the roots are simple
    dnumer = numer[1:] * np.arange(1, d + 1)
    for _ in range(3):
        with np.errstate(divide="ignore", invalid="ignore"):
            step = npoly.polyval(roots, numer) / npoly.polyval(roots, dnumer)
        roots = np.where(np.isfinite(step), roots - step, roots)

    theta_hat = omega_hat = None
    ncheck = 2 * d + 2
    if len(roots) == d and np.all(
        np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots.real))
    ):
        with np.errstate(divide="ignore", over="ignore"):
            cand = np.sort(1.0 / roots.real)[::-1]
        # one inverse decay turns negative when the column mass sits up
        # front (sum omega_j/theta_j > 1); magnitude stays <= 1 whenever
        # the strategy coefficients are non-increasing, so only stability
        # is gated here, not the sign
        if np.all(np.isfinite(cand)) and np.all(np.abs(cand) <= 1.0 + 1e-12):
            try:
                om_hat = calc_output_scale(cand, theta)
                if _roundtrip_residual(theta, omega, cand, om_hat, ncheck) <= check_tol:
                    theta_hat, omega_hat = cand, om_hat
            except DegenerateParamsError:
                pass
    if theta_hat is not None:
        return InversePair(theta_hat, np.asarray(omega_hat, dtype=float), False)

    # fallback: recover decays from brute-force inverse coefficients
    chat = toeplitz_inverse_coefs(_geometric_coefs(theta, omega, 4 * d + 2).real)
    roots = _prony_decays(chat[1:], d)
    if np.any(np.abs(roots.imag) > 1e-6):
        raise np.linalg.LinAlgError(
            "inverse decay recovery failed: complex decays from both the "
            "numerator-polynomial and recurrence-fit paths"
        )
    theta_hat = np.sort(roots.real)[::-1]
    omega_hat = calc_output_scale(theta_hat, theta)
    resid = _roundtrip_residual(theta, omega, theta_hat, omega_hat, ncheck)
    if resid > 1e-6:
        raise np.linalg.LinAlgError(
            f"inverse decay recovery failed: roundtrip residual {resid:.2e}"
        )
    return InversePair(theta_hat, np.asarray(omega_hat, dtype=float), True)


def toeplitz_inverse_coefs(c: np.ndarray) -> np.ndarray:
    """Coefficients of LtToep(c)^-1 by the O(n^2) triangular recurrence.

    chat_0 = 1/c_0 and chat_i = -(1/c_0) sum_{j=1..i} c_j chat_{i-j}.
    This is the brute-force oracle used to validate the O(n*d) pairing
    path; it is also the generic inverse for non-BLT coefficients.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] < 1:
        raise ValueError("c must be a nonempty 1-d coefficient array")
    if c[0] == 0.0:
        raise ValueError("c[0] must be nonzero")
    n = c.shape[0]
    chat = np.empty(n)
    chat[0] = 1.0 / c[0]
    for i in range(1, n):
        chat[i] = -(c[1 : i + 1] @ chat[i - 1 :: -1]) / c[0]
    return chat


def blt_inverse_coefs(params: BltParams, n: int) -> np.ndarray:
    """First n coefficients of the inverse strategy via the pairing; O(n*d).

    Same values as ``toeplitz_inverse_coefs(blt_coefs(params, n))`` but
    through the closed-form inverse decays, so cost stays linear in n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    params.validate(relaxed=True)
    if np.all(params.omega == 0.0):
        out = np.zeros(n)
        out[0] = 1.0
        return out
    pair = inverse_blt_params(params)
    return _geometric_coefs(pair.theta_hat, pair.omega_hat, n).real.astype(float)


def lt_toeplitz(c: np.ndarray) -> np.ndarray:
    """Dense lower-triangular Toeplitz matrix with first column c."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    idx = np.arange(n)[:, None] - np.arange(n)[None, :]
    return np.where(idx >= 0, c[np.clip(idx, 0, n - 1)], 0.0)


# ---------------------------------------------------------------------------
# streaming multiplication (constant memory in the number of rounds)
# ---------------------------------------------------------------------------


@dataclass
class NoiseGeneratorState:
    """State for streaming multiplication by C^-1 (correlated noise).

    The buffer matrix S is the only piece of state whose size depends on
    the problem: exactly d x m reals. ``round`` counts emissions; a state
    is single-owner and strictly sequential (round t depends on t-1).
    Gaussian draws come from a counter-based Philox generator seeded by
    ``rng_seed``, so identical seeds give bitwise-identical streams.
    """

    params: BltParams
    buffers: np.ndarray
    round: int
    noise_std: float
    rng_seed: int
    max_rounds: Optional[int]
    rng: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.Generator(np.random.Philox(self.rng_seed))


def make_noise_generator(
    params: BltParams,
    m: int,
    noise_std: float,
    seed: int = 0,
    max_rounds: Optional[int] = None,
    relaxed: bool = False,
) -> NoiseGeneratorState:
    """Fresh zero-buffer state for ``stream_mult_inverse``.

    ``max_rounds=None`` opts into unbounded emission (the coefficients
    extend naturally to any n); passing the optimization horizon catches
    accidental overruns instead.
    """
    params.validate(relaxed=relaxed)
    if m < 1:
        raise ValueError("m must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    return NoiseGeneratorState(
        params=params,
        buffers=np.zeros((params.d, m)),
        round=0,
        noise_std=float(noise_std),
        rng_seed=int(seed),
        max_rounds=max_rounds,
    )


def stream_mult_inverse(state: NoiseGeneratorState, input_row=None):
    """One streaming step of C^-1: returns (output_row, state).

    With S_{t-1} the buffer matrix and Z_t the round-t input row (an
    independent Gaussian draw of std ``noise_std`` unless a deterministic
    row is supplied):

        Zhat_t = Z_t - omega @ S_{t-1}
        S_t    = diag(theta) S_{t-1} + outer(1_d, Zhat_t)

    Zhat_t is row t of C^-1 Z. O(d*m) per round. The state is mutated in
    place and returned for convenience.
    """
    if state.max_rounds is not None and state.round >= state.max_rounds:
        raise RuntimeError(
            f"noise generator exhausted its declared horizon of "
            f"{state.max_rounds} rounds; construct one with a larger "
            f"max_rounds (or None) to extend the stream"
        )
    m = state.buffers.shape[1]
    if input_row is None:
        z = state.rng.normal(0.0, state.noise_std, size=m)
    else:
        z = np.asarray(input_row, dtype=float)
        if z.shape != (m,):
            raise ValueError(f"input row has shape {z.shape}, state expects ({m},)")
    zhat = z - state.params.omega @ state.buffers
    state.buffers *= state.params.theta[:, None]
    state.buffers += zhat[None, :]
    state.round += 1
    return zhat, state


def stream_mult(params: BltParams, rows, relaxed: bool = False) -> np.ndarray:
    """Multiply a row stream by C using only the d x m buffer.

        Z_t = Zhat_t + omega @ S_{t-1};  S_t = diag(theta) S_{t-1} + Zhat_t

    ``rows`` is an (T, m) array or an iterable of length-m rows; returns
    the (T, m) array of outputs. Relaxed validation admits omega = 0
    (identity) and theta = 1 (running prefix sums).
    """
    params.validate(relaxed=relaxed)
    rows = [np.asarray(r, dtype=float) for r in rows]
    if not rows:
        return np.zeros((0, 0))
    m = rows[0].shape[0]
    S = np.zeros((params.d, m))
    out = np.empty((len(rows), m))
    for t, zhat in enumerate(rows):
        if zhat.shape != (m,):
            raise ValueError(f"row {t} has shape {zhat.shape}, expected ({m},)")
        out[t] = zhat + params.omega @ S
        S *= params.theta[:, None]
        S += zhat[None, :]
    return out


# ---------------------------------------------------------------------------
# parameter file round-trip
# ---------------------------------------------------------------------------


def save_params(
    path,
    params: BltParams,
    opt_n: int,
    opt_min_sep: int,
    opt_max_part: int,
    objective: str,
) -> None:
    """Write the canonical parameter document.

    json emits shortest round-trip float representations, so the file
    reproduces the doubles exactly on load.
    """
    if objective not in ("max", "rms"):
        raise ValueError("objective must be 'max' or 'rms'")
    doc = {
        "d": params.d,
        "theta": [float(t) for t in params.theta],
        "omega": [float(w) for w in params.omega],
        "opt_n": int(opt_n),
        "opt_min_sep": int(opt_min_sep),
        "opt_max_part": int(opt_max_part),
        "objective": objective,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_params(path):
    """Read a parameter document; returns (BltParams, metadata dict)."""
    with open(path) as fh:
        doc = json.load(fh)
    params = BltParams(np.array(doc["theta"]), np.array(doc["omega"]))
    if params.d != doc["d"]:
        raise ValueError(f"{path}: d = {doc['d']} but theta has length {params.d}")
    meta = {
        "opt_n": int(doc["opt_n"]),
        "opt_min_sep": int(doc["opt_min_sep"]),
        "opt_max_part": int(doc["opt_max_part"]),
        "objective": doc["objective"],
    }
    return params, meta
