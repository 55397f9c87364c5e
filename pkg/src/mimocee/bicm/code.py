"""Rate-1/2 feedforward convolutional code (5, 7) and its forward-backward SISO decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_expit

# probability clamp [1e-12, 1 - 1e-12] expressed on log-likelihood ratios
LLR_CLIP = float(np.log((1 - 1e-12) / 1e-12))


@dataclass(frozen=True)
class ConvCode:
    """Feedforward convolutional code given by octal generators.

    State bits hold the most recent inputs, newest in the high bit. Output
    bits of a step are ordered like ``generators``.
    """

    generators: tuple[int, ...] = (0o5, 0o7)
    constraint_length: int = 3
    next_state: np.ndarray = field(init=False, repr=False, compare=False)
    outputs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        memory = self.constraint_length - 1
        n_states = 1 << memory
        nxt = np.zeros((n_states, 2), dtype=np.intp)
        out = np.zeros((n_states, 2, len(self.generators)), dtype=np.int8)
        for s in range(n_states):
            for u in (0, 1):
                reg = (u << memory) | s  # taps: bit K-1 is the current input
                for k, g in enumerate(self.generators):
                    out[s, u, k] = bin(reg & g).count("1") & 1
                nxt[s, u] = reg >> 1
        object.__setattr__(self, "next_state", nxt)
        object.__setattr__(self, "outputs", out)

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    @property
    def n_out(self) -> int:
        return len(self.generators)

    def coded_length(self, n_info: int) -> int:
        return self.n_out * (n_info + self.memory)

    def info_length(self, n_coded: int) -> int:
        n_info = n_coded // self.n_out - self.memory
        if n_info < 1 or self.coded_length(n_info) != n_coded:
            raise ValueError(f"{n_coded} coded bits do not form a terminated codeword")
        return n_info


DEFAULT_CODE = ConvCode()


def conv_encode(info_bits, code: ConvCode = DEFAULT_CODE) -> np.ndarray:
    """Encode and terminate with ``memory`` zero tail bits. Batched over leading axes."""
    u = np.asarray(info_bits, dtype=np.int8)
    if u.shape[-1] == 0:
        raise ValueError("cannot encode an empty bit sequence")
    tail = np.zeros((*u.shape[:-1], code.memory), dtype=np.int8)
    u = np.concatenate([u, tail], axis=-1)
    state = np.zeros(u.shape[:-1], dtype=np.intp)
    out = np.empty((*u.shape, code.n_out), dtype=np.int8)
    for t in range(u.shape[-1]):
        ut = u[..., t]
        out[..., t, :] = code.outputs[state, ut]
        state = code.next_state[state, ut]
    return out.reshape(*u.shape[:-1], -1)


def _trellis_tables(code: ConvCode):
    """Predecessor (state, input) pairs of every state."""
    prev = [[] for _ in range(code.n_states)]
    for s in range(code.n_states):
        for u in (0, 1):
            prev[code.next_state[s, u]].append((s, u))
    prev = np.array(prev, dtype=np.intp)  # (n_states, 2, 2)
    return prev[..., 0], prev[..., 1]


def siso_decode(coded_llr, code: ConvCode = DEFAULT_CODE):
    """Forward-backward decoding of a terminated trellis, in the log domain.

    ``coded_llr`` holds prior log-ratios log P(c=1)/P(c=0) on the coded bits,
    shape (..., n_coded). Info bits get uniform priors and the tail inputs are
    forced to zero. Returns ``(extrinsic_llr, info_llr)``: extrinsic coded-bit
    log-ratios (posterior with the bit's own prior removed) and posterior
    log-ratios of the info bits.
    """
    llr = np.clip(np.asarray(coded_llr, dtype=float), -LLR_CLIP, LLR_CLIP)
    batch = llr.shape[:-1]
    n_steps = llr.shape[-1] // code.n_out
    n_info = code.info_length(llr.shape[-1])
    llr = llr.reshape(*batch, n_steps, code.n_out)
    lp1 = log_expit(llr)
    lp0 = log_expit(-llr)

    out = code.outputs.astype(bool)  # (S, 2, n_out)
    # branch log-metrics gamma[..., t, s, u]
    gamma = np.where(out[None], lp1[..., :, None, None, :], lp0[..., :, None, None, :]).sum(axis=-1)
    gamma[..., n_info:, :, 1] = -np.inf

    prev_s, prev_u = _trellis_tables(code)
    S = code.n_states
    alpha = np.full((*batch, n_steps + 1, S), -np.inf)
    beta = np.full((*batch, n_steps + 1, S), -np.inf)
    alpha[..., 0, 0] = 0.0
    beta[..., n_steps, 0] = 0.0
    nxt = code.next_state

    for t in range(n_steps):
        m = alpha[..., t, :, None] + gamma[..., t, :, :]  # (..., S, 2)
        a = np.logaddexp(m[..., prev_s[:, 0], prev_u[:, 0]], m[..., prev_s[:, 1], prev_u[:, 1]])
        alpha[..., t + 1, :] = a - np.max(a, axis=-1, keepdims=True)
    for t in range(n_steps - 1, -1, -1):
        b = np.logaddexp(gamma[..., t, :, 0] + beta[..., t + 1, nxt[:, 0]],
                         gamma[..., t, :, 1] + beta[..., t + 1, nxt[:, 1]])
        beta[..., t, :] = b - np.max(b, axis=-1, keepdims=True)

    # joint branch log-probabilities (..., T, S, 2), unnormalized
    joint = alpha[..., :-1, :, None] + gamma + beta[..., 1:, :][..., nxt]
    with np.errstate(invalid="ignore"):
        info = _lse(joint[..., 1], axis=-1) - _lse(joint[..., 0], axis=-1)
        coded_post = np.empty((*batch, n_steps, code.n_out))
        flat = joint.reshape(*batch, n_steps, S * 2)
        for k in range(code.n_out):
            ones = out[..., k].reshape(-1)
            coded_post[..., k] = _lse(flat[..., ones], axis=-1) - _lse(flat[..., ~ones], axis=-1)
    extrinsic = (coded_post - llr).reshape(*batch, -1)
    return extrinsic, info[..., :n_info]


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
