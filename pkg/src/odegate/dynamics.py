"""Continuous-discrete hybrid dynamics with truncation-error-driven gating.

One hybrid step, for state h and step size dt:

    k1       = f(h)                    (one field evaluation)
    h_euler  = h + dt * k1             (first-order estimate, free byproduct)
    k2       = f(h + dt/2 * k1)        (second field evaluation)
    h_rk2    = h + dt * k2             (second-order midpoint estimate)
    err      = |h_rk2 - h_euler|       (per-entry truncation error, no extra NFE)
    mask     = sigmoid(err)            (per-entry gate in [0.5, 1))
    h_next   = h_rk2 + mask * tanh(h W_g[step] + b_g[step])

The two solver estimates share k1, so the error signal costs exactly zero
additional vector-field evaluations: every step performs 2 NFEs regardless of
how the mask and compensation are configured.

`evolve` composes S such steps over unit time (dt = 1/S) and records a
per-step trace of error/mask statistics and the NFE count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tape, Tensor, absolute, add, add_bias, detach, hadamard,
                       matmul, reshape, scale, sigmoid, sub, tanh, transpose)
from .errors import ContractError, DimensionError, NumericError, OdegateError

MASK_MODES = ("lte", "uniform_one", "learned", "off")

HIST_BINS = 20


@dataclass
class VectorFieldParams:
    """One shared weight set for the continuous field of a stream.

    The same (w_f, b_f) pair is used by both solver evaluations of every
    integration step; per-step copies would break the weight-sharing contract
    of the continuous field.
    """

    w_f: Tensor   # [d_h, d_h]
    b_f: Tensor   # [d_h]


@dataclass
class CompensatorParams:
    """Per-step jump parameters: S independent (w_g, b_g) pairs."""

    per_step: list  # list of (Tensor[d_h, d_h], Tensor[d_h])

    @property
    def n_steps(self) -> int:
        return len(self.per_step)


@dataclass
class LearnedMaskParams:
    """Affine map + sigmoid used by the learned-mask ablation (shared across steps)."""

    w_m: Tensor   # [d_h, d_h]
    b_m: Tensor   # [d_h]


@dataclass
class StepTrace:
    """Per-step summary of the error signal, the mask, and the NFE count."""

    step_index: int
    nfe_count: int
    e_mean: float
    e_max: float
    m_mean: float
    m_std: float
    m_p95: float
    mask_histogram: list = field(default_factory=lambda: [0] * HIST_BINS)


@dataclass
class EvolveResult:
    h_final: Tensor
    traces: list
    lte: list                    # per-step error tensors, kept on the tape
    masks: list | None = None    # per-step mask values (numpy) when collected
    states: list | None = None   # per-step states (numpy) when collected


class NFECounter:
    """Mutable count of vector-field evaluations."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1


# ---------------------------------------------------------------------------
# field and step
# ---------------------------------------------------------------------------

def graph_propagate(a_op: Tensor, h: Tensor, tape: Tape | None = None) -> Tensor:
    """Apply an [N,N] operator over the node axis of h[B,N,d]."""
    if h.data.ndim != 3:
        raise DimensionError(f"graph_propagate: state must be [B,N,d], got {h.shape}")
    b, n, d = h.shape
    if a_op.shape != (n, n):
        raise DimensionError(
            f"graph_propagate: operator {a_op.shape} does not match {n} nodes")
    flat = reshape(transpose(h, (1, 0, 2), tape), (n, b * d), tape)
    mixed = matmul(a_op, flat, tape)
    return transpose(reshape(mixed, (n, b, d), tape), (1, 0, 2), tape)


def node_linear(h: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Shared affine map over the channel axis of h[B,N,d]."""
    if h.data.ndim != 3:
        raise DimensionError(f"node_linear: state must be [B,N,d], got {h.shape}")
    bs, n, d = h.shape
    flat = reshape(h, (bs * n, d), tape)
    out = add_bias(matmul(flat, w, tape), b, tape)
    return reshape(out, (bs, n, w.shape[1]), tape)


def vector_field(h: Tensor, a_op: Tensor, params: VectorFieldParams,
                 tape: Tape | None = None, nfe: NFECounter | None = None) -> Tensor:
    """Continuous field: one graph propagation followed by one shared affine map."""
    out = node_linear(graph_propagate(a_op, h, tape), params.w_f, params.b_f, tape)
    if nfe is not None:
        nfe.bump()
    return out


def embedded_dual_step(h: Tensor, dt: float, a_op: Tensor, params: VectorFieldParams,
                       tape: Tape | None = None, nfe: NFECounter | None = None):
    """One embedded Euler/RK2 step; returns (h_euler, h_rk2) from 2 NFEs.

    k1 is computed once and reused by both estimates; the Euler result is a
    free byproduct of the midpoint method's first stage.
    """
    if dt <= 0:
        raise ContractError(f"embedded_dual_step: dt must be positive, got {dt}")
    k1 = vector_field(h, a_op, params, tape, nfe)
    h_euler = add(h, scale(k1, dt, tape), tape)
    midpoint = add(h, scale(k1, dt / 2.0, tape), tape)
    k2 = vector_field(midpoint, a_op, params, tape, nfe)
    h_rk2 = add(h, scale(k2, dt, tape), tape)
    return h_euler, h_rk2


def local_truncation_error(h_euler: Tensor, h_rk2: Tensor,
                           tape: Tape | None = None) -> Tensor:
    """Per-entry |h_rk2 - h_euler|; nonnegative by construction."""
    return absolute(sub(h_rk2, h_euler, tape), tape)


def attention_mask(e: Tensor, tape: Tape | None = None) -> Tensor:
    """Sigmoid gate of a nonnegative error signal; values lie in [0.5, 1).

    Zero error anchors the gate at exactly 0.5; larger errors saturate it
    toward 1.
    """
    if np.any(e.data < 0):
        raise ContractError("attention_mask: error signal must be nonnegative")
    return sigmoid(e, tape)


def compensate(h_t: Tensor, h_rk2: Tensor, m: Tensor, step: int,
               params: CompensatorParams, tape: Tape | None = None) -> Tensor:
    """Hybrid update h_rk2 + m * tanh(h_t W_g[step] + b_g[step]).

    The jump operator reads the PRE-step state h_t, not the solver output.
    """
    if not (0 <= step < params.n_steps):
        raise ContractError(
            f"compensate: step {step} outside [0, {params.n_steps})")
    w_g, b_g = params.per_step[step]
    jump = tanh(node_linear(h_t, w_g, b_g, tape), tape)
    return add(h_rk2, hadamard(m, jump, tape), tape)


# ---------------------------------------------------------------------------
# trajectory evolution
# ---------------------------------------------------------------------------

def _mask_stats(values: np.ndarray):
    hist, _edges = np.histogram(values, bins=HIST_BINS, range=(0.0, 1.0))
    return (float(values.mean()), float(values.std()),
            float(np.percentile(values, 95)), [int(c) for c in hist])


def _empty_trace(step: int, nfe: int, e_values: np.ndarray) -> StepTrace:
    return StepTrace(step_index=step, nfe_count=nfe,
                     e_mean=float(e_values.mean()), e_max=float(e_values.max()),
                     m_mean=0.0, m_std=0.0, m_p95=0.0,
                     mask_histogram=[0] * HIST_BINS)


def evolve(h0: Tensor, steps: int, dt: float, a_op: Tensor,
           vf: VectorFieldParams, comp: CompensatorParams | None = None,
           mask_mode: str = "lte", *, mask_params: LearnedMaskParams | None = None,
           mask_grad: bool = False, sparsity_tau: float | None = None,
           tape: Tape | None = None, nfe: NFECounter | None = None,
           collect_masks: bool = False, collect_states: bool = False) -> EvolveResult:
    """Run S hybrid steps over unit time and record per-step traces.

    mask_mode selects the ablation behavior:
      lte          full mechanism, mask = sigmoid(error)
      uniform_one  compensation applied everywhere with mask = 1
      learned      mask = sigmoid of an affine map of the pre-step state
      off          pure embedded RK2, compensator skipped entirely

    By default the error feeding the mask is detached from the tape; pass
    mask_grad=True to let gradients flow through the gate.  The per-step error
    tensors returned in `lte` always stay on the tape (the smoothness-penalty
    loss needs them differentiable).

    sparsity_tau enables the approximate fast path: nodes whose mask stays
    below 0.5 + tau everywhere contribute no jump at all.  Since the exact
    gate never reaches 0, this changes results and is off by default.
    """
    if steps < 1:
        raise ContractError(f"evolve: steps must be >= 1, got {steps}")
    if abs(dt * steps - 1.0) > 1e-9:
        raise ContractError(f"evolve: dt must equal 1/steps, got dt={dt}, steps={steps}")
    if mask_mode not in MASK_MODES:
        raise ContractError(f"evolve: unknown mask_mode '{mask_mode}'")
    if mask_mode == "learned" and mask_params is None:
        raise ContractError("evolve: mask_mode 'learned' needs mask_params")
    if mask_mode in ("lte", "uniform_one", "learned") and comp is None:
        raise ContractError(f"evolve: mask_mode '{mask_mode}' needs compensator params")
    if comp is not None and comp.n_steps < steps:
        raise ContractError(
            f"evolve: compensator has {comp.n_steps} step entries, need {steps}")

    nfe = nfe if nfe is not None else NFECounter()
    h = h0
    traces: list[StepTrace] = []
    lte_tensors: list[Tensor] = []
    masks = [] if collect_masks else None
    states = [h0.data.copy()] if collect_states else None

    for step in range(steps):
        try:
            nfe_before = nfe.count
            h_euler, h_rk2 = embedded_dual_step(h, dt, a_op, vf, tape, nfe)
            err = local_truncation_error(h_euler, h_rk2, tape)
            lte_tensors.append(err)

            if mask_mode == "off":
                h_next = h_rk2
                trace = _empty_trace(step, nfe.count - nfe_before, err.data)
            else:
                if mask_mode == "lte":
                    gate_input = err if mask_grad else detach(err)
                    m = attention_mask(gate_input, tape)
                elif mask_mode == "uniform_one":
                    m = Tensor(np.ones_like(h.data))
                else:  # learned
                    m = sigmoid(node_linear(h, mask_params.w_m, mask_params.b_m, tape), tape)

                m_applied = m
                if sparsity_tau is not None:
                    active = (m.data >= 0.5 + sparsity_tau).any(axis=-1, keepdims=True)
                    gate = np.broadcast_to(active, m.shape).astype(np.float64)
                    m_applied = hadamard(m, Tensor(gate.copy()), tape)

                h_next = compensate(h, h_rk2, m_applied, step, comp, tape)
                m_mean, m_std, m_p95, hist = _mask_stats(m.data)
                trace = StepTrace(step_index=step, nfe_count=nfe.count - nfe_before,
                                  e_mean=float(err.data.mean()),
                                  e_max=float(err.data.max()),
                                  m_mean=m_mean, m_std=m_std, m_p95=m_p95,
                                  mask_histogram=hist)
                if masks is not None:
                    masks.append(m.data.copy())
        except OdegateError as exc:
            raise type(exc)(f"step {step}: {exc}") from exc

        traces.append(trace)
        if states is not None:
            states.append(h_next.data.copy())
        h = h_next

    if not np.all(np.isfinite(h.data)):
        raise NumericError("evolve: final state is non-finite")
    return EvolveResult(h_final=h, traces=traces, lte=lte_tensors,
                        masks=masks, states=states)


# ---------------------------------------------------------------------------
# trace serialization
# ---------------------------------------------------------------------------

TRACE_HEADER = (["step", "nfe", "e_mean", "e_max", "m_mean", "m_std", "m_p95"]
                + [f"hist_{i}" for i in range(HIST_BINS)])


def write_traces_csv(path, traces) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for t in traces:
            writer.writerow([t.step_index, t.nfe_count, repr(t.e_mean), repr(t.e_max),
                             repr(t.m_mean), repr(t.m_std), repr(t.m_p95)]
                            + list(t.mask_histogram))


def read_traces_csv(path):
    traces = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_HEADER:
            raise ContractError(f"{path}: unexpected trace header")
        for row in reader:
            traces.append(StepTrace(
                step_index=int(row[0]), nfe_count=int(row[1]),
                e_mean=float(row[2]), e_max=float(row[3]),
                m_mean=float(row[4]), m_std=float(row[5]), m_p95=float(row[6]),
                mask_histogram=[int(x) for x in row[7:7 + HIST_BINS]]))
    return traces
