"""Sampling Service - VSPP frame-index arithmetic.

This module handles:
- Closed-form index plans for clips with one segment played at a different pace
- The uniform-pace special case (a single segment, Z=1)
- Random draws of (lambda, zeta, f_r) with a bounded redraw policy
- Brute-force enumeration of every valid plan (used as a cross-check)

Interface Contract:
- vspp_indices(params, lambda_, zeta, f_r) -> VsppSample
- uniform_pace_indices(params, lambda_, f_r) -> VsppSample
- sample_vspp(params, rng) -> VsppSample
- enumerate_valid_samples(params) -> list[VsppSample]
- All functions are pure; errors derive from SamplingError

Layout of a clip with segment length L = K/Z and altered segment zeta:
    segments before zeta   f_r + (s-1)*L + p            stride 1
    segment zeta           I_b + lambda*p               I_b = f_r + (zeta-1)*L + (lambda-1)
    segments after zeta    I_e + 1 + (s-zeta-1)*L + p   I_e = I_b + lambda*(L-1)
The last index is therefore f_r + K - 1 + (lambda-1)*L, independent of zeta.
"""

from __future__ import annotations

import logging

import numpy as np

from src.models import SamplerParams, VsppSample

logger = logging.getLogger(__name__)

DEFAULT_MAX_REDRAWS = 64


class SamplingError(Exception):
    """Base class for sampling errors."""


class InvalidParamsError(SamplingError):
    """Raised when sampler params or (lambda, zeta) violate their invariants."""


class OutOfRangeError(SamplingError):
    """Raised when a plan would read past the last source frame."""


class InfeasibleError(SamplingError):
    """Raised when no valid (lambda, zeta, f_r) exists for the params."""


def validate_params(params: SamplerParams) -> None:
    """Check K mod Z == 0, 1 <= Q, 1 <= Z <= K, K <= N."""
    n, k, z, q = params.num_frames, params.clip_length, params.segments, params.max_speed
    if q < 1:
        raise InvalidParamsError(f"max_speed Q must be >= 1, got {q}")
    if not 1 <= z <= k:
        raise InvalidParamsError(f"segments Z must satisfy 1 <= Z <= K={k}, got {z}")
    if k % z != 0:
        raise InvalidParamsError(f"clip_length K={k} is not divisible by segments Z={z}")
    if k > n:
        raise InvalidParamsError(f"clip_length K={k} exceeds source frame count N={n}")


def last_index(params: SamplerParams, lambda_: int, f_r: int) -> int:
    """Largest source index a plan touches."""
    return f_r + params.clip_length - 1 + (lambda_ - 1) * params.segment_length


def max_start_offset(params: SamplerParams, lambda_: int) -> int:
    """Largest valid f_r for this speed rate; negative when none exists."""
    return params.num_frames - params.clip_length - (lambda_ - 1) * params.segment_length


def _check_labels(params: SamplerParams, lambda_: int, zeta: int, f_r: int) -> None:
    if not 1 <= lambda_ <= params.max_speed:
        raise InvalidParamsError(f"lambda must be in [1, {params.max_speed}], got {lambda_}")
    if not 1 <= zeta <= params.segments:
        raise InvalidParamsError(f"zeta must be in [1, {params.segments}], got {zeta}")
    if f_r < 0:
        raise InvalidParamsError(f"f_r must be >= 0, got {f_r}")


def vspp_indices(params: SamplerParams, lambda_: int, zeta: int, f_r: int) -> VsppSample:
    """Build the index plan for one (lambda, zeta, f_r) triple.

    Raises:
        InvalidParamsError: params or labels out of their ranges
        OutOfRangeError: the plan would read frame > N-1
    """
    validate_params(params)
    _check_labels(params, lambda_, zeta, f_r)

    top = last_index(params, lambda_, f_r)
    if top > params.num_frames - 1:
        raise OutOfRangeError(
            f"plan (lambda={lambda_}, zeta={zeta}, f_r={f_r}) needs frame {top} "
            f"but the video has N={params.num_frames} frames (max f_r for this lambda is "
            f"{max_start_offset(params, lambda_)})"
        )

    seg_len = params.segment_length
    i_b = f_r + (zeta - 1) * seg_len + (lambda_ - 1)
    i_e = i_b + lambda_ * (seg_len - 1)

    indices: list[int] = []
    for s in range(1, params.segments + 1):
        if s < zeta:
            start = f_r + (s - 1) * seg_len
            indices.extend(start + p for p in range(seg_len))
        elif s == zeta:
            indices.extend(i_b + lambda_ * p for p in range(seg_len))
        else:
            start = i_e + 1 + (s - zeta - 1) * seg_len
            indices.extend(start + p for p in range(seg_len))

    return VsppSample(lambda_=lambda_, zeta=zeta, f_r=f_r, indices=tuple(indices))


def uniform_pace_indices(params: SamplerParams, lambda_: int, f_r: int) -> VsppSample:
    """Whole clip at one pace: the Z=1, zeta=1 case of vspp_indices."""
    single = SamplerParams(
        num_frames=params.num_frames,
        clip_length=params.clip_length,
        segments=1,
        max_speed=max(params.max_speed, lambda_),
        seed=params.seed,
    )
    return vspp_indices(single, lambda_, 1, f_r)


def sample_vspp(
    params: SamplerParams,
    rng: np.random.Generator | None = None,
    *,
    max_redraws: int = DEFAULT_MAX_REDRAWS,
) -> VsppSample:
    """Draw lambda ~ U[1,Q], zeta ~ U[1,Z], then f_r uniform over the valid offsets.

    A (lambda, zeta) pair with no valid offset is redrawn up to `max_redraws`
    times; after that lambda falls back to 1, which is always feasible when K <= N.

    Raises:
        InfeasibleError: N < K, so not even the natural-pace clip fits
    """
    if params.clip_length > params.num_frames:
        raise InfeasibleError(
            f"no valid plan: clip_length K={params.clip_length} > N={params.num_frames}"
        )
    validate_params(params)
    if rng is None:
        rng = np.random.default_rng(params.seed)

    for _ in range(max_redraws):
        lambda_ = int(rng.integers(1, params.max_speed + 1))
        zeta = int(rng.integers(1, params.segments + 1))
        hi = max_start_offset(params, lambda_)
        if hi >= 0:
            f_r = int(rng.integers(0, hi + 1))
            return vspp_indices(params, lambda_, zeta, f_r)

    logger.debug("[SAMPLER] %s redraws exhausted for N=%s, falling back to lambda=1", max_redraws, params.num_frames)
    zeta = int(rng.integers(1, params.segments + 1))
    f_r = int(rng.integers(0, max_start_offset(params, 1) + 1))
    return vspp_indices(params, 1, zeta, f_r)


def _walk_plan(params: SamplerParams, lambda_: int, zeta: int, f_r: int) -> list[int]:
    """Build a plan by stepping a cursor through the video segment by segment."""
    seg_len = params.segment_length
    cursor = f_r
    out: list[int] = []
    for s in range(1, params.segments + 1):
        stride = lambda_ if s == zeta else 1
        if s == zeta:
            cursor += lambda_ - 1
        for _ in range(seg_len):
            out.append(cursor)
            cursor += stride
        cursor = out[-1] + 1
    return out


def enumerate_valid_samples(params: SamplerParams) -> list[VsppSample]:
    """Every (lambda, zeta, f_r) whose plan stays inside [0, N-1], found by scanning.

    Plans are built by walking the segments, not through the closed form, so the
    two can be checked against each other.
    """
    validate_params(params)
    n = params.num_frames
    found: list[VsppSample] = []
    for lambda_ in range(1, params.max_speed + 1):
        for zeta in range(1, params.segments + 1):
            for f_r in range(n):
                plan = _walk_plan(params, lambda_, zeta, f_r)
                if plan[-1] > n - 1:
                    continue
                found.append(VsppSample(lambda_=lambda_, zeta=zeta, f_r=f_r, indices=tuple(plan)))
    return found
