"""Reference block-motion + DCT codec over flat quantized tensors.

Coded tensors are laid out channel-major with no spatial structure an
element's loss can corrupt beyond its own contribution: a zeroed residual or
intra element drops one DCT coefficient of one block, a zeroed motion element
makes one displacement component zero.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..media import Frame
from . import kernels as K

VALUE_MIN, VALUE_MAX = -1024, 1023
SEARCH_RANGE = 8
CACHE_WINDOW = 32
IFRAME_INTERVAL = 1000
RUNGS = 11


class CodecError(RuntimeError):
    pass


def _ladder() -> tuple:
    # geometric steps from 64 (rung 0) down to 2 (rung 10), stored with 8 fractional bits
    return tuple(int(round(256 * 64 * 2 ** (-r / 2))) for r in range(RUNGS))


LADDER_Q8 = _ladder()
MV_STEP_Q8 = 256  # motion vectors coded losslessly at 1 px


@dataclass(frozen=True)
class QualityLevel:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < RUNGS:
            raise ValueError(f"quality rung {self.index} outside 0..{RUNGS - 1}")

    @property
    def step_q8(self) -> int:
        return LADDER_Q8[self.index]

    @property
    def step(self) -> float:
        return self.step_q8 / 256


FINEST = QualityLevel(RUNGS - 1)
COARSEST = QualityLevel(0)


def _rung(q) -> QualityLevel:
    return q if isinstance(q, QualityLevel) else QualityLevel(int(q))


@dataclass(frozen=True)
class CodedTensor:
    kind: str  # "mv" | "residual" | "intra"
    values: np.ndarray  # int16 (channels, rows, cols)
    steps_q8: tuple  # per channel

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError("coded tensor must be channels x rows x cols")
        if v.size and (v.min() < VALUE_MIN or v.max() > VALUE_MAX):
            raise ValueError("coded value outside [-1024, 1023]")
        if len(self.steps_q8) != v.shape[0] or any(s <= 0 for s in self.steps_q8):
            raise ValueError("need one positive step per channel")
        v = np.ascontiguousarray(v, dtype=np.int16)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    @property
    def size(self) -> int:
        return self.values.size

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values) -> "CodedTensor":
        return replace(self, values=np.asarray(values).reshape(self.values.shape))


@dataclass(frozen=True)
class IPatch:
    rect: tuple  # x, y, w, h in pixels
    tensor: CodedTensor
    k: int
    raw: Optional[np.ndarray] = None


@dataclass(frozen=True)
class EncodedFrame:
    frame_id: int
    frame_kind: str  # "I" | "P"
    width: int
    height: int
    rung: int
    residual: CodedTensor  # intra tensor for I-frames
    mv: Optional[CodedTensor] = None
    ipatch: Optional[IPatch] = None
    reference_id: Optional[int] = None
    # unquantized residual coefficients, kept so the ladder can re-quantize without a new search
    raw: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.frame_kind == "I" and self.mv is not None:
            raise ValueError("I-frames carry no motion tensor")
        if self.frame_kind == "P" and (self.mv is None or self.reference_id is None):
            raise ValueError("P-frames need a motion tensor and a reference")
        if self.ipatch is not None:
            x, y, w, h = self.ipatch.rect
            if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise ValueError("I-patch lies outside the frame")

    def tensors(self) -> list:
        """Tensors in wire order: motion, residual/intra, I-patch."""
        out = [] if self.mv is None else [self.mv]
        out.append(self.residual)
        if self.ipatch is not None:
            out.append(self.ipatch.tensor)
        return out

    def drop_raw(self) -> "EncodedFrame":
        patch = self.ipatch if self.ipatch is None else replace(self.ipatch, raw=None)
        return replace(self, raw=None, ipatch=patch)


@dataclass(frozen=True)
class Reception:
    """What reached the decoder: tensors with lost elements already zeroed."""

    mv: Optional[np.ndarray] = None
    residual: Optional[np.ndarray] = None
    ipatch: bool = True

    @classmethod
    def full(cls, enc: EncodedFrame) -> "Reception":
        return cls(
            None if enc.mv is None else enc.mv.values,
            enc.residual.values,
            enc.ipatch is not None,
        )

    @classmethod
    def nothing(cls, enc: EncodedFrame) -> "Reception":
        return cls(
            None if enc.mv is None else np.zeros_like(enc.mv.values),
            np.zeros_like(enc.residual.values),
            False,
        )


@dataclass(frozen=True)
class ReferenceState:
    frame_id: int
    frame: Frame


class TensorCache:
    """Last ``window`` encoded frames, evicted oldest-first."""

    def __init__(self, window: int = CACHE_WINDOW):
        self.window = window
        self._items: OrderedDict = OrderedDict()

    def put(self, frame_id: int, item) -> None:
        self._items[frame_id] = item
        self._items.move_to_end(frame_id)
        while len(self._items) > self.window:
            self._items.popitem(last=False)

    def get(self, frame_id: int):
        return self._items.get(frame_id)

    def __contains__(self, frame_id) -> bool:
        return frame_id in self._items

    def __len__(self):
        return len(self._items)

    def ids(self) -> list:
        return list(self._items)

    def drop_through(self, frame_id: int) -> None:
        for fid in [f for f in self._items if f <= frame_id]:
            del self._items[fid]


# ---------------------------------------------------------------- transforms


def _check_aligned(frame: Frame):
    if frame.width % 16 or frame.height % 16:
        raise CodecError("frame not macroblock aligned")


def _dct_tensor(pixels: np.ndarray, rung: QualityLevel, kind: str):
    raw = K.fdct_blocks(np.ascontiguousarray(pixels, dtype=np.int64), K.DCT_BASIS, K.ZIGZAG)
    return _requant(kind, raw, rung), raw


def _idct(values: np.ndarray, steps_q8) -> np.ndarray:
    return K.idct_blocks(
        np.ascontiguousarray(values, dtype=np.int16),
        np.asarray(steps_q8, dtype=np.int64),
        K.DCT_BASIS,
        K.ZIGZAG,
    )


def _clamp8(a) -> np.ndarray:
    return np.clip(a, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- I-patch schedule


def _patch_grid(mb_cols: int, mb_rows: int, k: int):
    best = None
    for gx in range(1, k + 1):
        if k % gx:
            continue
        gy = k // gx
        if mb_cols % gx or mb_rows % gy:
            continue
        pw, ph = mb_cols // gx, mb_rows // gy
        score = abs(np.log(pw / ph))
        if best is None or score < best[0]:
            best = (score, gx, gy)
    return None if best is None else best[1:]


def feasible_patch_count(frame_dims: tuple, k: int) -> int:
    """Largest k' <= k splitting the frame into k' equal macroblock-aligned rectangles."""
    w, h = frame_dims
    for kk in range(k, 0, -1):
        if _patch_grid(w // 16, h // 16, kk) is not None:
            return kk
    return 1


def ipatch_region(frame_index: int, frame_dims: tuple, k: int = 30) -> tuple:
    """Rectangle (x, y, w, h) refreshed by the I-patch of ``frame_index``.

    Returns ``(rect, k_used)``; ``k_used`` differs from ``k`` when the frame
    cannot be cut into ``k`` equal aligned patches.
    """
    if not 10 <= k <= 30:
        raise ValueError("I-patch period must be within [10, 30]")
    kk = feasible_patch_count(frame_dims, k)
    return patch_rect(frame_index, frame_dims, kk), kk


def patch_rect(frame_index: int, frame_dims: tuple, k_used: int) -> tuple:
    """Rectangle for a patch count already known to tile the frame (as carried in headers)."""
    w, h = frame_dims
    grid = _patch_grid(w // 16, h // 16, k_used) if k_used >= 1 else None
    if grid is None:
        raise ValueError(f"{k_used} patches do not tile a {w}x{h} frame")
    gx, gy = grid
    pw, ph = w // gx, h // gy
    i = frame_index % k_used
    return ((i % gx) * pw, (i // gx) * ph, pw, ph)


# ---------------------------------------------------------------- encode / decode


def encode_i(frame: Frame, q=FINEST, frame_id: Optional[int] = None) -> EncodedFrame:
    _check_aligned(frame)
    rung = _rung(q)
    tensor, raw = _dct_tensor(frame.luma.astype(np.int64) - 128, rung, "intra")
    fid = frame.frame_index if frame_id is None else frame_id
    return EncodedFrame(fid, "I", frame.width, frame.height, rung.index, tensor, raw=raw)


def encode_p(
    frame: Frame,
    ref: ReferenceState,
    q=FINEST,
    frame_id: Optional[int] = None,
    search_range: int = SEARCH_RANGE,
    ipatch_k: Optional[int] = None,
) -> EncodedFrame:
    _check_aligned(frame)
    rframe = ref.frame
    if (rframe.width, rframe.height) != (frame.width, frame.height):
        raise CodecError(
            f"reference is {rframe.width}x{rframe.height}, frame is {frame.width}x{frame.height}"
        )
    rung = _rung(q)
    cur = frame.luma
    mv = K.motion_search(cur, rframe.luma, search_range, _offsets(search_range))
    pred = K.motion_compensate(rframe.luma, mv)
    res_tensor, raw = _dct_tensor(cur.astype(np.int64) - pred, rung, "residual")
    mv_tensor = CodedTensor("mv", mv, (MV_STEP_Q8, MV_STEP_Q8))
    fid = frame.frame_index if frame_id is None else frame_id
    patch = None
    if ipatch_k is not None:
        rect, kk = ipatch_region(fid, (frame.width, frame.height), ipatch_k)
        x, y, w, h = rect
        region = cur[y:y + h, x:x + w].astype(np.int64) - 128
        ptensor, praw = _dct_tensor(region, rung, "intra")
        patch = IPatch(rect, ptensor, kk, praw)
    return EncodedFrame(
        fid, "P", frame.width, frame.height, rung.index, res_tensor, mv_tensor, patch, ref.frame_id, raw
    )


_OFFSETS: dict = {}


def _offsets(R: int) -> np.ndarray:
    if R not in _OFFSETS:
        _OFFSETS[R] = K.search_offsets(R)
    return _OFFSETS[R]


def decode(
    enc: EncodedFrame,
    ref: Optional[ReferenceState] = None,
    received: Optional[Reception] = None,
) -> Frame:
    """Reconstruct a frame; lost tensor elements must already be zero in ``received``."""
    rec = Reception.full(enc) if received is None else received
    res_vals = enc.residual.values if rec.residual is None else rec.residual
    if res_vals.shape != enc.residual.values.shape:
        raise CodecError("received residual does not match the encoded tensor dims")
    spatial = _idct(res_vals, enc.residual.steps_q8)
    if enc.frame_kind == "I":
        out = spatial + 128
    else:
        if ref is None:
            raise CodecError(f"P-frame {enc.frame_id} needs reference {enc.reference_id}")
        mv_vals = enc.mv.values if rec.mv is None else rec.mv
        if mv_vals.shape != enc.mv.values.shape:
            raise CodecError("received motion tensor does not match the encoded tensor dims")
        pred = K.motion_compensate(ref.frame.luma, np.ascontiguousarray(mv_vals, dtype=np.int16))
        out = pred + spatial
        if enc.ipatch is not None and rec.ipatch:
            x, y, w, h = enc.ipatch.rect
            patch = _idct(enc.ipatch.tensor.values, enc.ipatch.tensor.steps_q8) + 128
            out[y:y + h, x:x + w] = patch
    return Frame.from_luma(_clamp8(out), enc.frame_id)


def requantize_residual(enc: EncodedFrame, q) -> EncodedFrame:
    """Re-code only the residual at another rung, reusing motion and raw coefficients."""
    rung = _rung(q)
    if enc.raw is None:
        raise CodecError(f"raw residual of frame {enc.frame_id} was evicted; re-encode instead")
    if rung.index == enc.rung:
        return enc
    res = _requant(enc.residual.kind, enc.raw, rung)
    patch = enc.ipatch
    if patch is not None and patch.raw is not None:
        patch = replace(patch, tensor=_requant("intra", patch.raw, rung))
    return replace(enc, residual=res, ipatch=patch, rung=rung.index)


def _requant(kind: str, raw: np.ndarray, rung: QualityLevel) -> CodedTensor:
    steps = np.full(raw.shape[0], rung.step_q8, dtype=np.int64)
    vals = K.quantize(raw, steps, VALUE_MIN, VALUE_MAX)
    return CodedTensor(kind, vals, tuple(int(s) for s in steps))


def fast_redecode(chain, ref: ReferenceState, window: int = CACHE_WINDOW) -> ReferenceState:
    """Replay cached frames under the receiver's masks, with no motion search.

    ``chain`` is a sequence of ``(EncodedFrame, Reception)`` starting at the
    incomplete frame; ``ref`` is the reference the first of them was decoded
    against. A ``None`` reception marks a frame the receiver abandoned: its
    reference carries over unchanged. Returns the reference after the last frame.
    """
    chain = list(chain)
    if not chain:
        raise ValueError("empty resync chain")
    if len(chain) > window:
        raise CodecError(f"resync chain of {len(chain)} frames exceeds cache window {window}")
    state = ref
    for enc, rec in chain:
        if rec is None:
            state = ReferenceState(enc.frame_id, state.frame)
        else:
            state = ReferenceState(enc.frame_id, decode(enc, state, rec))
    return state


def lossless_reference(enc: EncodedFrame, ref: Optional[ReferenceState]) -> ReferenceState:
    return ReferenceState(enc.frame_id, decode(enc, ref))
