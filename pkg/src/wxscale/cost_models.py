"""Closed-form parameter and FLOP counts for the five weather architectures.

All integer formulas are evaluated with Python ints, so there is no overflow
at any size. Terms with real factors (the SFNO transform constant times
log2, the AIFS N_h**2/16 attention term) are rounded to the nearest integer
once, at the component level, so every total is an exact integer sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import InvalidConfig, InvalidInput, InvalidShape
from .shapes import ArchitectureId, CostOptions, GridSpec, ModelShape, ShapeRegistry

TRAIN_FACTOR = 3


@dataclass(frozen=True)
class FlopBreakdown:
    arch: ArchitectureId
    components: tuple[tuple[str, int], ...]
    notes: tuple[str, ...] = ()
    forward_total: int = field(init=False)
    train_total: int = field(init=False)

    def __post_init__(self):
        comps = tuple((str(label), int(v)) for label, v in self.components)
        if any(v < 0 for _, v in comps):
            raise ValueError("negative FLOP component")
        object.__setattr__(self, "components", comps)
        fwd = sum(v for _, v in comps)
        object.__setattr__(self, "forward_total", fwd)
        object.__setattr__(self, "train_total", TRAIN_FACTOR * fwd)

    def component(self, label: str) -> int:
        for name, v in self.components:
            if name == label:
                return v
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "components": [{"label": k, "flops": v} for k, v in self.components],
            "forward_total": self.forward_total,
            "train_total": self.train_total,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class ComputeBudget:
    flops_per_step: int
    steps: int
    total: int


@dataclass(frozen=True)
class UtilizationRecord:
    achieved_tflops: float
    peak_tflops: float
    precision_bits: int
    utilization_pct: float


# -- parameters ---------------------------------------------------------------


def param_count_graphcast(width: int, depth: int) -> int:
    """GraphCast parameter count (24 + 8d) w + (18 + 7d) w^2.

    Zero width or depth is allowed and gives the degenerate value.
    """
    if width < 0 or depth < 0:
        raise InvalidShape(f"width and depth must be >= 0, got ({width}, {depth})")
    return (24 + 8 * depth) * width + (18 + 7 * depth) * width * width


def lookup_param_count(shape: ModelShape, registry: ShapeRegistry | None = None) -> int:
    """Exact parameter count: closed form for GraphCast, registry row otherwise."""
    if shape.arch is ArchitectureId.GRAPHCAST:
        return param_count_graphcast(shape.width, shape.depth)
    if registry is None:
        registry = ShapeRegistry.load()
    return registry.get(shape)


def format_millions(params: int) -> str:
    """Table-style size, e.g. 34156544 -> '34.2M'."""
    return f"{params / 1e6:.1f}M"


# -- GraphCast ------------------------------------------------------------------


def flops_graphcast(shape: ModelShape, grid: GridSpec) -> FlopBreakdown:
    _expect(shape, ArchitectureId.GRAPHCAST)
    W, S = shape.width, shape.depth
    ng, nm, em = grid.n_grid, grid.n_mesh, grid.e_mesh
    g2m = 2 * ((4 * W + 2 * W**2) * ng + (4 * W + 3 * W**2) * nm + (4 * W + 4 * W**2) * em)
    mesh = 2 * S * ((4 * W + 3 * W**2) * nm + (4 * W + 4 * W**2) * em)
    m2g = 2 * ((4 * W + 2 * W**2) * nm + (4 * W + 3 * W**2) * ng + (12 * W + 4 * W**2) * em)
    return FlopBreakdown(
        ArchitectureId.GRAPHCAST,
        (("G2M", g2m), ("Mesh", mesh), ("M2G", m2g)),
        notes=("multimesh node/edge counts are configured inputs",),
    )


def graphcast_mesh_slope(width: int, grid: GridSpec) -> int:
    """Forward FLOPs added by one extra message-passing step."""
    W = width
    return 2 * ((4 * W + 3 * W**2) * grid.n_mesh + (4 * W + 4 * W**2) * grid.e_mesh)


# -- Swin models (Aurora, Pangu) ---------------------------------------------


@dataclass(frozen=True)
class SwinBlockFlops:
    attn: int
    mlp: int
    norm: int

    @property
    def total(self) -> int:
        return self.attn + self.mlp + self.norm


def swin_block_flops(n: int, width: int, heads: int, window: int, mlp_ratio: int = 4) -> SwinBlockFlops:
    """One windowed-attention block on ``n`` tokens."""
    if n < 0 or width < 1 or heads < 1 or window < 1:
        raise InvalidShape("swin block needs n >= 0 and width, heads, window >= 1")
    if width % heads:
        raise InvalidShape(f"width {width} is not divisible by heads {heads}")
    W, h, w, r = width, heads, window, mlp_ratio
    nw = -(-n // w)
    dh = W // h
    attn = 2 * n * W * (3 * W) + 2 * nw * h * (w * dh * w) + 5 * nw * h * w * w + 2 * nw * h * (w * w * dh) + 2 * n * W * W
    mlp = 2 * n * W * (r * W) + 6 * n * (r * W) + 2 * n * (r * W) * W
    norm = 10 * n * W
    return SwinBlockFlops(attn, mlp, norm)


def projection_flops(n: int, w_in: int, w_out: int) -> int:
    """Linear stage transition or patch embed/recover: 2 n Win Wout + 5 n Win."""
    return 2 * n * w_in * w_out + 5 * n * w_in


@dataclass(frozen=True)
class SwinStage:
    label: str
    tokens: int
    width: int
    heads: int
    depth: int


def _stage_heads(stage_width: int, head_dim: int, arch: ArchitectureId) -> int:
    if stage_width % head_dim:
        raise InvalidShape(
            f"{arch.label} stage width {stage_width} is not a multiple of head dim "
            f"{head_dim}; pass heads explicitly"
        )
    return stage_width // head_dim


def _swin_breakdown(arch, plan, window, mlp_ratio, notes) -> FlopBreakdown:
    comps = []
    for item in plan:
        if isinstance(item, SwinStage):
            blk = swin_block_flops(item.tokens, item.width, item.heads, window, mlp_ratio)
            comps.append((item.label, item.depth * blk.total))
        else:
            comps.append(item)
    return FlopBreakdown(arch, tuple(comps), notes=tuple(notes))


def _head_dim(shape: ModelShape, default: int) -> int:
    return shape.head_dim if shape.heads is not None else default


def aurora_stages(shape: ModelShape, grid: GridSpec, options: CostOptions) -> list:
    """Ordered stage/projection plan for Aurora.

    Encoder stage k runs at width W*m_k on n // d_k tokens; the decoder
    repeats the encoder stages in reverse order.
    """
    K = len(shape.depths)
    mults = options.aurora_width_mults or tuple(2**k for k in range(K))
    divs = options.aurora_token_divs or tuple(4**k for k in range(K))
    if len(mults) < K or len(divs) < K:
        raise InvalidConfig(f"Aurora options cover {min(len(mults), len(divs))} stages, shape has {K}")
    n = grid.tokens()
    hd = _head_dim(shape, options.aurora_head_dim)
    enc = []
    for k, d in enumerate(shape.depths):
        Wk = shape.width * mults[k]
        enc.append(SwinStage(f"enc_stage{k}", n // divs[k], Wk, _stage_heads(Wk, hd, shape.arch), d))
    plan: list = []
    p2 = grid.patch * grid.patch
    proj = options.projections
    if proj:
        plan.append(("patch_embed", projection_flops(n, p2, enc[0].width)))
    for k, st in enumerate(enc):
        plan.append(st)
        if proj and k + 1 < K:
            plan.append((f"enc_down{k}", projection_flops(st.tokens, st.width, enc[k + 1].width)))
    for k in reversed(range(K)):
        st = enc[k]
        plan.append(SwinStage(f"dec_stage{k}", st.tokens, st.width, st.heads, st.depth))
        if proj and k > 0:
            plan.append((f"dec_up{k}", projection_flops(st.tokens, st.width, enc[k - 1].width)))
    if proj:
        plan.append(("patch_recover", projection_flops(n, enc[0].width, p2)))
    return plan


def flops_aurora(shape: ModelShape, grid: GridSpec, options: CostOptions | None = None) -> FlopBreakdown:
    _expect(shape, ArchitectureId.AURORA)
    options = options or CostOptions()
    window = shape.window or options.window
    plan = aurora_stages(shape, grid, options)
    notes = (
        "effective channel count C is a configured input",
        "stage widths/token counts are configured, not published",
    )
    return _swin_breakdown(ArchitectureId.AURORA, plan, window, shape.mlp_ratio, notes)


def pangu_stages(shape: ModelShape, grid: GridSpec, options: CostOptions) -> list:
    outer, inner = shape.depth
    depths = (outer, inner, inner, outer)
    n = grid.tokens()
    hd = _head_dim(shape, options.pangu_head_dim)
    stages = []
    for s in range(4):
        Ws = shape.width * options.pangu_width_mults[s]
        stages.append(
            SwinStage(f"stage{s}", n // options.pangu_token_divs[s], Ws, _stage_heads(Ws, hd, shape.arch), depths[s])
        )
    plan: list = []
    p2 = grid.patch * grid.patch
    proj = options.projections
    if proj:
        plan.append(("patch_embed", projection_flops(n, p2, stages[0].width)))
    for s, st in enumerate(stages):
        plan.append(st)
        if proj and s == 0:
            plan.append(("downsample", projection_flops(st.tokens, st.width, stages[1].width)))
        if proj and s == 2:
            plan.append(("upsample", projection_flops(st.tokens, st.width, stages[3].width)))
    if proj:
        plan.append(("patch_recover", projection_flops(n, stages[3].width, p2)))
    return plan


def flops_pangu(shape: ModelShape, grid: GridSpec, options: CostOptions | None = None) -> FlopBreakdown:
    _expect(shape, ArchitectureId.PANGU)
    options = options or CostOptions()
    window = shape.window or options.window
    plan = pangu_stages(shape, grid, options)
    notes = ("stage token counts and patch dimensions are configured, not published",)
    return _swin_breakdown(ArchitectureId.PANGU, plan, window, shape.mlp_ratio, notes)


# -- SFNO ---------------------------------------------------------------------


def _sfno_block_terms(width: int, grid: GridSpec, alpha: float) -> tuple[int, float]:
    """(exact integer part, real transform part) of one Fourier block."""
    if not alpha > 0:
        raise InvalidConfig(f"alpha must be > 0, got {alpha}")
    W = width
    lo = grid.h_lo * grid.w_lo
    exact = (
        5 * W * lo
        + W * W * grid.spectral_l * grid.spectral_m
        + 2 * W * (2 * W) * lo
        + 6 * (2 * W) * lo
        + 2 * (2 * W) * W * lo
    )
    # forward and inverse transforms
    transforms = 2 * alpha * W * lo * math.log2(max(grid.h_lo, grid.w_lo))
    return exact, transforms


def sfno_block_flops(width: int, grid: GridSpec, alpha: float) -> int:
    """One Fourier block at low resolution, rounded to the nearest integer."""
    exact, transforms = _sfno_block_terms(width, grid, alpha)
    return exact + round(transforms)


def flops_sfno(
    shape: ModelShape,
    grid: GridSpec,
    alpha_transform: float | None = None,
    options: CostOptions | None = None,
) -> FlopBreakdown:
    _expect(shape, ArchitectureId.SFNO)
    options = options or CostOptions()
    alpha = options.alpha if alpha_transform is None else alpha_transform
    if not alpha > 0:
        raise InvalidConfig(f"alpha must be > 0, got {alpha}")
    W, C = shape.width, grid.channels_in
    hi = grid.h_hi * grid.w_hi
    enc = 2 * C * W * hi + 6 * W * hi + 2 * W * W * hi
    dec = 2 * W * W * hi + 6 * W * hi + 2 * W * C * hi
    exact, transforms = _sfno_block_terms(W, grid, alpha)
    # one rounding for the whole component, not one per block
    blocks = shape.depth * exact + round(shape.depth * transforms)
    comps = [("encoder", enc), ("blocks", blocks), ("decoder", dec)]
    if options.skip:
        comps.append(("skip", 2 * C * C * hi))
    notes = [f"transform constant alpha={alpha!r}"]
    if grid.l_max is None or grid.m_max is None:
        notes.append(f"spectral truncation l_max={grid.spectral_l}, m_max={grid.spectral_m} (defaulted)")
    return FlopBreakdown(ArchitectureId.SFNO, tuple(comps), notes=tuple(notes))


# -- AIFS ---------------------------------------------------------------------


def flops_aifs(shape: ModelShape, grid: GridSpec) -> FlopBreakdown:
    _expect(shape, ArchitectureId.AIFS)
    W, D, r = shape.width, shape.depth, shape.mlp_ratio
    C, Co, de = grid.channels_in, grid.channels_out, grid.edge_dim
    ng, nh = grid.n_grid, grid.n_mesh
    enc = 2 * (
        C * W * ng + 12 * W * nh + de * W * grid.e_enc + 4 * W * W * ng
        + 3 * W * W * nh + W * grid.e_enc + 2 * r * W * W * nh
    )
    proc_exact = 2 * D * (Fraction(4 * W * W * nh) + Fraction(W * nh * nh, 16) + 2 * r * W * W * nh + 4 * W * nh)
    proc = round(proc_exact)
    dec = 2 * (
        C * W * ng + de * W * grid.e_dec + 2 * W * W * nh + 3 * W * W * ng
        + W * grid.e_dec + 2 * r * W * W * ng + Co * W * ng
    )
    return FlopBreakdown(
        ArchitectureId.AIFS,
        (("encoder", enc), ("processor", proc), ("decoder", dec)),
    )


# -- dispatch -------------------------------------------------------------------


def flops(shape: ModelShape, grid: GridSpec | None = None, options: CostOptions | None = None) -> FlopBreakdown:
    """Forward/training FLOP breakdown for any architecture.

    With ``grid`` or ``options`` left out, the bundled per-architecture
    defaults are used.
    """
    if grid is None or options is None:
        from .shapes import load_defaults

        grids, opts = load_defaults()
        grid = grid or grids[shape.arch]
        options = options or opts
    arch = shape.arch
    if arch is ArchitectureId.GRAPHCAST:
        return flops_graphcast(shape, grid)
    if arch is ArchitectureId.AURORA:
        return flops_aurora(shape, grid, options)
    if arch is ArchitectureId.PANGU:
        return flops_pangu(shape, grid, options)
    if arch is ArchitectureId.SFNO:
        return flops_sfno(shape, grid, options=options)
    return flops_aifs(shape, grid)


# -- budgets and hardware -------------------------------------------------------


def training_compute(flops_per_step: int, steps: int) -> ComputeBudget:
    """Total training compute = train FLOPs per step * number of steps."""
    for name, v in (("flops_per_step", flops_per_step), ("steps", steps)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise InvalidInput(f"{name} must be a positive integer, got {v!r}")
    return ComputeBudget(flops_per_step, steps, flops_per_step * steps)


def utilization(achieved_tflops: float, peak_tflops: float, precision_bits: int = 32) -> UtilizationRecord:
    if not (achieved_tflops > 0 and peak_tflops > 0):
        raise InvalidInput("achieved and peak throughput must be > 0")
    if not (math.isfinite(achieved_tflops) and math.isfinite(peak_tflops)):
        raise InvalidInput("throughput must be finite")
    if achieved_tflops > peak_tflops:
        raise InvalidInput(f"achieved {achieved_tflops} Tflop/s exceeds peak {peak_tflops} Tflop/s")
    if precision_bits not in (16, 32):
        raise InvalidInput(f"precision must be 16 or 32 bits, got {precision_bits}")
    pct = 100.0 * achieved_tflops / peak_tflops
    return UtilizationRecord(achieved_tflops, peak_tflops, precision_bits, pct)


def sig3(x: float) -> str:
    """Three significant figures, keeping trailing zeros: 1.7029 -> '1.70'."""
    s = f"{x:#.3g}"
    return s.rstrip(".") if "e" not in s else s


def _expect(shape: ModelShape, arch: ArchitectureId):
    if shape.arch is not arch:
        raise InvalidShape(f"expected a {arch.label} shape, got {shape.arch.label}")
