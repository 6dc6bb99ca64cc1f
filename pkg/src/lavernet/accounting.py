"""Parameter and FLOP accounting.

FLOP convention: one multiply-accumulate is 2 FLOPs, so a k x k convolution
costs ``2 k^2 C_in C_out H' W'`` and a batched matmul ``(n, p, q) @ (n, q, r)``
costs ``2 n p q r``. Every elementwise pass (bias add, activation, norm,
softmax, gating product, blend) costs ``ELEMENTWISE_FLOPS`` per element.
Pixel (un)shuffle, reshapes and concatenation are free.

Counts are for one steady-state frame: the SPM gate is charged on every
frame even though frame 0 skips it.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from .model import ModelConfig, ParamStore, parameter_layout

ELEMENTWISE_FLOPS = 5
MODULES = ("head", "spm", "fuse", "mid", "tail", "out")
OP_CLASSES = ("feature_conv", "io_conv", "matmul", "elementwise")


def module_of(name: str) -> str:
    return name.split(".", 1)[0]


def count_params(store: ParamStore | ModelConfig) -> dict[str, int]:
    """Exact per-module parameter counts plus ``total``."""
    if isinstance(store, ParamStore):
        sizes = [(n, t.size) for n, t in store.items()]
    else:
        sizes = [(n, _prod(shape)) for n, shape in parameter_layout(store)]
    table = OrderedDict((m, 0) for m in MODULES)
    for name, size in sizes:
        table[module_of(name)] += int(size)
    table["total"] = sum(table[m] for m in MODULES)
    return dict(table)


def _prod(shape) -> int:
    out = 1
    for s in shape:
        out *= int(s)
    return out


@dataclass
class FlopTable:
    height: int
    width: int
    frames: int
    modules: dict[str, int] = field(default_factory=lambda: {m: 0 for m in MODULES})
    by_class: dict[str, int] = field(default_factory=lambda: {k: 0 for k in OP_CLASSES})

    @property
    def total(self) -> int:
        return sum(self.modules.values())

    def add(self, module: str, kind: str, flops: int) -> None:
        flops *= self.frames
        self.modules[module] += flops
        self.by_class[kind] += flops

    def to_dict(self) -> dict:
        return {"resolution": [self.width, self.height], "frames": self.frames,
                "modules": dict(self.modules), "by_class": dict(self.by_class), "total": self.total}


class _Counter:
    def __init__(self, table: FlopTable, pixels: int):
        self.t = table
        self.p = pixels

    def conv(self, module, cin, cout, k, io=False):
        self.t.add(module, "io_conv" if io else "feature_conv", 2 * k * k * cin * cout * self.p)
        self.elementwise(module, cout)  # bias

    def elementwise(self, module, channels, passes=1):
        self.t.add(module, "elementwise", ELEMENTWISE_FLOPS * passes * channels * self.p)

    def matmul(self, module, n, p, q, r):
        self.t.add(module, "matmul", 2 * n * p * q * r)

    def dense_block(self, module, c):
        h = c // 2
        self.conv(module, c, h, 3)
        self.conv(module, h, h, 3)
        self.conv(module, h, h, 3)
        self.elementwise(module, h, passes=3)  # LeakyReLU after each 3x3
        self.conv(module, 3 * h, c, 1)

    def lem(self, module, c, heads):
        self.dense_block(module, c)
        self.dense_block(module, c)
        self.elementwise(module, 2 * c)  # layer norm
        for _ in "qkvd":
            self.conv(module, 2 * c, c, 1)
        d = c // heads
        self.matmul(module, heads, d, self.p, d)  # q d^T
        self.matmul(module, heads, d, self.p, d)  # k d^T
        self.matmul(module, heads, d, d, d)       # (q d^T)(k d^T)^T
        self.t.add(module, "elementwise", ELEMENTWISE_FLOPS * heads * d * d)  # softmax
        self.matmul(module, heads, d, d, self.p)  # softmax(A) v
        self.conv(module, c, c, 1)
        self.conv(module, c, c, 1)
        self.elementwise(module, c, passes=3)  # two norms + gating product


def count_flops(config: ModelConfig, height: int, width: int, frames: int = 1) -> FlopTable:
    r = config.downsample
    if height % r or width % r:
        raise ValueError(f"resolution {width}x{height} not divisible by downsample factor {r}")
    c, img = config.channels, config.in_channels
    table = FlopTable(height, width, frames)
    k = _Counter(table, (height // r) * (width // r))

    k.conv("head", img * r * r, c, 3, io=True)
    for _ in range(config.lem_head):
        k.lem("head", c, config.heads)
    if config.use_spm:
        k.conv("spm", c, c, 3)
        k.elementwise("spm", c)  # LeakyReLU
        k.conv("spm", c, c, 3)
        k.elementwise("spm", c, passes=5)  # sigmoid, 1-w, two products, sum
    k.conv("fuse", 2 * c, c, 3)
    for _ in range(config.lem_mid):
        k.lem("mid", c, config.heads)
    for _ in range(config.lem_tail):
        k.lem("tail", c, config.heads)
    k.conv("out", c, img * r * r, 3, io=True)
    if config.global_residual:
        table.add("out", "elementwise", ELEMENTWISE_FLOPS * img * height * width)
    return table


def efficiency_table(config: ModelConfig, height: int = 480, width: int = 856) -> dict:
    """Per-module params and FLOPs, as printed by ``lavernet inspect``."""
    return {"config": config.to_dict(), "params": count_params(config),
            "flops": count_flops(config, height, width).to_dict()}


def format_table(report: dict) -> str:
    params, flops = report["params"], report["flops"]
    w, h = flops["resolution"]
    lines = [f"{'module':<8}{'params':>12}{'GFLOPs@' + f'{w}x{h}':>20}"]
    for m in MODULES:
        lines.append(f"{m:<8}{params[m]:>12,}{flops['modules'][m] / 1e9:>20.3f}")
    lines.append(f"{'total':<8}{params['total']:>12,}{flops['total'] / 1e9:>20.3f}")
    return "\n".join(lines)
