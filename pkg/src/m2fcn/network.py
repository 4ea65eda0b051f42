"""Multi-stage network with recursive side-output inputs.

Stage 1 sees the raw image. Every later stage sees the image concatenated
with the previous stage's side outputs (all N of them, or a single chosen
level), passed through a sigmoid so the extra channels live in [0, 1] like
the image. Each stage also fuses its own side logits into one map through
learned weights; the prediction is the sigmoid of the last stage's fused
map, with values near 0 marking boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .loss import fuse
from .ops import concat_channels, sigmoid
from .subnet import LevelSpec, SubNet, SubNetConfig, build_subnet

__all__ = [
    "NetworkConfig",
    "SideOutputs",
    "M2FCN",
    "stage_input",
    "build_network",
]


@dataclass
class NetworkConfig:
    stages: int
    subnet: SubNetConfig
    recursive_mode: str = "all"  # "all" | "single"
    recursive_level: int | None = None
    alpha_side: tuple | None = None  # (stages, levels) loss weights
    alpha_fuse: tuple | None = None  # (stages,)
    concat_logits: bool = False  # feed raw logits to the next stage instead
    learn_upsample: bool = False
    beta_mode: str = "balanced"

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one stage")
        n = len(self.subnet.levels)
        if self.recursive_mode not in ("all", "single"):
            raise ValueError(f"unknown recursive mode {self.recursive_mode!r}")
        if self.recursive_mode == "single":
            if self.recursive_level is None or not 1 <= self.recursive_level <= n:
                raise ValueError(
                    f"single-input level {self.recursive_level} outside 1..{n}"
                )
        if self.alpha_side is None:
            self.alpha_side = tuple((1.0,) * n for _ in range(self.stages))
        else:
            self.alpha_side = tuple(
                tuple(float(a) for a in row) for row in self.alpha_side
            )
            if len(self.alpha_side) != self.stages or any(
                len(row) != n for row in self.alpha_side
            ):
                raise ValueError(
                    f"alpha_side must be {self.stages} rows of {n} weights"
                )
        if self.alpha_fuse is None:
            self.alpha_fuse = (1.0,) * self.stages
        else:
            self.alpha_fuse = tuple(float(a) for a in self.alpha_fuse)
            if len(self.alpha_fuse) != self.stages:
                raise ValueError(f"alpha_fuse must list {self.stages} weights")
        if any(a < 0 for row in self.alpha_side for a in row) or any(
            a < 0 for a in self.alpha_fuse
        ):
            raise ValueError("loss weights must be nonnegative")

    @property
    def recursive_count(self) -> int:
        return len(self.subnet.levels) if self.recursive_mode == "all" else 1

    def stage_config(self, stage: int) -> SubNetConfig:
        """Per-stage sub-net config; later stages take extra input channels."""
        if stage == 1:
            return self.subnet
        return replace(
            self.subnet,
            input_channels=self.subnet.input_channels + self.recursive_count,
        )

    def to_dict(self) -> dict:
        recursive = (
            "all" if self.recursive_mode == "all" else f"single:{self.recursive_level}"
        )
        return {
            "stages": self.stages,
            "input_channels": self.subnet.input_channels,
            "levels": [[s.convs, s.channels, s.kernel] for s in self.subnet.levels],
            "recursive": recursive,
            "alpha_side": [list(row) for row in self.alpha_side],
            "alpha_fuse": list(self.alpha_fuse),
            "concat_logits": self.concat_logits,
            "learn_upsample": self.learn_upsample,
            "beta_mode": self.beta_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        levels = tuple(LevelSpec(c, ch, k) for c, ch, k in d["levels"])
        mode, level = parse_recursive(d.get("recursive", "all"))
        return cls(
            stages=int(d["stages"]),
            subnet=SubNetConfig(levels, int(d.get("input_channels", 1))),
            recursive_mode=mode,
            recursive_level=level,
            alpha_side=d.get("alpha_side"),
            alpha_fuse=d.get("alpha_fuse"),
            concat_logits=bool(d.get("concat_logits", False)),
            learn_upsample=bool(d.get("learn_upsample", False)),
            beta_mode=d.get("beta_mode", "balanced"),
        )


def parse_recursive(text: str) -> tuple[str, int | None]:
    """"all" or "single:<level>" -> (mode, level)."""
    if text == "all":
        return "all", None
    if text.startswith("single:"):
        try:
            return "single", int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise ValueError(f"recursive must be 'all' or 'single:<level>', got {text!r}")


@dataclass
class SideOutputs:
    """All logit maps of one forward pass, keyed by (stage, level) and stage."""

    side: dict[tuple[int, int], Tensor]
    fused: dict[int, Tensor]


def stage_input(
    image: Tensor,
    prev_maps: list[Tensor],
    mode: str = "all",
    level: int | None = None,
) -> Tensor:
    """Input to one stage.

    The first stage (no previous maps) sees the raw image; later stages see
    the image concatenated with the selected previous-stage maps.
    """
    if not prev_maps:
        return image
    if mode == "all":
        chosen = list(prev_maps)
    elif mode == "single":
        if level is None or not 1 <= level <= len(prev_maps):
            raise ValueError(f"single-input level {level} outside 1..{len(prev_maps)}")
        chosen = [prev_maps[level - 1]]
    else:
        raise ValueError(f"unknown recursive mode {mode!r}")
    return concat_channels([image] + chosen)


class M2FCN:
    """Stage chain plus per-stage fusion weights."""

    def __init__(self, config: NetworkConfig, stages: list[SubNet], fuse_weights: list[Tensor]):
        self.config = config
        self.stages = stages
        self.fuse_weights = fuse_weights

    def forward_all(self, image: Tensor) -> SideOutputs:
        cfg = self.config
        if image.data.ndim != 3 or image.shape[0] != cfg.subnet.input_channels:
            raise ValueError(
                f"image must be {cfg.subnet.input_channels}xHxW, got {image.shape}"
            )
        side: dict[tuple[int, int], Tensor] = {}
        fused: dict[int, Tensor] = {}
        prev: list[Tensor] = []
        for m, stage in enumerate(self.stages, start=1):
            x = stage_input(image, prev, cfg.recursive_mode, cfg.recursive_level)
            logits = stage.forward(x)
            for n, t in enumerate(logits, start=1):
                side[(m, n)] = t
            fused[m] = fuse(logits, self.fuse_weights[m - 1])
            prev = logits if cfg.concat_logits else [sigmoid(t) for t in logits]
        return SideOutputs(side, fused)

    def predict(self, image: Tensor) -> np.ndarray:
        """Probability of NOT being boundary, as a plain (H, W) array."""
        outs = self.forward_all(image)
        final = outs.fused[self.config.stages]
        return sigmoid(final).data[0].copy()

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for m, stage in enumerate(self.stages, start=1):
            out.update(stage.parameters())
            hw = self.fuse_weights[m - 1]
            out[hw.name] = hw
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if v.requires_grad}

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(
                f"state does not match network (missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]})"
            )
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr


def build_network(config: NetworkConfig, seed: int) -> M2FCN:
    """Seeded construction; equal fusion weights 1/N at the start."""
    n = len(config.subnet.levels)
    stage_seeds = np.random.SeedSequence(seed).generate_state(config.stages)
    stages = []
    fuse_weights = []
    for m in range(1, config.stages + 1):
        stages.append(
            build_subnet(
                config.stage_config(m),
                int(stage_seeds[m - 1]),
                prefix=f"stage{m}/",
                learn_upsample=config.learn_upsample,
            )
        )
        fuse_weights.append(
            Tensor(np.full(n, 1.0 / n), requires_grad=True, name=f"stage{m}/fuse/weight")
        )
    return M2FCN(config, stages, fuse_weights)
