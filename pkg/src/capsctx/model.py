"""End-to-end capsule network with RW / CRF / CORR ablation switches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .capsules import CapsuleGrid, check_stem, conv_stem, form_primary_capsules, predict, squash
from .config import ConfigError, ModelConfig
from .correlation import alpha_feature_map, combine, compute_alphas, f_rho
from .crf import crf, init_pairwise, off_diagonal_mask
from .routing import RoutingState, route
from .routing_init import build_B, init_kernel, kernel_pass, statistic_map
from .tensor import Parameter, Tensor


@dataclass
class ForwardResult:
    decision: Tensor        # (B, J, I_d) squashed decision capsules
    scores: Tensor          # (B, J) capsule lengths
    routed: Tensor          # pre-squash routing output s_j
    state: RoutingState
    init_logits: Tensor
    predictions: Tensor     # P before the CRF
    refined: Tensor         # P-hat fed to routing / correlation
    correlated: Tensor | None = None


class CapsNet:
    """Parameters plus the forward pass; gradients come from the active Tape."""

    def __init__(self, config: ModelConfig, seed: int | None = None):
        check_stem(config.image_size, config.stem_kernel, config.stem_stride1,
                   config.stem_stride2, config.grid_size)
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self._init_params(rng)

    def _add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter id {name!r}")
        p = Parameter(name, np.asarray(value, dtype=self.dtype))
        self.params[name] = p
        return p

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        k1, c1, z = c.stem_kernel, c.stem_channels, c.z_channels
        fan1 = k1 * k1 * c.in_channels
        fan2 = k1 * k1 * c1
        self._add("stem1.w", rng.normal(0, np.sqrt(2.0 / fan1), (k1, k1, c.in_channels, c1)))
        self._add("stem1.b", np.zeros(c1))
        self._add("stem2.w", rng.normal(0, np.sqrt(1.0 / fan2), (k1, k1, c1, z)))
        self._add("stem2.b", np.zeros(z))
        k, j = c.num_capsules, c.num_classes
        self._add("predict.W", rng.normal(0, c.w_init_std, (k, j, c.primary_dim, c.decision_dim)))
        self._add("rw.kernel", init_kernel(c.f, c.rw_kernel_noise, rng, c.rw_kernel_center))
        self._add("crf.M", init_pairwise(j, c.decision_dim, c.crf_share, 0.01, rng, c.crf_init_gain))
        n = c.grid_size
        self._add("corr.kernels", rng.normal(0, c.alpha_init_std, (j, k - 1, n, n)))

    # -- parameter bookkeeping -------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, value in state.items():
            self.params[name].assign(value)

    def enforce_constraints(self) -> None:
        """Keep the CRF pairwise diagonal at exactly zero."""
        m = self.params["crf.M"]
        mask = off_diagonal_mask(self.config.num_classes, m.dtype)
        if np.any(m.data * (1 - mask) != 0):
            m.assign(m.data * mask)

    # -- forward -----------------------------------------------------------------

    def features(self, images) -> Tensor:
        c, p = self.config, self.params
        x = T.as_tensor(np.asarray(images, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1:] != (c.image_size, c.image_size, c.in_channels):
            raise T.ShapeError("forward", [x.shape],
                               f"expected (B, {c.image_size}, {c.image_size}, {c.in_channels})")
        return conv_stem(x, p["stem1.w"], p["stem1.b"], p["stem2.w"], p["stem2.b"],
                         c.stem_stride1, c.stem_stride2)

    def forward(self, images) -> ForwardResult:
        feats = self.features(images)
        grid = form_primary_capsules(feats, self.config.primary_dim)
        return self.forward_capsules(grid, feats)

    def forward_capsules(self, grid: CapsuleGrid, feats: Tensor | None = None) -> ForwardResult:
        """Everything downstream of the primary capsules."""
        c, p = self.config, self.params
        bsz, k, j = grid.poses.shape[0], grid.num_capsules, c.num_classes
        u = grid.flat()
        preds = predict(u, p["predict.W"])

        stats = None
        if c.use_rw or c.use_corr:
            stats = statistic_map(grid, c.epsilon)
        if c.use_rw:
            b0 = build_B(kernel_pass(stats, p["rw.kernel"]), j)
        else:
            b0 = T.Tensor(np.zeros((bsz, k, j), dtype=self.dtype))

        refined = crf(preds, p["crf.M"], c.crf_iters) if c.use_crf else preds
        routed, state = route(refined, b0, c.routing_iters, c.routing_axis)

        correlated = None
        if c.use_corr:
            fmap = alpha_feature_map(stats, feats, c.corr_feature)
            alphas = compute_alphas(fmap, p["corr.kernels"])
            correlated = f_rho(refined, alphas, c.corr_order)
            decision = combine(routed, correlated, c.corr_lambda)
        else:
            decision = squash(routed)
        scores = T.norm(decision, axis=-1)
        return ForwardResult(decision, scores, routed, state, b0, preds, refined, correlated)

    def predict_scores(self, images, batch_size: int = 64) -> np.ndarray:
        out = []
        with T.no_tape():
            for start in range(0, len(images), batch_size):
                out.append(self.forward(images[start:start + batch_size]).scores.data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.num_classes))
