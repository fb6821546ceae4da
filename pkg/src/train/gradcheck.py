"""Finite-difference verification of every differentiable primitive.

Each registered component builds a small random problem (leaves plus a scalar
loss closure). The tape gradient is compared with central differences on a
sample of coordinates of every leaf.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tabulate import tabulate

from src.nets import tape as T
from src.nets.cspn import CSPN
from src.nets.encoder import FrozenEncoder
from src.nets.layers import MLP, Conv2d, Linear, Module
from src.nets.revnet import RevNet, rev_forward, rev_inverse
from src.nets.whiten import whiten_image
from src.render.heads import DecoderHeads
from src.render.projection import Projected, project_gaussians
from src.render.rasterizer import composite
from src.render.renderer import render
from src.scene.camera import make_camera
from src.scene.deformation import DeformationField, deform
from src.scene.gaussians import GaussianCloud
from src.train.losses import StyleStats, loss_embed, style_loss
from src.utils.errors import InvalidInputError
from src.wct.linalg import matrix_power_sym
from src.wct.predictor import TransformPredictor, predict_transform
from src.wct.transform import covariance_loss, covariance_loss_from_cov

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4
NORM_FLOOR = 1e-8

Problem = Tuple[List[T.Tensor], Callable[[], T.Tensor], List[T.Tensor]]


def _leaf(value: np.ndarray) -> T.Tensor:
    return T.Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def _reduce(out, weights: np.ndarray) -> T.Tensor:
    """Scalar ⟨out, weights⟩ so every output entry reaches the gradient."""
    return T.tsum(T.mul(out, weights))


def _randomize(module: Module, rng: np.random.Generator, scale: float = 0.3):
    for p in module.parameters():
        p.value = rng.normal(0.0, scale, p.shape)


def _linear(rng: np.random.Generator) -> Problem:
    layer = Linear(5, 4, rng)
    _randomize(layer, rng)
    x = _leaf(rng.normal(size=(6, 5)))
    w = rng.normal(size=(6, 4))
    return [x] + layer.parameters(), lambda: _reduce(layer(x), w), []


def _mlp(rng: np.random.Generator) -> Problem:
    net = MLP([5, 8, 3], rng)
    _randomize(net, rng)
    x = _leaf(rng.normal(size=(7, 5)))
    w = rng.normal(size=(7, 3))
    return [x] + net.parameters(), lambda: _reduce(net(x), w), []


def _conv2d(rng: np.random.Generator) -> Problem:
    conv = Conv2d(3, 4, rng, stride=2, padding=1)
    _randomize(conv, rng)
    x = _leaf(rng.normal(size=(7, 6, 3)))
    w = rng.normal(size=(4, 3, 4))
    return [x] + conv.parameters(), lambda: _reduce(conv(x), w), []


def _revnet(rng: np.random.Generator) -> Problem:
    revnet = RevNet(rng, n_blocks=2)
    revnet.randomize(rng, scale=0.2)
    image = _leaf(rng.uniform(size=(4, 4, 3)))
    w = rng.normal(size=(4, 4, 32))
    return [image] + revnet.parameters(), lambda: _reduce(rev_forward(revnet, image), w), []


def _coupling_inverse(rng: np.random.Generator) -> Problem:
    revnet = RevNet(rng, n_blocks=2)
    revnet.randomize(rng, scale=0.2)
    features = _leaf(rng.normal(size=(4, 4, 32)))
    w = rng.normal(size=(4, 4, 3))
    return [features] + revnet.parameters(), lambda: _reduce(rev_inverse(revnet, features), w), []


def _softmax(rng: np.random.Generator) -> Problem:
    x = _leaf(rng.normal(size=(4, 6)))
    w = rng.normal(size=(4, 6))
    return [x], lambda: _reduce(T.softmax(x, axis=-1), w), []


def _bilinear(rng: np.random.Generator) -> Problem:
    grid = _leaf(rng.normal(size=(5, 6, 3)))
    coords = _leaf(np.stack([rng.uniform(0.1, 3.9, 8), rng.uniform(0.1, 4.9, 8)], axis=1))
    w = rng.normal(size=(8, 3))
    return [grid, coords], lambda: _reduce(T.bilinear_sample(grid, coords), w), []


def _matrix_power(rng: np.random.Generator) -> Problem:
    a = _leaf(rng.normal(size=(4, 4)))
    w = rng.normal(size=(4, 4))

    def loss():
        spd = T.add(T.matmul(a, T.swap_last(a)), 0.5 * np.eye(4))
        return _reduce(matrix_power_sym(spd, -0.5), w)

    return [a], loss, []


def _whiten(rng: np.random.Generator) -> Problem:
    image = _leaf(rng.uniform(size=(5, 5, 3)))
    w = rng.normal(size=(5, 5, 3))
    return [image], lambda: _reduce(whiten_image(image), w), []


def _cspn(rng: np.random.Generator) -> Problem:
    cspn = CSPN(rng, iterations=2, hidden=4)
    _randomize(cspn, rng, scale=0.2)
    stylized = _leaf(rng.uniform(size=(6, 5, 3)))
    guidance = _leaf(rng.normal(size=(6, 5, 3)))
    w = rng.normal(size=(6, 5, 3))
    return [stylized, guidance] + cspn.parameters(), lambda: _reduce(cspn(stylized, guidance), w), []


def _small_cloud(rng: np.random.Generator, n: int) -> GaussianCloud:
    q = rng.normal(size=(n, 4))
    return GaussianCloud(
        center=rng.uniform(-0.4, 0.4, size=(n, 3)),
        log_scale=np.log(rng.uniform(0.15, 0.3, size=(n, 3))),
        rotation=q / np.linalg.norm(q, axis=1, keepdims=True),
        opacity_logit=rng.uniform(-1.0, 1.5, size=n),
        feature=rng.normal(0.0, 0.5, size=(n, 32)),
    )


def _small_field(rng: np.random.Generator) -> DeformationField:
    deformation = DeformationField((-np.ones(3), np.ones(3)), rng, resolutions=(4,), width=4, hidden=8)
    for head in (deformation.head_center, deformation.head_scale, deformation.head_rotation):
        head.weight.value = rng.normal(0.0, 0.05, head.weight.shape)
    return deformation


def _deform(rng: np.random.Generator) -> Problem:
    cloud = _small_cloud(rng, 5)
    deformation = _small_field(rng)
    w = [rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 4))]

    def loss():
        out = deform(cloud, deformation, 0.37)
        return T.add(T.add(_reduce(out.center, w[0]), _reduce(out.log_scale, w[1])),
                     _reduce(out.rotation, w[2]))

    return [cloud.center, cloud.log_scale, cloud.rotation] + deformation.parameters(), loss, []


def _camera():
    return make_camera(np.array([0.0, 0.0, 3.0]), np.zeros(3), resolution=8, fov_deg=45.0)


def _project_op(rng: np.random.Generator) -> Problem:
    cloud = _small_cloud(rng, 4)
    camera = _camera()
    w_mean = rng.normal(size=(4, 2))
    w_cov = rng.normal(size=(4, 2, 2))
    w_op = rng.normal(size=4)

    def loss():
        p = project_gaussians(deform(cloud, None, 0.0, static=True), camera)
        return T.add(T.add(_reduce(p.mean2d, w_mean[:len(p)]), _reduce(p.cov2d, w_cov[:len(p)])),
                     _reduce(p.opacity, w_op[:len(p)]))

    return cloud.parameters()[:4], loss, []


def _composite(rng: np.random.Generator) -> Problem:
    mean = _leaf(rng.uniform(2.0, 6.0, size=(3, 2)))
    factor = _leaf(rng.normal(0.0, 1.0, size=(3, 2, 2)))
    opacity_logit = _leaf(rng.uniform(-1.0, 1.0, size=3))
    feature = _leaf(rng.normal(size=(3, 4)))
    w = rng.normal(size=(8, 8, 4))

    def loss():
        cov = T.add(T.matmul(factor, T.swap_last(factor)), np.eye(2))
        projected = Projected(mean, cov, T.sigmoid(opacity_logit), feature,
                              depth=np.array([1.0, 2.0, 3.0]), index=np.arange(3))
        return _reduce(composite(projected, 8, 8).values, w)

    return [mean, factor, opacity_logit, feature], loss, []


def _render(rng: np.random.Generator) -> Problem:
    cloud = _small_cloud(rng, 10)
    deformation = _small_field(rng)
    heads = DecoderHeads(rng, hidden=8)
    _randomize(heads.feature_head, rng, scale=0.1)
    revnet = RevNet(rng, n_blocks=2)
    revnet.randomize(rng, scale=0.1)
    camera = _camera()
    target = rng.uniform(size=(8, 8, 3))

    def loss():
        out = render(cloud, deformation, camera, 0.5, heads)
        return loss_embed(out.color, out.feature, target, revnet).total

    return cloud.parameters(), loss, []


def _covariance_loss(rng: np.random.Generator) -> Problem:
    f_cs = _leaf(rng.normal(size=(20, 4)))
    f_s = rng.normal(size=(20, 4)) @ rng.normal(size=(4, 4))
    return [f_cs], lambda: covariance_loss(f_cs, f_s - f_s.mean(axis=0), n_f=4), []


def _predictor(rng: np.random.Generator) -> Problem:
    predictor = TransformPredictor(rng, dim=4, hidden=8)
    _randomize(predictor, rng, scale=0.1)
    f_c = _leaf(rng.normal(size=(16, 4)))
    f_s = _leaf(rng.normal(size=(12, 4)))

    def loss():
        tr = predict_transform(f_c, f_s, predictor)
        combined = tr.combined()
        cov_c = T.div(T.matmul(T.swap_last(T.sub(f_c, T.mean(f_c, axis=0))), T.sub(f_c, T.mean(f_c, axis=0))), 16.0)
        cov_cs = T.matmul(T.matmul(combined, cov_c), T.swap_last(combined))
        cov_s = T.div(T.matmul(T.swap_last(T.sub(f_s, T.mean(f_s, axis=0))), T.sub(f_s, T.mean(f_s, axis=0))), 12.0)
        return covariance_loss_from_cov(cov_cs, cov_s, n_f=4)

    return [f_c, f_s] + predictor.parameters(), loss, []


def _style_loss(rng: np.random.Generator) -> Problem:
    encoder = FrozenEncoder(widths=(4, 6))
    image = _leaf(rng.uniform(size=(8, 8, 3)))
    stats = StyleStats.of(rng.uniform(size=(8, 8, 3)), encoder)
    return [image], lambda: style_loss(encoder(image), stats), encoder.parameters()


def _encoder(rng: np.random.Generator) -> Problem:
    encoder = FrozenEncoder(widths=(4, 6))
    image = _leaf(rng.uniform(size=(8, 8, 3)))
    w = [rng.normal(size=(4, 4, 4)), rng.normal(size=(2, 2, 6))]

    def loss():
        maps = encoder(image)
        return T.add(_reduce(maps[0], w[0]), _reduce(maps[1], w[1]))

    return [image], loss, encoder.parameters()


COMPONENTS: Dict[str, Callable[[np.random.Generator], Problem]] = {
    "linear": _linear,
    "mlp": _mlp,
    "conv2d": _conv2d,
    "coupling": _revnet,
    "coupling_inverse": _coupling_inverse,
    "softmax": _softmax,
    "bilinear_sample": _bilinear,
    "matrix_power": _matrix_power,
    "whiten": _whiten,
    "cspn": _cspn,
    "deform": _deform,
    "project": _project_op,
    "composite": _composite,
    "render": _render,
    "covariance_loss": _covariance_loss,
    "predictor": _predictor,
    "style_loss": _style_loss,
    "encoder": _encoder,
}


@dataclass
class ComponentResult:
    name: str
    leaves: int
    coordinates: int
    max_rel_error: float
    frozen_leaks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE and self.frozen_leaks == 0

    def to_dict(self) -> Dict:
        return {"component": self.name, "leaves": self.leaves, "coordinates": self.coordinates,
                "max_rel_error": self.max_rel_error, "frozen_leaks": self.frozen_leaks,
                "passed": self.passed}


@dataclass
class GradCheckReport:
    results: List[ComponentResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def table(self) -> str:
        rows = [[r.name, r.leaves, r.coordinates, f"{r.max_rel_error:.2e}", r.frozen_leaks,
                 "PASS" if r.passed else "FAIL"] for r in self.results]
        return tabulate(rows, headers=["Component", "Leaves", "Coords", "Max rel. err", "Frozen leaks", "Status"],
                        tablefmt="grid")

    def __str__(self) -> str:
        status = "passed" if self.passed else "FAILED"
        return f"{self.table()}\nGradient check {status} (tolerance {TOLERANCE:.0e}, step {STEP:.0e})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-8)."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)),
                NORM_FLOOR)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def _analytic(leaves: Sequence[T.Tensor], loss_fn: Callable[[], T.Tensor]) -> List[np.ndarray]:
    for leaf in leaves:
        leaf.grad = None
    with T.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]


def _numeric(leaf: T.Tensor, index: Tuple[int, ...], loss_fn: Callable[[], T.Tensor], h: float) -> float:
    original = leaf.value[index]
    leaf.value[index] = original + h
    plus = float(loss_fn().value)
    leaf.value[index] = original - h
    minus = float(loss_fn().value)
    leaf.value[index] = original
    return (plus - minus) / (2.0 * h)


def check_component(name: str, trials: int, rng: np.random.Generator, h: float = STEP) -> ComponentResult:
    """Compare tape and central-difference gradients of one component.

    ``trials`` coordinates are sampled per leaf (all of them for small leaves).
    """
    leaves, loss_fn, frozen = COMPONENTS[name](rng)
    for leaf in leaves:
        leaf.value = np.ascontiguousarray(leaf.value, dtype=np.float64)
        leaf.requires_grad = True
    for p in frozen:
        p.grad = None
    grads = _analytic(leaves, loss_fn)
    leaks = sum(1 for p in frozen if p.grad is not None and np.any(p.grad != 0))
    analytic_values, numeric_values = [], []
    for leaf, grad in zip(leaves, grads):
        size = leaf.value.size
        picks = rng.choice(size, size=min(trials, size), replace=False)
        for flat in picks:
            index = np.unravel_index(int(flat), leaf.value.shape)
            analytic_values.append(grad[index])
            numeric_values.append(_numeric(leaf, index, loss_fn, h))
    err = relative_error(np.array(analytic_values), np.array(numeric_values))
    logger.debug(f"gradcheck {name}: {len(analytic_values)} coordinates, max rel. error {err:.3e}")
    return ComponentResult(name, len(leaves), len(analytic_values), err, leaks)


def run_gradcheck(components: Optional[Sequence[str]] = None, trials: int = 20, seed: int = 0) -> GradCheckReport:
    """Run the suite over ``components`` (all when None or ``["all"]``).

    Raises:
        InvalidInputError: unknown component name or non-positive ``trials``
    """
    if trials < 1:
        raise InvalidInputError(f"trials must be positive, got {trials}")
    names = list(COMPONENTS) if not components or list(components) == ["all"] else list(components)
    unknown = [n for n in names if n not in COMPONENTS]
    if unknown:
        raise InvalidInputError(f"Unknown gradcheck component(s) {unknown}; choose from {sorted(COMPONENTS)}")
    report = GradCheckReport()
    for name in names:
        rng = np.random.default_rng([seed, list(COMPONENTS).index(name)])
        result = check_component(name, trials, rng)
        report.results.append(result)
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, f"{name}: max relative error {result.max_rel_error:.2e} over {result.coordinates} coordinates")
    return report
