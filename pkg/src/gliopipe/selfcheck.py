"""Built-in invariant suite backing the gradcheck and selftest subcommands."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .dcn import DcnConfig, build_dcn, classifier_width, dcn1_config, dcn2_config
from .ensemble import Prediction, aggregate_tiles, fuse_modalities
from .gradcheck import grad_check
from .histo import qc_tile
from .metrics import balanced_accuracy, cohens_kappa, f1_scores
from .optim import AdamState, adam_step
from .tensor import Tensor


def _random_chain_cases(n_cases: int, seed: int):
    """Yield (name, f, x) scalar-valued gradient-check cases."""
    rng = np.random.default_rng(seed)
    kinds = ["relu", "linear", "softmax", "conv", "conv_chain", "pool"]
    for i in range(n_cases):
        kind = kinds[i % len(kinds)]
        if kind == "relu":
            # keep inputs clear of the kink so finite differences stay two-sided
            raw = rng.normal(0.5, 1.0, size=(3, 4))
            x = Tensor(raw + np.sign(raw) * 0.05)
            yield kind, lambda t: T.relu(t).sum(), x
        elif kind == "linear":
            w = Tensor(rng.normal(size=(4, 3)).astype(np.float32))
            b = Tensor(rng.normal(size=3).astype(np.float32))
            x = Tensor(rng.normal(size=(2, 4)))
            yield kind, lambda t, w=w, b=b: T.linear(t, w, b).sum(), x
        elif kind == "softmax":
            x = Tensor(rng.normal(size=(2, 4)))
            labels = rng.integers(0, 4, size=2)
            yield kind, lambda t, y=labels: T.cross_entropy_loss(t, y), x
        elif kind == "conv":
            w = Tensor(rng.normal(scale=0.5, size=(2, 3, 3, 3)).astype(np.float32))
            x = Tensor(rng.normal(size=(1, 3, 6, 6)))
            yield kind, lambda t, w=w: T.conv2d(t, w, stride=1, padding=1).sum(), x
        elif kind == "conv_chain":
            w1 = Tensor(rng.normal(scale=0.5, size=(2, 1, 3, 3)).astype(np.float32))
            w2 = Tensor(rng.normal(scale=0.5, size=(2, 4)).astype(np.float32))
            b = Tensor(np.zeros(4, dtype=np.float32))
            labels = rng.integers(0, 4, size=1)

            def f(t, w1=w1, w2=w2, b=b, y=labels):
                h = T.relu(T.conv2d(t, w1, stride=1, padding=1))
                h = T.global_avg_pool(h)
                return T.cross_entropy_loss(T.linear(h, w2, b), y)

            yield kind, f, Tensor(rng.normal(size=(1, 1, 5, 5)))
        else:
            x = Tensor(rng.normal(size=(1, 2, 4, 4)))
            yield kind, lambda t: T.avg_pool2d(t, 2, 2).sum(), x


def run_gradient_checks(n_cases: int = 100, seed: int = 0, verbose: bool = False) -> float:
    worst = 0.0
    for name, f, x in _random_chain_cases(n_cases, seed):
        err = grad_check(f, x, eps=1e-3)
        worst = max(worst, err)
        if verbose and err > 1e-3:
            print(f"  {name}: rel error {err:.2e}")
    return worst


def run_selftest() -> bool:
    checks: list[tuple[str, bool]] = []

    p = T.softmax(Tensor([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]])).data
    checks.append(("softmax rows sum to 1",
                   bool(np.allclose(p.sum(axis=1), 1.0, atol=1e-6)) and p.min() > 0))

    checks.append(("DCN1 classifier width 128", classifier_width(dcn1_config()) == 128))
    checks.append(("DCN2 classifier width 1104", classifier_width(dcn2_config()) == 1104))

    rng = np.random.default_rng(7)
    ok = True
    for _ in range(10):
        blocks = [int(rng.integers(1, 4)) for _ in range(int(rng.integers(1, 4)))]
        cfg = DcnConfig(block_config=blocks, growth_rate=int(rng.integers(2, 9)),
                        init_features=int(rng.integers(4, 17)), input_size=32,
                        in_channels=1)
        model = build_dcn(cfg, seed=1)
        ok &= model.feature_width == classifier_width(cfg)
    checks.append(("channel arithmetic on random configs", ok))

    param = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    state = AdamState({"p": param})
    before = param.data.copy()
    for _ in range(3):
        param.grad = np.zeros_like(param.data)
        adam_step({"p": param}, state)
    checks.append(("Adam no-op under zero gradients",
                   bool(np.array_equal(param.data, before)) and state.step == 3))

    cm = np.diag([4, 3, 5])
    micro, macro = f1_scores(cm)
    checks.append(("metric anchors", micro == 1.0 and macro == 1.0
                   and cohens_kappa(cm) == 1.0 and balanced_accuracy(cm) == 1.0))

    tiles = [Prediction.from_probs(p) for p in (
        [0.05, 0.03, 0.9, 0.02], [0.1, 0.05, 0.8, 0.05],
        [0.02, 0.95, 0.02, 0.01], [0.0, 0.0, 0.01, 0.99])]
    checks.append(("tile voting hand example", aggregate_tiles(tiles).label == "G"))

    fused = fuse_modalities("c", {
        "hist": Prediction.from_probs([0.05, 0.05, 0.9], ("A", "O", "G")),
        "T2w": Prediction.from_probs([0.1, 0.2, 0.7], ("A", "O", "G")),
        "GdT1w": Prediction.from_probs([0.02, 0.95, 0.03], ("A", "O", "G")),
    })
    checks.append(("modality fusion hand example", fused.fused.label == "G"))

    white = np.full((16, 16, 3), 255, dtype=np.uint8)
    tissue = np.full((16, 16, 3), 120, dtype=np.uint8)
    tissue[..., 0] = 160
    checks.append(("tile QC verdicts", qc_tile(white).verdict == "negative_N"
                   and qc_tile(tissue).verdict == "positive"))

    err = run_gradient_checks(n_cases=12, seed=3)
    checks.append(("gradient spot check < 1e-2", err < 1e-2))

    all_ok = True
    for name, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        all_ok &= ok
    return all_ok
