"""Built-in invariant battery behind ``augseg selftest``.

A quick sweep over the load-bearing contracts (reconstruction, gradient
agreement, metric identities, file round-trips).  Prints one line per
check; returns the number of failures.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from . import daug
from .autodiff import Tensor, conv2d, finite_diff_check, softmax
from .fusion import FusionParams, cg_fuse, cross_attention
from .losses import combined_loss
from .metrics import dice_score, hd95, wilcoxon_signed_rank
from .netpbm import read_pgm, write_pgm
from .pca import feature_pca
from .wavelet import WtAugConfig, haar_dwt2, haar_idwt2, wt_aug


def _checks():
    rng = np.random.default_rng(0)

    def wavelet_roundtrip():
        for shape in [(1, 2, 8, 8), (2, 3, 7, 5), (1, 1, 6, 9)]:
            f = Tensor(rng.normal(size=shape).astype(np.float32))
            err = np.max(np.abs(haar_idwt2(haar_dwt2(f)).numpy() - f.numpy()))
            assert err < 1e-5, f"roundtrip error {err} on {shape}"

    def wavelet_parseval():
        f = Tensor(rng.normal(size=(1, 3, 8, 8)).astype(np.float64))
        bands = haar_dwt2(f)
        got = sum(float((b.numpy() ** 2).sum()) for b in bands.bands())
        want = float((f.numpy() ** 2).sum())
        assert abs(got - want) / want < 1e-10

    def wt_aug_identity():
        f = Tensor(rng.normal(size=(1, 2, 6, 6)).astype(np.float32))
        out = wt_aug(f, WtAugConfig(keep_prob=(1, 1, 1, 1)))
        assert np.array_equal(out.numpy(), f.numpy())

    def gradient_conv():
        k = Tensor(rng.normal(size=(2, 1, 3, 3)))
        err = finite_diff_check(
            lambda x: (conv2d(x, k, padding=1) * 1.5).sum(),
            Tensor(rng.normal(size=(1, 1, 5, 5))))
        assert err < 1e-4, f"conv gradient err {err}"

    def gradient_fusion():
        params = FusionParams.create(4, 4, np.random.default_rng(1),
                                     head_count=2, zero_out_proj=False,
                                     dtype=np.float64)
        enc = Tensor(rng.normal(size=(1, 4, 2, 2)).astype(np.float64))
        w = Tensor(rng.normal(size=(1, 4, 2, 2)).astype(np.float64))
        err = finite_diff_check(
            lambda d: (cg_fuse(d, enc, params) * w).sum(),
            Tensor(rng.normal(size=(1, 4, 2, 2))))
        assert err < 1e-4, f"fusion gradient err {err}"

    def gradient_loss():
        labels = rng.integers(0, 3, size=(1, 4, 4))
        err = finite_diff_check(lambda x: combined_loss(x, labels),
                                Tensor(rng.normal(size=(1, 3, 4, 4))))
        assert err < 1e-4, f"loss gradient err {err}"

    def softmax_contract():
        y = softmax(Tensor(rng.normal(size=(5, 9)) * 7), -1).numpy()
        assert np.all(y >= 0)
        assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-6

    def attention_single_key():
        q = Tensor(rng.normal(size=(1, 4, 4)))
        kv = Tensor(rng.normal(size=(1, 1, 4)))
        out = cross_attention(q, kv, kv, head_count=2).numpy()
        assert np.array_equal(out, np.repeat(kv.numpy(), 4, axis=1))

    def metric_identities():
        m = (rng.random((12, 12)) < 0.4).astype(np.uint8)
        assert dice_score(m, m, 1) == 1.0
        assert hd95(m, m, 1) == 0.0

    def wilcoxon_exact_case():
        res = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0])
        assert res.statistic == 0.0 and abs(res.p_value - 0.0625) < 1e-12

    def file_roundtrips():
        with tempfile.TemporaryDirectory() as tmp:
            arr = rng.normal(size=(2, 3, 4)).astype(np.float32)
            path = os.path.join(tmp, "t.daug")
            daug.write_tensor(path, arr)
            assert daug.read_tensor(path).tobytes() == arr.tobytes()
            img = rng.integers(0, 256, size=(9, 11), dtype=np.uint8)
            ppath = os.path.join(tmp, "t.pgm")
            write_pgm(ppath, img)
            assert np.array_equal(read_pgm(ppath), img)

    def pca_orthogonal():
        fm = rng.normal(size=(8, 10, 10))
        _, _, comps = feature_pca(fm, k=3)
        gram = comps @ comps.T
        assert np.max(np.abs(gram - np.eye(3))) < 1e-6

    return [
        ("wavelet round-trip", wavelet_roundtrip),
        ("wavelet energy preservation", wavelet_parseval),
        ("wavelet-mask identity", wt_aug_identity),
        ("conv2d gradient", gradient_conv),
        ("fusion gradient", gradient_fusion),
        ("combined-loss gradient", gradient_loss),
        ("softmax probability rows", softmax_contract),
        ("single-key attention", attention_single_key),
        ("metric identities", metric_identities),
        ("wilcoxon exact case", wilcoxon_exact_case),
        ("file round-trips", file_roundtrips),
        ("pca component orthogonality", pca_orthogonal),
    ]


def run_selftest() -> int:
    failures = 0
    for name, check in _checks():
        try:
            check()
        except Exception as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name}")
    return failures
