"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete. The training-based checks (3, 4, 7) dominate the
runtime; the whole module takes roughly 20-30 minutes on a 2-core CPU.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from ivusnet.augment import AugmentConfig
from ivusnet.data import load_frame, read_mask, synth_phantoms
from ivusnet.errors import DimensionError
from ivusnet.gradcheck import (NETWORK_TOL, PER_OP_TOL, gradient_suite,
                               network_gradient_check)
from ivusnet.metrics import hausdorff, jaccard
from ivusnet.network import ArchConfig, build_network
from ivusnet.postprocess import (EllipseParams, ellipse_to_mask,
                                 extract_contour, fit_ellipse, trace_boundary)
from ivusnet.training import (TrainConfig, fit_network, predict_prob)

from oracles import naive_hausdorff, naive_jaccard


def report(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {number} {name}: {status}{suffix}", flush=True)
    return ok


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_phantoms")
    records = synth_phantoms(seed=11, count=48, size=64, out_dir=out)
    return out, [load_frame(r) for r in records]


def test_criterion_1_gradient_suite():
    t0 = time.time()
    worst = gradient_suite(seeds=5)
    net_err = network_gradient_check(seed=0)
    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if v > PER_OP_TOL}
    ok = not bad and net_err <= NETWORK_TOL and elapsed <= 120
    report(1, "gradient suite", ok,
           f"worst op err {max(worst.values()):.2e}, network {net_err:.2e}, "
           f"{elapsed:.0f}s")
    assert not bad, f"ops over tolerance: {bad}"
    assert net_err <= NETWORK_TOL
    assert elapsed <= 120


def test_criterion_2_architecture_contract(rng):
    ok = True
    details = []
    for preset in ("tiny", "paper"):
        net = build_network(ArchConfig.from_preset(preset), seed=0)
        for hw in (64, 192):
            x = rng.random((1, 1, hw, hw), dtype=np.float32)
            out = net.forward(x)
            ok &= out.shape == (1, 1, hw, hw)
            ok &= bool(np.all(out.data > 0) and np.all(out.data < 1))
        details.append(f"{preset} ok")
        try:
            net.forward(rng.random((1, 1, 60, 60), dtype=np.float32))
            ok = False
            details.append(f"{preset} accepted 60x60!")
        except DimensionError as exc:
            ok &= "divisible by 8" in str(exc)
    report(2, "architecture contract", ok, ", ".join(details))
    assert ok


@pytest.mark.slow
def test_criterion_3_overfit(corpus):
    _, frames = corpus
    train_frames = frames[:16]
    t0 = time.time()
    tcfg = TrainConfig(target="lumen", learning_rate=3e-4, epochs=300,
                       validation_count=0, seed=0)
    net, history = fit_network(train_frames, ArchConfig.from_preset("tiny"),
                               tcfg, aug_cfg=None)
    jm = float(np.mean([jaccard(predict_prob(net, f.image) >= 0.5,
                                f.masks[0]) for f in train_frames]))
    elapsed = time.time() - t0
    ok = jm >= 0.95 and elapsed <= 600
    report(3, "overfit check", ok,
           f"train JM {jm:.3f} after 300 epochs, {elapsed:.0f}s")
    assert jm >= 0.95
    assert elapsed <= 600


@pytest.mark.slow
def test_criterion_4_generalization(corpus):
    _, frames = corpus
    train_frames, test_frames = frames[:32], frames[32:48]
    t0 = time.time()
    seed_results = []
    for seed in range(3):
        per_target = {}
        for ti, target in enumerate(("lumen", "media")):
            tcfg = TrainConfig(target=target, learning_rate=3e-4, epochs=15,
                               validation_count=0, seed=seed)
            net, _ = fit_network(train_frames,
                                 ArchConfig.from_preset("tiny"), tcfg,
                                 AugmentConfig(seed=seed), target_index=ti)
            jms, hds = [], []
            for f in test_frames:
                prob = predict_prob(net, f.image)
                contour, _, mask = extract_contour(prob)
                jms.append(jaccard(mask, f.masks[ti]))
                hds.append(hausdorff(contour, trace_boundary(f.masks[ti])))
            per_target[target] = (float(np.mean(jms)), float(np.mean(hds)))
        passed = all(jm >= 0.85 and hd <= 3.0
                     for jm, hd in per_target.values())
        seed_results.append((seed, per_target, passed))
    elapsed = time.time() - t0
    n_passed = sum(1 for _, _, p in seed_results if p)
    detail = "; ".join(
        f"seed {s}: lumen JM {pt['lumen'][0]:.2f}/HD {pt['lumen'][1]:.2f}, "
        f"media JM {pt['media'][0]:.2f}/HD {pt['media'][1]:.2f}"
        for s, pt, _ in seed_results)
    ok = n_passed >= 2 and elapsed <= 1800
    report(4, "generalization sanity", ok,
           f"{n_passed}/3 seeds pass; {detail}; {elapsed:.0f}s")
    assert n_passed >= 2
    assert elapsed <= 1800


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(42)
    jm_exact = all(
        jaccard(a, b) == naive_jaccard(a, b)
        for a, b in ((rng.random((16, 16)) > rng.uniform(0.3, 0.7),
                      rng.random((16, 16)) > rng.uniform(0.3, 0.7))
                     for _ in range(100)))
    hd_close = all(
        abs(hausdorff(a, b) - naive_hausdorff(a, b)) <= 1e-9
        for a, b in ((rng.random((int(rng.integers(1, 24)), 2)) * 16,
                      rng.random((int(rng.integers(1, 24)), 2)) * 16)
                     for _ in range(100)))
    pred = np.zeros((2, 2), dtype=bool)
    truth = np.zeros((2, 2), dtype=bool)
    pred[0, 0] = pred[1, 0] = True
    truth[1, 0] = truth[1, 1] = True
    hand_jm = jaccard(pred, truth) == pytest.approx(1.0 / 3.0)
    hand_hd = hausdorff(np.array([[0.0, 0.0]]),
                        np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    ok = jm_exact and hd_close and hand_jm and hand_hd
    report(5, "metric oracles", ok,
           "JM exact on 100 pairs, HD within 1e-9 on 100 pairs, hand cases")
    assert ok


def test_criterion_6_ellipse_recovery():
    rng = np.random.default_rng(0)
    # part 1: noiseless parametric samples, 50 random ellipses
    param_worst = 0.0
    for _ in range(50):
        a = rng.uniform(4, 20)
        b = rng.uniform(4, a)
        th = rng.uniform(0, np.pi)
        cx, cy = rng.uniform(30, 34, 2)
        t = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        ct, st = np.cos(th), np.sin(th)
        pts = np.column_stack([cx + ct * a * np.cos(t) - st * b * np.sin(t),
                               cy + st * a * np.cos(t) + ct * b * np.sin(t)])
        e = fit_ellipse(pts)
        param_worst = max(param_worst,
                          abs(e.cx - cx), abs(e.cy - cy),
                          abs(e.a - a) / a, abs(e.b - b) / b)
    part1 = param_worst <= 1e-6

    # part 2: rasterize -> extract_contour round trip on the same draw range
    center_worst = 0.0
    axes_worst = 0.0
    axes_fail = []
    for _ in range(50):
        a = rng.uniform(4, 20)
        b = rng.uniform(4, a)
        e = EllipseParams(32 + rng.uniform(-3, 3), 32 + rng.uniform(-3, 3),
                          a, b, rng.uniform(0, np.pi))
        prob = ellipse_to_mask(e, 64, 64).astype(np.float64)
        _, fit, _ = extract_contour(prob)
        c_err = float(np.hypot(fit.cx - e.cx, fit.cy - e.cy))
        a_err = max(abs(fit.a - e.a) / e.a, abs(fit.b - e.b) / e.b)
        center_worst = max(center_worst, c_err)
        axes_worst = max(axes_worst, a_err)
        if a_err > 0.02 or c_err > 0.5:
            axes_fail.append((round(e.a, 1), round(e.b, 1),
                              round(a_err * 100, 2)))
    part2 = center_worst <= 0.5 and axes_worst <= 0.02
    ok = part1 and part2
    report(6, "ellipse recovery", ok,
           f"parametric worst {param_worst:.1e}; round-trip center "
           f"{center_worst:.2f}px, axes {axes_worst * 100:.2f}%"
           + (f"; over-tolerance draws {axes_fail}" if axes_fail else ""))
    assert part1, f"parametric fit off by {param_worst}"
    # A rasterized mask does not pin the generating ellipse to 2% at the
    # small end of the stated range: ellipses with semi-axes ~4px differing
    # by >10% can rasterize to the *identical* mask (verified by direct
    # search), so no estimator can guarantee 2% there. The assertion is kept
    # as stated; failures list the offending draws.
    assert part2, (f"round-trip axes error {axes_worst * 100:.2f}% > 2% on "
                   f"draws {axes_fail}; axes error at <6px is dominated by "
                   f"rasterization ambiguity, not fit quality")


@pytest.mark.slow
def test_criterion_7_ablation_directions(tmp_path):
    from ivusnet.ablation import run_ablation
    t0 = time.time()
    result = run_ablation(tmp_path / "work", models_per_arm=5, n_seeds=3)
    elapsed = time.time() - t0
    refine_ok = result.mean("full") >= result.mean("no_refine")
    aug_ok = result.mean("full") >= result.mean("no_aug")
    ok = refine_ok and aug_ok
    report(7, "ablation directions", ok,
           f"full {result.mean('full'):.3f} vs no-refine "
           f"{result.mean('no_refine'):.3f} vs no-aug "
           f"{result.mean('no_aug'):.3f}; {elapsed:.0f}s")
    assert refine_ok, result.summary()
    assert aug_ok, result.summary()


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "ivusnet", *args],
                          capture_output=True, text=True)


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    checks = {}
    # synth twice
    for d in ("s1", "s2"):
        assert _cli("synth", "--out", str(tmp_path / d), "--count", "4",
                    "--size", "48", "--seed", "5").returncode == 0
    checks["synth"] = all(
        (tmp_path / "s1" / n).read_bytes() == (tmp_path / "s2" / n).read_bytes()
        for n in ("img_0000.pgm", "lum_0003.pgm", "manifest.tsv"))
    # train twice, 1 epoch
    for d in ("m1.ckpt", "m2.ckpt"):
        r = _cli("train", "--manifest", str(tmp_path / "s1" / "manifest.tsv"),
                 "--depths", "2,3,4,5", "--epochs", "1",
                 "--validation-count", "1", "--seed", "2",
                 "--out", str(tmp_path / d))
        assert r.returncode == 0, r.stderr
    checks["train"] = (tmp_path / "m1.ckpt").read_bytes() == \
        (tmp_path / "m2.ckpt").read_bytes()
    # predict twice (probability map is always written)
    for d in ("p1", "p2"):
        (tmp_path / d).mkdir()
        r = _cli("predict", "--models", str(tmp_path / "m1.ckpt"),
                 "--image", str(tmp_path / "s1" / "img_0000.pgm"),
                 "--out-mask", str(tmp_path / d / "mask.pgm"),
                 "--out-prob", str(tmp_path / d / "prob.ivpm"))
        assert r.returncode in (0, 2), r.stderr
    checks["predict"] = (tmp_path / "p1" / "prob.ivpm").read_bytes() == \
        (tmp_path / "p2" / "prob.ivpm").read_bytes()
    if (tmp_path / "p1" / "mask.pgm").exists():
        checks["predict"] &= (tmp_path / "p1" / "mask.pgm").read_bytes() == \
            (tmp_path / "p2" / "mask.pgm").read_bytes()
    # checkpoint round trip
    from ivusnet.checkpoint import load_checkpoint, save_checkpoint
    net, _ = load_checkpoint(tmp_path / "m1.ckpt")
    save_checkpoint(net, tmp_path / "m3.ckpt")
    img = read_mask(tmp_path / "s1" / "img_0000.pgm")  # any image will do
    x = np.asarray(img.bits, dtype=np.float32)
    net2, _ = load_checkpoint(tmp_path / "m3.ckpt")
    checks["roundtrip"] = bool(np.array_equal(predict_prob(net, x),
                                              predict_prob(net2, x)))
    ok = all(checks.values())
    report(8, "determinism", ok,
           ", ".join(f"{k}={'ok' if v else 'DIFF'}" for k, v in checks.items()))
    assert ok, checks


def test_criterion_9_eval_report_structure(tmp_path):
    records = synth_phantoms(seed=3, count=8, size=48, out_dir=tmp_path)
    # spread the frames over all artifact categories, as a real manifest would
    categories = ["none", "none", "bifurcation", "bifurcation",
                  "side_vessel", "side_vessel", "shadow", "shadow"]
    manifest = tmp_path / "test_manifest.tsv"
    lines = []
    for rec, cat in zip(records, categories):
        lines.append("\t".join([rec.image_path.name,
                                rec.lumen_mask_path.name,
                                rec.media_mask_path.name, cat, "test"]))
    manifest.write_text("\n".join(lines) + "\n")
    pred_dir = tmp_path / "preds"
    pred_dir.mkdir()
    from ivusnet.data import write_mask
    for i, rec in enumerate(records):
        for target, path in (("lumen", rec.lumen_mask_path),
                             ("media", rec.media_mask_path)):
            write_mask(read_mask(path), pred_dir / f"{target}_{i:04d}.pgm")
    r = _cli("eval", "--manifest", str(manifest),
             "--pred-dir", str(pred_dir), "--pixel-spacing-mm", "1.0")
    rows_present = all(label in r.stdout for label in
                       ("All", "No Artifact", "Bifurcation", "Side Vessels",
                        "Shadow"))
    format_present = "1.00 (0.00)" in r.stdout and "0.00 (0.00)" in r.stdout
    columns_present = all(c in r.stdout for c in
                          ("Lumen JM", "Lumen HD", "Media JM", "Media HD"))
    ok = r.returncode == 0 and rows_present and format_present \
        and columns_present
    report(9, "eval report structure", ok,
           f"rows={rows_present}, mean(std) format={format_present}, "
           f"columns={columns_present}")
    assert ok, r.stdout + r.stderr
