"""Per-stage timing of the patch pipeline and kernel backend comparison."""
from __future__ import annotations

import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels, synth
from .features import compute_histograms, fit_dictionaries, project_all
from .imaging import channel_image
from .learn import Dataset, train
from .texture import LbpConfig, assemble_feature, extract_histogram, project

STAGES = ("channel_transform", "histogram", "projection", "predict")


def reference_setup(seed: int = 0, n_train: int = 20, size: int = 600, cfg: LbpConfig = LbpConfig(),
                    theta: float = 0.90, kind: str = "KNN"):
    """Dictionaries and a small classifier trained on synthetic patches."""
    specs = synth.dataset_specs(n_train, 0)
    patches = [synth.make_patch(seed, s.kind, s.index, size)[0] for s in specs]
    hists = compute_histograms(lambda i: patches[i], len(patches), ("H", "V"), cfg)
    dicts = fit_dictionaries(hists, ("H", "V"), cfg, theta)
    X, layout = project_all(hists, dicts)
    model = train(Dataset(X, [s.kind for s in specs], [s.patch_id for s in specs], layout), kind)
    return dicts, model


def process_patch(patch, dicts, model, backend=None, timings: dict | None = None):
    """Full per-patch classification; optionally records per-stage seconds."""
    t0 = time.perf_counter()
    images = [channel_image(patch, d.channel) for d in dicts]
    t1 = time.perf_counter()
    hists = [extract_histogram(img, d.config, backend=backend) for img, d in zip(images, dicts)]
    t2 = time.perf_counter()
    fv = assemble_feature([(d, project(h, d)) for h, d in zip(hists, dicts)])
    t3 = time.perf_counter()
    labels, scores = model.predict_batch(fv.values, fv.layout)
    t4 = time.perf_counter()
    if timings is not None:
        for name, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3)):
            timings.setdefault(name, []).append(dt)
    return int(labels[0]), float(scores[0]), [h.counts for h in hists]


def run_bench(iterations: int = 20, threads: int = 4, n_parallel: int = 100, seed: int = 0, size: int = 600,
              kind: str = "KNN", backends: bool = True) -> dict:
    """Median per-stage times for one patch plus parallel throughput over ``n_parallel`` patches."""
    iterations = max(iterations, 20)
    dicts, model = reference_setup(seed, size=size, kind=kind)
    patch = synth.make_patch(seed + 1, synth.TUMOR, 0, size)[0]
    timings: dict = {}
    totals = []
    for _ in range(iterations):
        t = time.perf_counter()
        process_patch(patch, dicts, model, timings=timings)
        totals.append(time.perf_counter() - t)
    report = {
        "backend": kernels.BACKEND,
        "patch_size": size,
        "iterations": iterations,
        "classifier": model.kind,
        "stages_ms": {k: 1000 * statistics.median(v) for k, v in timings.items()},
        "total_ms": 1000 * statistics.median(totals),
    }

    patches = [synth.make_patch(seed + 2, synth.TUMOR if i % 2 else synth.HEALTHY, i, size)[0]
               for i in range(n_parallel)]

    def run(nthreads):
        t = time.perf_counter()
        if nthreads > 1:
            with ThreadPoolExecutor(nthreads) as pool:
                out = list(pool.map(lambda p: process_patch(p, dicts, model), patches))
        else:
            out = [process_patch(p, dicts, model) for p in patches]
        return time.perf_counter() - t, out

    t_seq, seq = run(1)
    t_par, par = run(threads)
    identical = all(a[0] == b[0] and a[1] == b[1] and all(np.array_equal(x, y) for x, y in zip(a[2], b[2]))
                    for a, b in zip(seq, par))
    report["parallel"] = {
        "patches": n_parallel,
        "threads": threads,
        "cpu_count": len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count(),
        "sequential_s": t_seq,
        "parallel_s": t_par,
        "speedup": t_seq / t_par if t_par > 0 else float("inf"),
        "identical": identical,
    }

    if backends:
        img = channel_image(patch, "H")
        cmp = {}
        for name, fn in (("cython", kernels.compiled_code_histogram), ("numpy", kernels.fallback_code_histogram)):
            if fn is None:
                continue
            ts = []
            for _ in range(min(iterations, 20)):
                t = time.perf_counter()
                extract_histogram(img, dicts[0].config, backend=fn)
                ts.append(time.perf_counter() - t)
            cmp[name] = 1000 * statistics.median(ts)
        report["histogram_backends_ms"] = cmp
    return report


def format_report(rep: dict) -> str:
    lines = [f"backend {rep['backend']}, {rep['patch_size']}px patch, {rep['classifier']}, median of {rep['iterations']}"]
    for k in STAGES:
        lines.append(f"  {k:<18}{rep['stages_ms'][k]:9.2f} ms")
    lines.append(f"  {'total':<18}{rep['total_ms']:9.2f} ms")
    p = rep["parallel"]
    lines.append(f"parallel: {p['patches']} patches, {p['threads']} threads on {p['cpu_count']} cpu(s): "
                 f"{p['sequential_s']:.2f}s -> {p['parallel_s']:.2f}s (x{p['speedup']:.2f}), identical={p['identical']}")
    for k, v in rep.get("histogram_backends_ms", {}).items():
        lines.append(f"  histogram[{k}] {v:.2f} ms")
    return "\n".join(lines)
