"""Peak-memory measurement for training steps.

The profiled closure is the optimization step itself (loss forward, backward,
optimizer update) on already-prepared inputs; batch preparation plays the role
of data loading and sits outside the measured region.

Two accountings are offered: "tensor" reconstructs the peak of live tensor
bytes from the torch profiler's allocation events (exact and deterministic,
the default), and "rss" watches process RSS (coarse, for non-tensor work).
"""

from __future__ import annotations

import gc
import resource
import threading
import time


def _rss() -> int:
    import psutil

    return psutil.Process().memory_info().rss


def _maxrss() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _tensor_peak(closure) -> int:
    """Peak live tensor bytes during the closure, from allocator accounting."""
    import torch

    with torch.profiler.profile(activities=[torch.profiler.ProfilerActivity.CPU],
                                profile_memory=True) as prof:
        closure()
    deltas = sorted((e.time_range.start, e.self_cpu_memory_usage)
                    for e in prof.events() if e.self_cpu_memory_usage != 0)
    running = peak = 0
    for _, delta in deltas:
        running += delta
        peak = max(peak, running)
    return int(peak)


def _rss_peak(closure, interval: float = 0.002) -> int:
    """Peak RSS growth while the closure runs (sampled watcher + maxrss floor)."""
    gc.collect()
    base = _rss()
    peak = base
    stop = threading.Event()

    def watch():
        nonlocal peak
        while not stop.is_set():
            peak = max(peak, _rss())
            time.sleep(interval)

    watcher = threading.Thread(target=watch, daemon=True)
    watcher.start()
    maxrss_before = _maxrss()
    try:
        closure()
    finally:
        stop.set()
        watcher.join()
    peak = max(peak, _rss())
    sampled = peak - base
    # ru_maxrss is a lifetime high-water mark; only trust it if it moved
    floor = _maxrss() - max(maxrss_before, base)
    return int(max(sampled, floor, 0))


def memory_profile(closure, accounting: str = "tensor") -> int:
    """Peak transient allocation (bytes) during one call of the closure."""
    if accounting == "tensor":
        return _tensor_peak(closure)
    if accounting == "rss":
        return _rss_peak(closure)
    raise ValueError(f"unknown accounting {accounting!r}")


def _bench_step(image_side: int, crop, channels: int = 32, k_images: int = 1,
                seed: int = 0) -> dict:
    """One D step + one G step of a single cropped/full scale; returns peaks."""
    import torch

    torch.set_num_threads(1)
    from . import rng
    from .networks import HALO, DiscriminatorScale, GeneratorScale
    from .pyramid import crop_with_halo, random_crop_window
    from .training import wgan_gp_d_loss

    torch.manual_seed(rng.derive_seed(seed, "bench-init"))
    gen = GeneratorScale(k_images, channels)
    disc = DiscriminatorScale(channels)
    opt_g = torch.optim.Adam(gen.parameters(), lr=5e-4, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=5e-4, betas=(0.5, 0.999))

    g = rng.torch_gen(seed, "bench-data")
    crop_rng = rng.np_rng(seed, "bench-crop")
    size = (image_side, image_side)
    xs = torch.rand((k_images, 3, *size), generator=g) * 1.6 - 0.8
    prev = torch.rand((k_images, 3, *size), generator=g) * 0.2 - 0.1
    z = torch.randn((k_images, 3, *size), generator=g) * 0.1
    ids = torch.zeros((k_images, k_images, *size))
    for k in range(k_images):
        ids[k, k] = 1.0

    if crop is not None and image_side > crop:
        batch = [(k, random_crop_window(size, crop, HALO, crop_rng))
                 for _ in range(2) for k in range(k_images)]
    else:
        batch = [(k, None) for k in range(k_images)]

    def gather(full, with_halo):
        outs = []
        for k, win in batch:
            t = full[k]
            if win is None:
                if with_halo:
                    outs.append(torch.nn.functional.pad(t, (HALO,) * 4))
                else:
                    outs.append(t)
            elif with_halo:
                outs.append(crop_with_halo(t, win))
            else:
                outs.append(t[..., win.top:win.top + win.height, win.left:win.left + win.width])
        return torch.stack(outs)

    z_in, prev_in, id_in = gather(z, True), gather(prev, True), gather(ids, True)
    real = gather(xs, False)
    gen.train()
    disc.train()
    u_g = rng.torch_gen(seed, "bench-gp")

    def step():
        with torch.no_grad():
            fake = gen(z_in, prev_in, id_in)
        opt_d.zero_grad(set_to_none=True)
        d_loss, _ = wgan_gp_d_loss(disc, real, fake, 0.1, generator=u_g)
        d_loss.backward()
        opt_d.step()

        opt_g.zero_grad(set_to_none=True)
        fake = gen(z_in, prev_in, id_in)
        g_loss = -disc(fake).mean() + 10.0 * torch.nn.functional.mse_loss(fake, real)
        g_loss.backward()
        opt_g.step()

    step()  # warm-up so lazy op workspaces do not count
    peak = memory_profile(step)
    return {"image_side": image_side, "crop": crop, "channels": channels,
            "k_images": k_images, "peak_bytes": int(peak)}


def _bench_entry(conn, kwargs):
    try:
        conn.send(_bench_step(**kwargs))
    except Exception as exc:  # pragma: no cover - transported to parent
        conn.send({"error": repr(exc)})
    finally:
        conn.close()


def measure_step_memory(image_side: int, crop, channels: int = 32,
                        k_images: int = 1, seed: int = 0, in_process: bool = False) -> dict:
    """Run one benchmark point, in a fresh subprocess by default."""
    kwargs = dict(image_side=image_side, crop=crop, channels=channels,
                  k_images=k_images, seed=seed)
    if in_process:
        return _bench_step(**kwargs)
    import multiprocessing as mp

    ctx = mp.get_context("spawn")
    parent, child = ctx.Pipe()
    proc = ctx.Process(target=_bench_entry, args=(child, kwargs))
    proc.start()
    result = parent.recv()
    proc.join()
    if "error" in result:
        raise RuntimeError(f"memory benchmark failed: {result['error']}")
    return result


def memory_curve(sides, crop, channels: int = 32, seed: int = 0,
                 in_process: bool = False) -> list:
    """Peak-vs-size rows for cropped and uncropped steps (CSV-ready dicts)."""
    rows = []
    for side in sides:
        for mode_crop in (crop, None):
            rows.append(measure_step_memory(side, mode_crop, channels=channels,
                                            seed=seed, in_process=in_process))
    return rows


def curve_to_csv(rows) -> str:
    lines = ["image_side,crop,channels,k_images,peak_bytes"]
    for r in rows:
        crop = "" if r["crop"] is None else r["crop"]
        lines.append(f"{r['image_side']},{crop},{r['channels']},{r['k_images']},{r['peak_bytes']}")
    return "\n".join(lines) + "\n"
