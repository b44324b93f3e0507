"""Render report figures next to the delimited outputs.

Matplotlib is imported lazily so data-only paths never pay for it; the Agg
backend keeps everything headless.
"""

from __future__ import annotations

from pathlib import Path


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_puf_stats(result, out_dir: str | Path, stem: str = "puf_stats") -> list[Path]:
    plt = _plt()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    ks = [row["n_not_gates"] for row in result.rows]

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ks, [row["yield_mean"] * 128 for row in result.rows], "o-")
    ax.set_xlabel("inverters in delay line")
    ax.set_ylabel("stable bits per 128 sub-challenges")
    ax.set_title("Reliable-bit yield vs. delay margin")
    ax.grid(alpha=0.3)
    paths.append(_save(fig, out_dir / f"{stem}_yield.png"))

    fig, ax = plt.subplots(figsize=(5, 3.2))
    floor = 1e-8
    raw = [max(row["raw_ber"], floor) for row in result.rows]
    rel = [max(row["reliable_ber"], floor) for row in result.rows]
    ax.semilogy(ks, raw, "s--", label="raw bits")
    ax.semilogy(ks, rel, "o-", label="filtered bits")
    ax.axhline(floor, color="gray", lw=0.5, ls=":")
    ax.set_xlabel("inverters in delay line")
    ax.set_ylabel(f"bit error rate (floor {floor:g})")
    ax.set_title("Error rate vs. delay margin")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    paths.append(_save(fig, out_dir / f"{stem}_ber.png"))

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ks, [row["uniformity_mean"] for row in result.rows], "o-",
            label="uniformity")
    ax.plot(ks, [row["uniqueness_mean"] for row in result.rows], "s--",
            label="inter-instance HD")
    ax.axhline(0.5, color="gray", lw=0.5, ls=":")
    ax.set_ylim(0.4, 0.6)
    ax.set_xlabel("inverters in delay line")
    ax.set_ylabel("fraction")
    ax.set_title("Uniformity and uniqueness")
    ax.legend()
    ax.grid(alpha=0.3)
    paths.append(_save(fig, out_dir / f"{stem}_quality.png"))

    if result.inter_hd:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.hist(result.inter_hd, bins=24, color="tab:blue", edgecolor="black")
        ax.axvline(0.5, color="red", lw=1)
        ax.set_xlabel("pairwise inter-instance Hamming distance")
        ax.set_ylabel("pairs")
        ax.set_title("Inter-instance HD histogram")
        paths.append(_save(fig, out_dir / f"{stem}_interhd.png"))
    return paths


def render_bench(result, out_dir: str | Path, stem: str = "bench") -> list[Path]:
    plt = _plt()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    row = result.rows[0] if result.rows else {}
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    ops = ["hash", "prng", "puf"]
    axes[0].bar(ops, [row.get(o, 0) for o in ops], color="tab:blue")
    axes[0].set_title("Meter ops per session")
    sizes = ["msg1_bytes", "msg2_bytes", "msg3_bytes", "total_overhead"]
    axes[1].bar(["hello", "gw pkt", "meter pkt", "overhead"],
                [row.get(s, 0) for s in sizes], color="tab:orange")
    axes[1].set_title("Bytes per session")
    for ax in axes:
        ax.grid(alpha=0.3, axis="y")
    return [_save(fig, Path(out_dir) / f"{stem}_profile.png")]


def render_randomness(report: dict, keys: list[bytes], out_dir: str | Path,
                      stem: str = "randomness") -> list[Path]:
    import numpy as np
    plt = _plt()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = np.frombuffer(b"".join(keys), dtype=np.uint8)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(blob, bins=64, color="tab:green", edgecolor="none")
    ax.set_xlabel("byte value")
    ax.set_ylabel("count")
    ax.set_title(
        f"Key byte histogram (chi2 p={report['byte_chi2_p']:.3g}, "
        f"monobit={report['monobit_fraction']:.4f})"
    )
    return [_save(fig, out_dir / f"{stem}_bytes.png")]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path
