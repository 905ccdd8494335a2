"""Report plumbing: run manifests, delimited output, and figure rendering.

Every command embeds a RunManifest so a report can be reproduced from the
file alone: the command line, a digest of the inputs, the seed, the tool
version and the wall time.  CSV reports carry the manifest as leading
comment lines; JSON reports nest it under "manifest".  The figure helpers
render matplotlib PNGs next to the delimited output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field

from . import __version__

# Table III column order, so sweep output diffs line up row by row.
SWEEP_COLUMNS = ["config", "zero_load_cycles", "amat_cycles",
                 "throughput_req_pe_cycle", "total_complexity",
                 "critical_complexity", "critical_comb_delay"]


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None = None
    tool_version: str = __version__
    wall_time_s: float = 0.0
    started: float = field(default_factory=time.time)

    @classmethod
    def start(cls, command: str, payload, seed: int | None = None) -> "RunManifest":
        digest = hashlib.sha256(
            json.dumps(payload, sort_keys=True, default=str).encode()
        ).hexdigest()[:16]
        return cls(command=command, config_digest=digest, seed=seed)

    def finish(self) -> "RunManifest":
        self.wall_time_s = round(time.time() - self.started, 3)
        return self

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "wall_time_s": self.wall_time_s,
        }


def write_json(path: str, payload: dict, manifest: RunManifest) -> None:
    doc = dict(payload)
    doc["manifest"] = manifest.finish().to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_csv(path: str, columns: list[str], rows: list[dict],
              manifest: RunManifest) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in manifest.finish().to_dict().items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def sweep_figure(rows: list[dict], path: str) -> None:
    """Design-space view: AMAT vs throughput, sized by critical complexity."""
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    amat = [r["amat_cycles"] for r in rows]
    tput = [r["throughput_req_pe_cycle"] for r in rows]
    crit = [r["critical_complexity"] for r in rows]
    sizes = [20 + 16 * (c ** 0.25) for c in crit]
    ax1.scatter(amat, tput, s=sizes, alpha=0.7, edgecolor="k", linewidth=0.5)
    for r in rows:
        ax1.annotate(r["config"], (r["amat_cycles"], r["throughput_req_pe_cycle"]),
                     fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax1.set_xlabel("AMAT (cycles)")
    ax1.set_ylabel("throughput (req/PE/cycle)")
    ax1.set_title("contention vs bandwidth")
    ax1.grid(alpha=0.3)

    names = [r["config"] for r in rows]
    ax2.bar(range(len(rows)), crit, color="#6688bb")
    ax2.axhline(2048, color="r", linestyle="--", linewidth=1,
                label="routability limit")
    ax2.set_yscale("log")
    ax2.set_xticks(range(len(rows)))
    ax2.set_xticklabels(names, rotation=75, fontsize=6)
    ax2.set_ylabel("critical crossbar leaves (n x k)")
    ax2.set_title("physical pressure")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def transfer_figure(rows: list[dict], path: str) -> None:
    """Achieved bandwidth against cluster clock, one line per DDR rate."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    rates = sorted({r["pin_rate_gbps"] for r in rows})
    for rate in rates:
        pts = sorted((r["clock_mhz"], r["achieved_gbps"])
                     for r in rows if r["pin_rate_gbps"] == rate)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-",
                label=f"{rate} Gb/s/pin")
        ax.axhline(rate * 256, linestyle=":", linewidth=0.8, color="gray")
    ax.set_xlabel("cluster clock (MHz)")
    ax.set_ylabel("achieved bandwidth (GB/s)")
    ax.set_title("main-memory link bandwidth")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def histogram_figure(hist_rows: list[tuple[int, int, int]], path: str) -> None:
    """Per-class latency histogram from (class, latency, count) rows."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    classes = sorted({cls for cls, _, _ in hist_rows})
    for cls in classes:
        pts = sorted((lat, cnt) for c, lat, cnt in hist_rows if c == cls)
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="mid",
                label=f"class {cls}")
    ax.set_xlabel("round-trip latency (cycles)")
    ax.set_ylabel("requests")
    ax.set_yscale("log")
    ax.set_title("measured latency distribution")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
