"""Sweeps built from many scenario runs: the S/M/F matrix and RSSI sweeps."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .phy import LatencyModel, predict_jammable
from .presets import default_params, rssi_sweep_scenario, wormhole_scenario
from .scenario import Scenario
from .sim import run_scenario

MATRIX_SIZES = (17, 27, 37, 47, 57)
MATRIX_SFS = tuple(range(7, 13))

# What the bench hardware showed for the same grid (100 frames per cell).
BENCH_OBSERVED = {
    17: "FFFMSS", 27: "FFMSSS", 37: "FFMSSS", 47: "FFSSSS", 57: "FFSSSS",
}


def bench_observed(sf: int, size: int) -> str | None:
    row = BENCH_OBSERVED.get(size)
    return row[sf - 7] if row and 7 <= sf <= 12 else None


def classify(jam_pct: float) -> str:
    if jam_pct > 95.0:
        return "S"
    if jam_pct == 0.0:
        return "F"
    return "M"


@dataclass(frozen=True)
class MatrixCell:
    sf: int
    size: int
    frames: int
    jammed: int
    predicted: str

    @property
    def jam_pct(self) -> float:
        return 100.0 * self.jammed / self.frames if self.frames else 0.0

    @property
    def verdict(self) -> str:
        return classify(self.jam_pct)

    @property
    def observed(self) -> str | None:
        return bench_observed(self.sf, self.size)


def _run_cell(args) -> MatrixCell:
    sf, size, frames, mean, std, seed, read_bytes = args
    s = wormhole_scenario(sf, size, frames=frames, latency_mean_us=mean, latency_std_us=std, seed=seed)
    if read_bytes != 5:
        s = replace(s, adversaries=(replace(s.adversaries[0], read_bytes=read_bytes),))
    m = run_scenario(s).metrics.devices["victim"]
    pred = predict_jammable(default_params(sf), size, read_bytes, LatencyModel(mean, std)).value
    return MatrixCell(sf, size, m.sent, m.jammed, pred)


def wormhole_matrix(latency: LatencyModel = LatencyModel(100_830, 1_700), *, sizes=MATRIX_SIZES,
                    sfs=MATRIX_SFS, frames: int = 100, seed: int = 1, read_bytes: int = 5,
                    jobs: int = 1) -> list[MatrixCell]:
    """Run one wormhole scenario per (SF, size) cell and classify the jam rate."""
    tasks = [(sf, size, frames, latency.mean_us, latency.std_us, seed * 1000 + sf * 100 + size, read_bytes)
             for size in sizes for sf in sfs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


@dataclass(frozen=True)
class SweepPoint:
    differential_db: float
    jammer_rssi_dbm: float
    sent: int
    jammed: int

    @property
    def jam_pct(self) -> float:
        return 100.0 * self.jammed / self.sent if self.sent else 0.0


def frange(start: float, stop: float, step: float) -> list[float]:
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round((stop - start) / step))
    if n < 0:
        raise ValueError("range end precedes its start")
    return [round(start + i * step, 9) for i in range(n + 1)]


def rssi_sweep(differentials: list[float], *, base: Scenario | None = None, jammer: str | None = None,
               receiver: str | None = None, frames: int = 50, seed: int = 1,
               threshold_db: float = 36.0) -> list[SweepPoint]:
    """Jam rate as the jammer's RSSI at the gateway moves relative to the victim's.

    Without ``base`` the SF12 single-victim preset is used. With a scenario,
    the differential is taken against the first device's RSSI at
    ``receiver`` (default: first gateway).
    """
    points = []
    for diff in differentials:
        if base is None:
            s = rssi_sweep_scenario(diff, frames=frames, seed=seed, threshold_db=threshold_db)
            jam_rssi = -80 + diff
        else:
            jam_id = jammer or base.adversaries[0].id
            gw = receiver or base.gateways[0].id
            ref = base.link_dict()[base.devices[0].id][gw]
            jam_rssi = ref + diff
            links = tuple((s_, r, jam_rssi if (s_, r) == (jam_id, gw) else v) for s_, r, v in base.links)
            s = replace(base, links=links)
        metrics = run_scenario(s).metrics
        tot = metrics.totals()
        points.append(SweepPoint(diff, jam_rssi, tot.sent, tot.jammed))
    return points

