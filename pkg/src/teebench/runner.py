"""One-call orchestration of measurement runs, native or behind the boundary.

A boundary run mirrors the client-application flow: initialize a context,
allocate two dynamic shared-memory areas (arguments in, metrics out) in
the configured sharing mode, open a session to the traffic application,
invoke it (blocking while relaying its socket calls) and read the metrics
back out of shared memory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .boundary import BoundaryError, BoundaryStats, initialize_context
from .boundary.protocol import TeeResult
from .boundary.tas import TrafficCommand, _LEN
from .core import (
    Execution,
    KIB,
    RunConfig,
    SharedMode,
    TransferMetrics,
    validate_config,
)
from .traffic import run_measurement

_IO_REGION_SIZE = 16 * KIB
_PARTIAL_PAD = 4 * KIB


class RunFailure(BoundaryError):
    """The trusted side reported a non-success code for the run."""

    def __init__(self, status: TeeResult):
        self.status = status
        super().__init__(f"trusted run failed with {status.name}")


@dataclass(frozen=True)
class RunResult:
    config: RunConfig
    transfer: TransferMetrics
    boundary_stats: BoundaryStats | None
    started_at: float               # Unix time
    ended_at: float


def _alloc_io_region(ctx, mode: SharedMode):
    if mode is SharedMode.PARTIAL:
        return ctx.allocate_shared_region(
            _IO_REGION_SIZE + _PARTIAL_PAD, mode, offset=_PARTIAL_PAD
        )
    return ctx.allocate_shared_region(_IO_REGION_SIZE, mode)


def _window_write_json(region, payload: dict) -> None:
    import json

    data = json.dumps(payload).encode()
    region.window_write(0, _LEN.pack(len(data)) + data)


def _window_read_json(region) -> dict:
    import json

    (length,) = _LEN.unpack(region.window_read(0, _LEN.size))
    return json.loads(region.window_read(_LEN.size, length).decode())


def run_client(cfg: RunConfig, *, transport: str | None = None) -> RunResult:
    """Execute one client run per ``cfg.execution`` and return its results."""
    cfg = validate_config(cfg)
    started = time.time()

    if cfg.execution is Execution.DIRECT:
        metrics = run_measurement(cfg)
        return RunResult(cfg, metrics, None, started, time.time())

    ctx = initialize_context(switch_cost=cfg.switch_cost, transport=transport)
    args_region = _alloc_io_region(ctx, cfg.shared_mode)
    metrics_region = _alloc_io_region(ctx, cfg.shared_mode)
    try:
        _window_write_json(args_region, cfg.to_dict())
        session = ctx.open_session("traffic")
        try:
            result = session.invoke(
                TrafficCommand.RUN, regions=(args_region, metrics_region)
            )
        finally:
            session.close()
        if result.status != TeeResult.SUCCESS:
            raise RunFailure(result.status)
        metrics = TransferMetrics.from_dict(_window_read_json(metrics_region))
    finally:
        ctx.release_region(args_region)
        ctx.release_region(metrics_region)
    stats = ctx.stats
    ctx.finalize()
    return RunResult(cfg, metrics, stats, started, time.time())
