"""Shared glue for tests that run the full correlation engine."""

from aptgraph.asdc import AsdcInputs, run_asdc
from aptgraph.config import DetectorConfig


def asdc_on(bundle, models, cfg=None):
    dm, fm = models
    cfg = cfg or DetectorConfig()
    return run_asdc(AsdcInputs(bundle.windows(cfg.window_s), bundle.auth_events, bundle.alerts, dm, fm,
                               bundle.inventory, cfg))
