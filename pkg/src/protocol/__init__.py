"""
__init__.py
-----------
This package describes one experimental cycle of the AFC-DLCZ protocol: its configuration, the validated timeline, the emission timing law, phase matching and temporal mode counting.
"""

from .config import (
    ProtocolConfig,
    RFPulse,
    Window,
    anti_stokes_gate,
    dump_config,
    load_config,
    parse_config,
    save_config,
    stokes_gate,
    sweepable_fields,
)
from .timeline import (
    Interval,
    Label,
    Timeline,
    build_timeline,
    check_phase_matching,
    config_mode_count,
    expected_anti_stokes_time,
    mode_count,
    phase_matched_geometry,
    rf_centers,
    trials_per_second,
)
