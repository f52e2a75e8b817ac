"""
__init__.py
-----------
This package provides the seeded photon-pair source and the detection record streams it produces.
"""

from .records import (
    CHUNK_RECORDS,
    MAGIC,
    RECORD_DTYPE,
    Channel,
    DetectionRecord,
    NoiseOrigin,
    RecordWriter,
    SourceTruth,
    as_record_array,
    channel_mask,
    check_order,
    detect_format,
    empty_records,
    iter_record_chunks,
    iter_records,
    make_records,
    read_records,
    write_records,
)
from .source import (
    TRIALS_PER_BLOCK,
    PhotonSource,
    SimulationResult,
    SourcePlan,
    central_bin_fraction,
    effective_readout,
    resolved_beta,
    run_trials,
    simulate_block,
    thermal_sample,
)
