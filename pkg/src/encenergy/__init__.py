"""Processor-event based energy estimation for software video encoding."""

from .attribution import CategoryMap, attribute, default_x265_map, load_category_map
from .dataset import Dataset, SynthSpec, load_dataset, save_dataset, synth_dataset
from .evaluation import (
    confidence_interval, cross_validate, kfold_split, mape, percentage_error, z_score,
)
from .meter import calibrate_idle, delta_energy, measure_workload, read_counter
from .model import (
    PRESETS, EncodeRecord, EnergyModel, correlation_table, estimate_posterior, estimate_prior,
    fit, pearson,
)
from .profile import (
    ALL_EVENTS, EventId, EventVector, FunctionProfile, Profile, event_vector, merge_profiles,
    parse_profile,
)
from .report import report_energy_per_pixels

__version__ = "0.1.0"
