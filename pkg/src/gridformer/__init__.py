"""Forming index and power-system strength analysis for converter-dominated grids."""
import os

__version__ = "0.1.0"

# cap BLAS threads before numpy is first imported
_threads = os.environ.get("GRIDFORMER_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .casefile import CaseFile, bundled_case, load as load_case  # noqa: E402
from .converters import DeviceSpec, LineParams, OperatingPoint, build_admittance  # noqa: E402
from .device_metrics import (StrengthCurve, classify_gfm, forming_index,  # noqa: E402
                             frequency_smoothing, impedance_norm, sensitivity)
from .errors import GridformerError  # noqa: E402
from .lti import FrequencyGrid, StateSpaceModel, hinf_norm, singular_values  # noqa: E402
from .network import NetworkModel, PowerSystem  # noqa: E402
from .placement import PlacementProblem, place_exhaustive, place_greedy  # noqa: E402
from .strength import (added_device_strength, compute_cscr, escr, gscr,  # noqa: E402
                       strength_report, system_strength)
