"""oceclab: a desk-scale lab for an error-filtering arbiter PUF and the
meter/gateway mutual-authentication protocol built on it."""

from .codec import (
    MSG1_LEN, MSG2_LEN, MSG3_LEN, SESSION_OVERHEAD,
    Msg1, Msg2, Msg3, hash_fields, new_prng, prng_bytes, xor_stream,
)
from .config import SimConfig, load_config
from .keystore import Keystore, NgRecord
from .netlab import AdversaryAction, NetLab, ScenarioReport, ScenarioSpec, run_scenario
from .protocol import NgState, SmDevice, register
from .puf import (
    OcecResponse, PufInstance, YieldExhausted,
    delta_d, evaluate_ocec_bit, ocec_response, raw_response,
)

__version__ = "0.1.0"

__all__ = [
    "AdversaryAction", "Keystore", "MSG1_LEN", "MSG2_LEN", "MSG3_LEN",
    "Msg1", "Msg2", "Msg3", "NetLab", "NgRecord", "NgState", "OcecResponse",
    "PufInstance", "ScenarioReport", "ScenarioSpec", "SESSION_OVERHEAD",
    "SimConfig", "SmDevice", "YieldExhausted", "delta_d", "evaluate_ocec_bit",
    "hash_fields", "load_config", "new_prng", "ocec_response", "prng_bytes",
    "raw_response", "register", "run_scenario", "xor_stream",
]
