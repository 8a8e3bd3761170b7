
from .params import ParamSet, get_params
from .mldsa_core import PublicKey, SecretKey, Signature, keygen, sign_single, verify

from .mpc import Abort, Blame, ConfigurationGuardError, DuplicateSession, MpcParty, Coordinator
from .tee import RefreshRejected, SessionReuse, SigningAbort, TeeCoordinator, TeeSigner

from .transport import PartyTransport
from .transport_tcp import PartyTransportTcp
from .transport_websocket import PartyTransportWebsocket
from .hub import Hub
from .network import SimNetwork, Transcript, TransportNetwork

from .harness import Outcome, ProtocolConfig, run_protocol

import logging
logging.getLogger("talus").addHandler(logging.NullHandler())
