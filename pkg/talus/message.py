"""Wire messages and length-prefixed frames

A frame is ``u32 length ∥ u8 type ∥ payload`` with the big-endian length
counting the payload only. The payload starts with a fixed header
(session id τ, round, sender, receiver) followed by the message body.
"""
import hashlib
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Optional, Tuple

BROADCAST = 0xFFFF
TAU_BYTES = 16
HEADER = struct.Struct(">16sHHH")
PREFIX = struct.Struct(">IB")


class MessageType(IntEnum):
    HELLO = 0
    NONCE_SHARE = 1
    MASKED_BROADCAST = 2
    FELDMAN_COMMIT = 3
    CSA_GATES = 4
    PREFIX_GATES = 5
    CHALLENGE = 6
    RESPONSE = 7
    BLAME_REVEAL = 8
    KEYGEN_COMMIT = 9
    KEYGEN_REVEAL = 10
    KEYGEN_SHARE = 11
    KEYGEN_PUBLIC = 12
    REFRESH_COMMIT = 13
    REFRESH_SHARE = 14
    COMMITMENT = 15


@dataclass(frozen=True)
class Message:
    type: MessageType
    tau: bytes
    round: int
    sender: int
    receiver: int
    body: bytes

    @property
    def is_broadcast(self) -> bool:
        return self.receiver == BROADCAST

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.body).hexdigest()[:16]

    def header(self) -> Dict:
        return {
            "type": self.type.name,
            "tau": self.tau.hex(),
            "round": self.round,
            "sender": self.sender,
            "receiver": "broadcast" if self.is_broadcast else self.receiver,
        }

    def to_frame(self) -> bytes:
        payload = HEADER.pack(self.tau, self.round, self.sender, self.receiver) + self.body
        return PREFIX.pack(len(payload), int(self.type)) + payload

    @classmethod
    def from_payload(cls, message_type: int, payload: bytes) -> "Message":
        if len(payload) < HEADER.size:
            raise ValueError(f"Frame payload shorter than header: {len(payload)}")
        tau, round_index, sender, receiver = HEADER.unpack_from(payload)
        return cls(
            type=MessageType(message_type),
            tau=tau,
            round=round_index,
            sender=sender,
            receiver=receiver,
            body=payload[HEADER.size :],
        )

    @classmethod
    def from_frame(cls, frame: bytes) -> "Message":
        message, rest = split_frame(frame)
        if message is None or rest:
            raise ValueError("Expected exactly one complete frame")
        return message


def split_frame(buffer: bytes) -> Tuple[Optional[Message], bytes]:
    """Pop one frame off the front of ``buffer`` if it is complete"""
    if len(buffer) < PREFIX.size:
        return None, buffer
    length, message_type = PREFIX.unpack_from(buffer)
    end = PREFIX.size + length
    if len(buffer) < end:
        return None, buffer
    return Message.from_payload(message_type, buffer[PREFIX.size : end]), buffer[end:]


def session_tau(tau: bytes) -> bytes:
    if len(tau) > TAU_BYTES:
        raise ValueError(f"Session id longer than {TAU_BYTES} bytes")
    return tau.ljust(TAU_BYTES, b"\x00")


def header_bytes() -> int:
    return PREFIX.size + HEADER.size
