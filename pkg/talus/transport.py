from abc import ABC, abstractmethod
import asyncio
from typing import Callable, Dict, List, Tuple
import logging

from .message import BROADCAST, Message, MessageType, session_tau
from .round_inbox import RoundInbox

logger = logging.getLogger(__name__)


class PartyTransport(ABC):
    """Frame transport of one party to the relay hub

    Received frames are decoded and queued in :attr:`inbox`.
    """

    __transport_implementation: List[Tuple[Callable[[str], bool], type]] = []

    __base_url: str
    __party: int
    __connect_lock: asyncio.Lock
    inbox: RoundInbox
    bytes_sent: int
    bytes_received: int
    connected: bool
    """Must set this property when connected or disconnected"""

    @abstractmethod
    async def _send(self, frame: bytes) -> None:
        """Really sends the frame"""
        pass

    @abstractmethod
    async def _connect(self) -> None:
        pass

    @abstractmethod
    async def _disconnect(self) -> None:
        pass

    def __init__(self, base_url: str, party: int, **kwargs: dict):
        """Create connection instance

        :param base_url: Hub address, ``tcp://host:port`` or ``ws://host:port``
        :param party: Id of the party this transport speaks for
        """

        self.__base_url = base_url.rstrip("/")
        self.__party = party
        self.__connect_lock = asyncio.Lock()
        self.inbox = RoundInbox()
        self.bytes_sent = 0
        self.bytes_received = 0
        self.connected = False

    @property
    def base_url(self) -> str:
        return self.__base_url

    @property
    def party(self) -> int:
        return self.__party

    async def connect(self) -> None:
        """Open the connection and register with the hub"""
        async with self.__connect_lock:
            if not self.connected:
                await self._connect()

                self.connected = True
                await self._send(self.hello().to_frame())

    async def disconnect(self) -> None:
        """Release resources"""
        async with self.__connect_lock:
            if self.connected:
                await self._disconnect()

                self.connected = False

    def hello(self) -> Message:
        return Message(
            type=MessageType.HELLO,
            tau=session_tau(b""),
            round=0,
            sender=self.__party,
            receiver=BROADCAST,
            body=b"",
        )

    async def send(self, message: Message) -> None:
        if not self.connected:
            raise Exception("Must connect before any communication.")

        if message.sender != self.__party:
            raise Exception(
                f"Party {self.__party} can not send as party {message.sender}"
            )

        frame = message.to_frame()
        self.bytes_sent += len(frame)
        logger.debug(f"Send: {message.header()} ({len(message.body)} bytes)")
        await self._send(frame)

    async def receive(self, message: Message) -> None:
        self.bytes_received += len(message.body)
        if message.receiver not in (BROADCAST, self.__party):
            logger.info(f"Dropped message for another party: {message.header()}")
            return
        logger.debug(f"Received: {message.header()}")
        self.inbox.put_msg(message)

    @staticmethod
    def register_transport(protocol_matcher, transport_cls: "PartyTransport") -> None:
        """
        Register transport class

        Pass in a matcher and it will be used to match base_url to the transport class.
        """
        PartyTransport.__transport_implementation.append(
            (protocol_matcher, transport_cls)
        )

    @staticmethod
    def create_transport(base_url: str, party: int, config: Dict = {}) -> "PartyTransport":
        """Create transport class from the URL scheme

        Raises:
            Exception: No transport class found
            Exception: More than 1 transport class found
        """
        matching_results = []
        for transport_implementation in PartyTransport.__transport_implementation:
            protocol_matcher = transport_implementation[0]
            matching_results.append(protocol_matcher(base_url))

        total_matched = sum(map(bool, matching_results))

        # Cannot have more than 1 match
        if total_matched > 1:
            logger.info(PartyTransport.__transport_implementation)
            logger.info(matching_results)
            raise Exception("Matched to more than 1 protocol")
        elif total_matched == 0:
            logger.info(PartyTransport.__transport_implementation)
            logger.info(matching_results)
            raise Exception("No protocol matched")

        for index, result in enumerate(matching_results):
            if result:
                transport_protocol = PartyTransport.__transport_implementation[index][1]
                return transport_protocol(base_url=base_url, party=party, **config)
