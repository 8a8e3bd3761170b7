import logging
from typing import Any, Tuple
import asyncio
import traceback
from urllib.parse import urlparse

from .message import PREFIX, Message
from .transport import PartyTransport


logger = logging.getLogger(__name__)


def parse_address(base_url: str) -> Tuple[str, int]:
    parsed = urlparse(base_url)
    if not parsed.hostname or parsed.port is None:
        raise Exception(f"Address needs host and port: {base_url}")
    return parsed.hostname, parsed.port


async def read_frame(reader: asyncio.StreamReader) -> Message:
    prefix = await reader.readexactly(PREFIX.size)
    length, message_type = PREFIX.unpack(prefix)
    payload = await reader.readexactly(length)
    return Message.from_payload(message_type, payload)


class PartyTransportTcp(PartyTransport):
    """Frames over a plain TCP stream"""

    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter
    receiving_message: bool
    receive_message_task: asyncio.Task
    receive_message_task_started: asyncio.Event

    def __init__(self, **kwargs: Any):
        super().__init__(**kwargs)

        self.reader = None
        self.writer = None
        self.receiving_message = False
        self.receive_message_task = None
        self.receive_message_task_started = asyncio.Event()

    async def _connect(self, **kwargs: Any) -> None:
        host, port = parse_address(self.base_url)
        logger.info(f"Party {self.party} connecting to: {self.base_url}")

        self.reader, self.writer = await asyncio.open_connection(host, port, **kwargs)
        self.receive_message_task = asyncio.create_task(self.receive_message())
        self.receive_message_task.add_done_callback(self.receive_message_done_cb)
        await self.receive_message_task_started.wait()

        logger.info(f"Party {self.party} connected")

    async def _disconnect(self) -> None:
        logger.info(f"Party {self.party} disconnecting")
        self.receive_message_task.cancel()
        await asyncio.wait([self.receive_message_task])
        self.writer.close()
        await self.writer.wait_closed()
        logger.info(f"Party {self.party} disconnected")

    def receive_message_done_cb(self, task: asyncio.Task, context=None) -> None:
        self.receiving_message = False
        try:
            # CancelledError and InvalidStateError are raised, other exceptions returned
            exception = task.exception()
            if exception and not isinstance(exception, asyncio.IncompleteReadError):
                logger.error(
                    "".join(
                        traceback.format_exception(
                            type(exception),
                            value=exception,
                            tb=exception.__traceback__,
                        )
                    )
                )
        except asyncio.CancelledError:
            logger.info("Receive message task ended")
        except asyncio.InvalidStateError:
            logger.info("receive_message_done_cb called with invalid state")

        self.connected = False

    async def receive_message(self) -> None:
        self.receiving_message = True
        self.receive_message_task_started.set()

        if not self.reader:
            raise Exception("Not connected to hub.")

        while True:
            message = await read_frame(self.reader)
            await self.receive(message)

    async def _send(self, frame: bytes) -> None:
        if not self.receiving_message:
            raise Exception("TCP transport not receiving message")

        self.writer.write(frame)
        await self.writer.drain()


def protocol_matcher(base_url: str):
    return base_url.startswith("tcp://")


PartyTransport.register_transport(
    protocol_matcher=protocol_matcher, transport_cls=PartyTransportTcp
)
