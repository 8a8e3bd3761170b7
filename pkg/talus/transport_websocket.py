import logging
from typing import Any
import asyncio
import traceback

import websockets

from .message import Message
from .transport import PartyTransport


logger = logging.getLogger(__name__)

SUBPROTOCOL = "talus-frames"


class PartyTransportWebsocket(PartyTransport):
    """Frames as binary websocket messages, one frame per message"""

    ws: websockets.WebSocketClientProtocol
    subprotocol: str
    receiving_message: bool
    receive_message_task: asyncio.Task
    receive_message_task_started: asyncio.Event

    def __init__(self, **kwargs: Any):
        super().__init__(**kwargs)

        self.ws = None
        self.receiving_message = False
        self.receive_message_task = None
        self.receive_message_task_started = asyncio.Event()
        self.subprotocol = kwargs.get("subprotocol", SUBPROTOCOL)

    async def _connect(self, **kwargs: Any) -> None:
        """Connect to the hub

        All extra keyword arguments will be passed to websockets.connect
        """

        logger.info(f"Party {self.party} connecting to: {self.base_url}")

        self.ws = await websockets.connect(
            self.base_url,
            subprotocols=[websockets.Subprotocol(self.subprotocol)],
            **kwargs,
        )
        self.receive_message_task = asyncio.create_task(self.receive_message())
        self.receive_message_task.add_done_callback(self.receive_message_done_cb)
        await self.receive_message_task_started.wait()

        logger.info(f"Party {self.party} connected")

    async def _disconnect(self) -> None:
        logger.info(f"Party {self.party} disconnecting")
        self.receive_message_task.cancel()
        await asyncio.wait([self.receive_message_task])
        await self.ws.close()
        logger.info(f"Party {self.party} disconnected")

    def receive_message_done_cb(self, task: asyncio.Task, context=None) -> None:
        self.receiving_message = False
        try:
            # CancelledError and InvalidStateError are raised, other exceptions returned
            exception = task.exception()
            if exception:
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

        if not self.ws:
            raise Exception("Not connected to hub.")

        async for frame in self.ws:
            if isinstance(frame, str):
                logger.warning("Ignoring text message on a frame connection")
                continue
            await self.receive(Message.from_frame(frame))

    async def _send(self, frame: bytes) -> None:
        if not self.receiving_message:
            raise Exception("Websocket not receiving message")

        await self.ws.send(frame)


def protocol_matcher(base_url: str):
    return base_url.startswith(("ws://", "wss://"))


PartyTransport.register_transport(
    protocol_matcher=protocol_matcher, transport_cls=PartyTransportWebsocket
)
