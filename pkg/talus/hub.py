"""Relay hub: every party connects once, frames are routed by receiver id"""
import asyncio
import logging
import traceback
from typing import Callable, Dict, Optional

import websockets

from .message import BROADCAST, Message, MessageType
from .transport_tcp import parse_address, read_frame
from .transport_websocket import SUBPROTOCOL

logger = logging.getLogger(__name__)

Sender = Callable[[bytes], "asyncio.Future"]


class Hub:
    """Routes broadcast frames to every other party and P2P frames to one

    A connection is registered under the sender id of its first (HELLO) frame.
    """

    __routes: Dict[int, Sender]
    __server: Optional[asyncio.AbstractServer]
    __ws_server: Optional[object]
    frames_relayed: int
    bytes_relayed: int

    def __init__(self) -> None:
        self.__routes = {}
        self.__server = None
        self.__ws_server = None
        self.__registered = asyncio.Condition()
        self.frames_relayed = 0
        self.bytes_relayed = 0

    @property
    def parties(self):
        return sorted(self.__routes)

    async def start(self, base_url: str) -> str:
        """Listen on ``tcp://host:port`` or ``ws://host:port``

        Port 0 picks a free port; the returned URL carries the real one.
        """
        host, port = parse_address(base_url)
        if base_url.startswith("tcp://"):
            self.__server = await asyncio.start_server(self.handle_tcp, host, port)
            port = self.__server.sockets[0].getsockname()[1]
            url = f"tcp://{host}:{port}"
        elif base_url.startswith("ws://"):
            self.__ws_server = await websockets.serve(
                self.handle_websocket,
                host,
                port,
                subprotocols=[websockets.Subprotocol(SUBPROTOCOL)],
            )
            port = list(self.__ws_server.sockets)[0].getsockname()[1]
            url = f"ws://{host}:{port}"
        else:
            raise Exception(f"Hub can not serve: {base_url}")

        logger.info(f"Hub listening on {url}")
        return url

    async def stop(self) -> None:
        if self.__server:
            self.__server.close()
            await self.__server.wait_closed()
            self.__server = None
        if self.__ws_server:
            self.__ws_server.close()
            await self.__ws_server.wait_closed()
            self.__ws_server = None
        self.__routes.clear()
        logger.info("Hub stopped")

    async def wait_for_parties(self, parties, timeout: Optional[float] = None) -> None:
        async def registered():
            async with self.__registered:
                await self.__registered.wait_for(
                    lambda: all(party in self.__routes for party in parties)
                )

        await asyncio.wait_for(registered(), timeout=timeout)

    async def __register(self, message: Message, sender: Sender) -> None:
        if message.type != MessageType.HELLO:
            raise Exception(f"First frame must be HELLO: {message.header()}")
        async with self.__registered:
            self.__routes[message.sender] = sender
            self.__registered.notify_all()
        logger.info(f"Hub registered party {message.sender}")

    async def route(self, message: Message) -> None:
        frame = message.to_frame()
        if message.receiver == BROADCAST:
            targets = [party for party in self.__routes if party != message.sender]
        elif message.receiver in self.__routes:
            targets = [message.receiver]
        else:
            logger.warning(f"No route for {message.header()}")
            return

        for party in targets:
            await self.__routes[party](frame)
            self.frames_relayed += 1
            self.bytes_relayed += len(frame)

    async def handle_tcp(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        async def send(frame: bytes) -> None:
            writer.write(frame)
            await writer.drain()

        party = None
        try:
            hello = await read_frame(reader)
            await self.__register(hello, send)
            party = hello.sender
            while True:
                await self.route(await read_frame(reader))
        except asyncio.IncompleteReadError:
            pass
        except Exception as exception:
            logger.error(
                "".join(
                    traceback.format_exception(
                        type(exception),
                        value=exception,
                        tb=exception.__traceback__,
                    )
                )
            )
        finally:
            if party is not None and self.__routes.get(party) is send:
                del self.__routes[party]
            writer.close()

    async def handle_websocket(self, websocket, path: str = "") -> None:
        async def send(frame: bytes) -> None:
            await websocket.send(frame)

        party = None
        try:
            async for frame in websocket:
                message = Message.from_frame(frame)
                if party is None:
                    await self.__register(message, send)
                    party = message.sender
                else:
                    await self.route(message)
        except websockets.ConnectionClosed:
            pass
        finally:
            if party is not None and self.__routes.get(party) is send:
                del self.__routes[party]
