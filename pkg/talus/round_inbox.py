import asyncio
import time
from typing import Callable, Dict, Iterable, List, Union

from .message import Message


class RoundTimeout(Exception):
    def __init__(self, round_index: int, missing: Iterable[int]) -> None:
        self.missing = sorted(set(missing))
        super().__init__(f"Round {round_index} timed out waiting for parties {self.missing}")


def header_matches(header: Dict, wanted: Dict) -> bool:
    """Every key of ``wanted`` is in the header with an equal value

    A ``None`` value only requires the key to be present.
    """
    if not isinstance(header, dict) or not isinstance(wanted, dict):
        raise TypeError("header and wanted must be dictionaries")
    for key, value in wanted.items():
        if key not in header:
            return False
        if value is not None and header[key] != value:
            return False
    return True


Matcher = Union[Dict, Callable[[Message], bool]]


def as_predicate(matcher: Matcher) -> Callable[[Message], bool]:
    if isinstance(matcher, dict):
        return lambda message: header_matches(message.header(), matcher)
    if callable(matcher):
        return matcher
    raise TypeError(f"matcher must be callable or dictionary: {matcher}")


class RoundInbox:
    """Messages received by one party, consumed by header matchers

    Messages that arrive early for a later round stay in the backlog until a
    matcher claims them.
    """

    __backlog: List[Message]
    __incoming: asyncio.Queue

    def __init__(self) -> None:
        self.__backlog = []
        self.__incoming = asyncio.Queue()

    def put_msg(self, message: Message) -> None:
        # Queue is never full
        self.__incoming.put_nowait(message)

    def __claim(self, predicate: Callable[[Message], bool]) -> Union[Message, None]:
        for index, message in enumerate(self.__backlog):
            if predicate(message):
                return self.__backlog.pop(index)
        return None

    async def get(
        self, matcher: Matcher = lambda message: True, timeout: Union[float, None] = None
    ) -> Message:
        predicate = as_predicate(matcher)

        message = self.__claim(predicate)
        if message is not None:
            return message

        while True:
            message = await asyncio.wait_for(self.__incoming.get(), timeout=timeout)
            if predicate(message):
                return message
            self.__backlog.append(message)

    async def collect(
        self,
        round_index: int,
        expected: Dict[int, int],
        matcher: Matcher,
        timeout: Union[float, None] = None,
    ) -> List[Message]:
        """Wait for ``expected[sender]`` matching messages from every sender"""
        predicate = as_predicate(matcher)
        remaining = {sender: count for sender, count in expected.items() if count}
        received: List[Message] = []
        deadline = None if timeout is None else time.monotonic() + timeout

        while remaining:
            left = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                message = await self.get(
                    lambda m: predicate(m) and remaining.get(m.sender, 0) > 0, timeout=left
                )
            except asyncio.TimeoutError:
                raise RoundTimeout(round_index, remaining.keys())
            remaining[message.sender] -= 1
            if remaining[message.sender] == 0:
                del remaining[message.sender]
            received.append(message)
        return received
