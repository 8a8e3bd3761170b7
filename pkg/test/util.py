import asyncio
import functools

# A stuck round fails the test instead of hanging the suite
TEST_TIMEOUT = 600


def async_test(coro):
    @functools.wraps(coro)
    def wrapper(*args, **kwargs):
        loop = asyncio.new_event_loop()
        asyncio.set_event_loop(loop)
        try:
            return loop.run_until_complete(
                asyncio.wait_for(coro(*args, **kwargs), timeout=TEST_TIMEOUT)
            )
        finally:
            loop.run_until_complete(loop.shutdown_asyncgens())
            asyncio.set_event_loop(None)
            loop.close()

    return wrapper
