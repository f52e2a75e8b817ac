# threadpool.py
import asyncio
import concurrent.futures
import os

THREADS_ENV = "AFC_DLCZ_THREADS"


def default_workers() -> int:
    """Worker count from AFC_DLCZ_THREADS, falling back to the CPU count."""
    value = os.getenv(THREADS_ENV)
    if value is not None:
        try:
            workers = int(value)
        except ValueError:
            workers = 0
        if workers > 0:
            return workers
    return os.cpu_count() or 1


class ThreadPoolManager:
    def __init__(self, max_workers=None):
        if max_workers is None:
            max_workers = default_workers()
        self.max_workers = max_workers
        self.executor = concurrent.futures.ThreadPoolExecutor(max_workers=max_workers)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()

    def submit_task(self, task, *args, **kwargs):
        """Submits a task to the thread pool."""
        return self.executor.submit(task, *args, **kwargs)

    def map_ordered(self, task, items):
        """Runs task over items on the pool, results in submission order."""
        futures = [self.executor.submit(task, item) for item in items]
        return [future.result() for future in futures]

    async def run_blocking(self, task, *args):
        """Awaits a blocking call executed on the pool."""
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self.executor, task, *args)

    async def gather_ordered(self, task, items):
        """Async counterpart of map_ordered."""
        return await asyncio.gather(*(self.run_blocking(task, item) for item in items))

    def shutdown(self, wait=True):
        """Shuts down the thread pool."""
        self.executor.shutdown(wait=wait)
