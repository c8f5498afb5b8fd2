from django.db.utils import OperationalError
from django.db import connection
import functools
import time
import logging

logger = logging.getLogger(__name__)


def retry_on_db_lock(func=None, *, max_retries=3, retry_delay=1.0):
    """Retry a run-history write while SQLite reports the database as locked."""
    if func is None:
        return functools.partial(retry_on_db_lock, max_retries=max_retries, retry_delay=retry_delay)

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        for attempt in range(max_retries):
            try:
                return func(*args, **kwargs)
            except OperationalError as e:
                if "database is locked" not in str(e).lower():
                    raise
                if attempt == max_retries - 1:
                    logger.error(f"Database locked after {max_retries} attempts")
                    raise
                wait_time = retry_delay * (2 ** attempt)
                logger.warning(f"Database locked, retrying in {wait_time} seconds... (Attempt {attempt + 1}/{max_retries})")
                time.sleep(wait_time)
                connection.close()
    return wrapper
