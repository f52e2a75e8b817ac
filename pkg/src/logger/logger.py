import logging
import os

LEVEL_ENV = "AFC_DLCZ_LOG_LEVEL"

console_handler = logging.StreamHandler()
console_handler.setLevel(logging.DEBUG)
console_handler.setFormatter(
    logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"),
)


def get_logger(name: str) -> logging.Logger:
    """Get a logger with the specified name.

    The level comes from ``AFC_DLCZ_LOG_LEVEL`` (default INFO).

    Args:
        name (str): The name of the logger.

    Returns:
        logging.Logger: Configured logger instance.

    """
    logger = logging.getLogger(name)
    level = os.getenv(LEVEL_ENV, "INFO").upper()
    logger.setLevel(getattr(logging, level, logging.INFO))

    if console_handler not in logger.handlers:
        logger.addHandler(console_handler)
    logger.propagate = False

    return logger


def set_level(level: str):
    """Change the level of every logger created through get_logger."""
    value = getattr(logging, level.upper(), logging.INFO)
    for logger in logging.Logger.manager.loggerDict.values():
        if isinstance(logger, logging.Logger) and console_handler in logger.handlers:
            logger.setLevel(value)
