import logging
import os
import sys
import time
from datetime import datetime, timedelta
from pathlib import Path

LOG_FORMAT = "[%(levelname)s][%(asctime)s][%(filename)s:%(lineno)d] - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def _get_logs_dir() -> Path:
    """Return the log directory, honouring KSTPP_LOG_DIR and frozen builds"""
    override = os.environ.get("KSTPP_LOG_DIR")
    if override:
        return Path(override)
    if getattr(sys, 'frozen', False):
        return Path(sys.executable).parent / "logs"
    return Path(__file__).parent.parent / "logs"


def _reset_logger(log: logging.Logger) -> None:
    for handler in list(log.handlers):
        handler.close()
        log.removeHandler(handler)
    log.handlers.clear()
    log.propagate = False

    # stdout carries CLI data output, so the console handler goes to stderr
    console_handle = logging.StreamHandler(sys.stderr)
    console_handle.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    log.addHandler(console_handle)

    try:
        logs_dir = _get_logs_dir()
        logs_dir.mkdir(parents=True, exist_ok=True)
        log_filename = str(logs_dir / (time.strftime("%Y_%m_%d", time.localtime()) + '.log'))
        file_handle = logging.FileHandler(log_filename, encoding="utf-8")
        file_handle.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        log.addHandler(file_handle)
    except OSError as e:
        # read-only installs still get console logging
        log.warning(f"[LOGGER] ⚠️ File logging disabled: {e}")


def _get_logger() -> logging.Logger:
    log = logging.getLogger("kstpp")
    _reset_logger(log)
    log.setLevel(logging.INFO)
    return log


def set_log_level(level: int) -> None:
    """Switch the shared logger (and its handlers) to ``level``"""
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)


def cleanup_old_logs(max_age_days: int = 5) -> int:
    """Delete log files older than ``max_age_days``; returns how many were removed"""
    deleted_count = 0
    try:
        logs_dir = _get_logs_dir()
        if not logs_dir.exists():
            return 0

        cutoff = datetime.now() - timedelta(days=max_age_days)
        for log_file in logs_dir.glob("*.log"):
            try:
                file_mtime = datetime.fromtimestamp(log_file.stat().st_mtime)
                if file_mtime < cutoff:
                    log_file.unlink()
                    deleted_count += 1
                    logger.info(f"[CLEANUP] Deleted old log file: {log_file.name}")
            except OSError as e:
                logger.warning(f"[CLEANUP] Failed to delete log file {log_file}: {e}")

        if deleted_count > 0:
            logger.info(f"[CLEANUP] Cleaned up {deleted_count} old log files")
        else:
            logger.debug("[CLEANUP] No old log files to clean up")

    except Exception as e:
        logger.error(f"[CLEANUP] Log cleanup failed: {e}")
    return deleted_count


# shared handle
logger = _get_logger()
