"""
nfcompile Logging Configuration

Rotating file logs for long pipeline runs (randomized differential suites,
profile adaptation loops) with per-message rate limiting so a chatty oracle
cannot flood the disk, plus a JSON error log that keeps the pipeline stage
and product name attached to each record.
"""

import json
import logging
import logging.handlers
import os
import sys
import threading
import time
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, Optional

CONTEXT_KEYS = ('stage', 'product', 'transition', 'step', 'seed', 'duration_ms')

STAGES = ('formula', 'oracle', 'machine', 'synth', 'emit', 'netsim', 'cli')


class RateLimitFilter(logging.Filter):
    """Filter to prevent log flooding with per-message counters"""

    def __init__(self, max_messages_per_second: int = 10):
        super().__init__()
        self.max_messages_per_second = max_messages_per_second
        self.message_times: Dict[str, list] = {}
        self.lock = threading.Lock()

    def filter(self, record):
        with self.lock:
            current_time = time.time()
            message_key = f"{record.levelname}:{record.getMessage()}"
            cutoff_time = current_time - 1.0
            recent = [t for t in self.message_times.get(message_key, []) if t > cutoff_time]
            if len(recent) < self.max_messages_per_second:
                recent.append(current_time)
                self.message_times[message_key] = recent
                return True
            self.message_times[message_key] = recent
            return False


class StructuredFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    def __init__(self, include_context: bool = True):
        super().__init__()
        self.include_context = include_context

    def format(self, record):
        log_entry = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno
        }

        if self.include_context:
            for key in CONTEXT_KEYS:
                if hasattr(record, key):
                    log_entry[key] = getattr(record, key)

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        return json.dumps(log_entry, default=str)


class LoggingConfig:
    """Centralized logging configuration manager"""

    def __init__(self):
        self.loggers: Dict[str, logging.Logger] = {}
        self.handlers: Dict[str, logging.Handler] = {}
        self.initialized = False
        self.log_dir: Optional[str] = None
        self.log_level = os.getenv('NFC_LOG_LEVEL', 'INFO').upper()

    def setup_logging(self,
                      log_dir: str = "./logs",
                      max_log_size: int = 5 * 1024 * 1024,
                      backup_count: int = 5):
        """Install the main, debug and error handlers on the root logger"""

        if self.initialized:
            return

        os.makedirs(log_dir, exist_ok=True)
        self.log_dir = log_dir

        root_logger = logging.getLogger()
        root_logger.setLevel(getattr(logging, self.log_level, logging.INFO))

        main_handler = logging.handlers.RotatingFileHandler(
            os.path.join(log_dir, "nfcompile.log"),
            maxBytes=max_log_size,
            backupCount=backup_count,
            encoding='utf-8'
        )
        main_handler.setLevel(logging.INFO)
        main_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        ))
        main_handler.addFilter(RateLimitFilter(max_messages_per_second=10))

        # oracle and product traces are high volume
        debug_handler = logging.handlers.RotatingFileHandler(
            os.path.join(log_dir, "debug.log"),
            maxBytes=max_log_size,
            backupCount=2,
            encoding='utf-8'
        )
        debug_handler.setLevel(logging.DEBUG)
        debug_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
        ))
        debug_handler.addFilter(RateLimitFilter(max_messages_per_second=50))

        error_handler = logging.handlers.RotatingFileHandler(
            os.path.join(log_dir, "error.log"),
            maxBytes=max_log_size,
            backupCount=backup_count,
            encoding='utf-8'
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(StructuredFormatter(include_context=True))

        if os.getenv('NFC_CONSOLE_LOGGING', 'false').lower() == 'true':
            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            ))
            root_logger.addHandler(console_handler)
            self.handlers['console'] = console_handler

        for name, handler in (('main', main_handler), ('debug', debug_handler), ('error', error_handler)):
            root_logger.addHandler(handler)
            self.handlers[name] = handler

        for stage in STAGES:
            stage_logger = logging.getLogger(stage)
            stage_logger.setLevel(logging.DEBUG if stage == 'oracle' else logging.INFO)
            self.loggers[stage] = stage_logger

        self.initialized = True

        logger = logging.getLogger('logging_config')
        logger.info("Logging system initialized")
        logger.info(f"Log level: {self.log_level}")
        logger.info(f"Log directory: {log_dir}")

    def teardown(self):
        """Detach and close every handler this instance installed"""
        root_logger = logging.getLogger()
        for handler in self.handlers.values():
            root_logger.removeHandler(handler)
            handler.close()
        self.handlers = {}
        self.loggers = {}
        self.initialized = False

    def get_logger(self, name: str) -> logging.Logger:
        return self.loggers.get(name, logging.getLogger(name))

    def log_stage_timing(self, stage: str, duration: float, **kwargs):
        """Log how long one pipeline stage took"""
        self.get_logger(stage).info(f"Timing: {stage}", extra={
            'stage': stage,
            'duration_ms': duration * 1000,
            **kwargs
        })


# Global logging configuration instance
_logging_config = LoggingConfig()


def setup_logging(**kwargs):
    _logging_config.setup_logging(**kwargs)


def teardown_logging():
    _logging_config.teardown()


def get_logger(name: str) -> logging.Logger:
    """Get a stage logger"""
    return _logging_config.get_logger(name)


def log_stage_timing(stage: str, duration: float, **kwargs):
    _logging_config.log_stage_timing(stage, duration, **kwargs)


@contextmanager
def logging_context(**context: Any):
    """Attach context fields (stage, product, ...) to every record emitted inside the block"""
    old_factory = logging.getLogRecordFactory()

    def record_factory(*args, **kwargs):
        record = old_factory(*args, **kwargs)
        for key, value in context.items():
            setattr(record, key, value)
        return record

    logging.setLogRecordFactory(record_factory)
    try:
        yield
    finally:
        logging.setLogRecordFactory(old_factory)
