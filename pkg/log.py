import logging
import os

import logzero
from logzero import logger

import admin
import config

version = admin.version
loglevel = getattr(logging, os.getenv('NFC_LOG_LEVEL', config.loglevel).upper(), logging.INFO)


def start(command, logfile=None):
    """Point logzero at the console and a rotating logfile for one CLI run."""
    logzero.loglevel(loglevel)
    logzero.logfile(logfile or config.logfile, maxBytes=config.log_max_bytes,
                    backupCount=config.log_backup_count)
    logger.info("Startup of %s %s, Version %s", admin.tool_name, command, version)
    return logger
