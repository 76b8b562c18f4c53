import json
import logging
import os
import uuid
from datetime import datetime
from typing import Any, Dict

from dotenv import load_dotenv

from frag_constants import (
    DEFAULT_LOG_FILE,
    DEFAULT_LOG_LEVEL,
    DEFAULT_RUN_LOG_DIR,
    LOG_FILE_ENV,
    LOG_LEVEL_ENV,
    RUN_LOG_DIR_ENV,
)

load_dotenv()

session_id = str(uuid.uuid4())[:8]

_file_handler = None


def _shared_handler() -> logging.Handler:
    global _file_handler
    if _file_handler is None:
        _file_handler = logging.FileHandler(os.environ.get(LOG_FILE_ENV, DEFAULT_LOG_FILE), delay=True)
        formatter = logging.Formatter('%(session_id)s - %(asctime)s - %(levelname)s - %(message)s')
        _file_handler.setFormatter(formatter)
    return _file_handler


def get_logger(name: str) -> logging.LoggerAdapter:
    """
    Logger writing to the fragkit log file only, tagged with this process' session id.
    """
    logger = logging.getLogger(name)
    logger.setLevel(os.environ.get(LOG_LEVEL_ENV, DEFAULT_LOG_LEVEL))
    logger.propagate = False
    if not logger.handlers:
        logger.addHandler(_shared_handler())
    return logging.LoggerAdapter(logger, {'session_id': session_id})


def log_run_to_json(command: str, resolved: Dict[str, Any]) -> str:
    """Dump a command's fully resolved configuration to the run log directory."""
    log_dir = os.environ.get(RUN_LOG_DIR_ENV, DEFAULT_RUN_LOG_DIR)
    os.makedirs(log_dir, exist_ok=True)
    filename = os.path.join(log_dir, f"run_{command}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json")
    with open(filename, 'w') as f:
        json.dump({'session_id': session_id, 'command': command, 'config': resolved},
                  f, indent=2, ensure_ascii=False)
    return filename
