import os
import logging
from datetime import datetime
from typing import Optional


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None):
    """Configure logging for the application.

    Level and directory default to ``G4DS_LOG_LEVEL`` / ``G4DS_LOG_DIR``
    (INFO and ``logs``).
    """
    level = (level or os.getenv("G4DS_LOG_LEVEL") or "INFO").upper()
    log_dir = log_dir or os.getenv("G4DS_LOG_DIR") or "logs"

    # Create logs directory if it doesn't exist
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    # Set up logging format
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'

    # Configure root logger
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=log_format,
        datefmt=date_format,
        handlers=[
            # Console handler with detailed formatting
            logging.StreamHandler(),
            # File handler for persistent logs
            logging.FileHandler(os.path.join(log_dir, f'g4ds_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log'),
                                encoding='utf-8')
        ],
        force=True,
    )

    # Set specific logger levels
    logging.getLogger('matplotlib').setLevel(logging.WARNING)  # Font cache chatter
    logging.getLogger('PIL').setLevel(logging.WARNING)  # Plugin discovery at DEBUG
