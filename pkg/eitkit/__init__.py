"""Monotonicity-based inclusion detection for 2D electrical impedance tomography"""

import logging
import os


def setup_logging(config, verbose: bool = False):
    """Setup file and console logging from the configuration"""
    # Create logs directory if it doesn't exist
    log_dir = os.path.dirname(config.LOG_FILE)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.LOG_FILE),
            logging.StreamHandler()
        ],
        force=True
    )

    logging.getLogger(__name__).info(f"Starting {config.APP_NAME} v{config.VERSION}")
