import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

VERSION = "1.0"

# Configuration
DATA_DIR = Path(os.getenv("CHANNELFOLD_DATA_DIR", "data"))
LOG_LEVEL = os.getenv("CHANNELFOLD_LOG_LEVEL", "INFO")
CIFAR100_URL = os.getenv(
    "CHANNELFOLD_CIFAR100_URL",
    "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz",
)
DOWNLOAD_TIMEOUT = 60

# Pipeline defaults (also written into every run manifest)
N_SAMPLE = 512
LAMBDA_REL = 0.05
SEED = 42
RHO = 1.0
MAX_ITERS = 500
TOL = 1e-5
ZCA_EPSILON_REL = 1e-2
ZCA_FIT_COUNT = 10000

# Relative ridge added to every SPD system before factorizing
RIDGE_EPS = 1e-8


def settings():
    """Return the resolved ambient settings as a dict"""
    return {
        "data_dir": str(DATA_DIR),
        "log_level": LOG_LEVEL,
        "cifar100_url": CIFAR100_URL,
        "version": VERSION,
    }
