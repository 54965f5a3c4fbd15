import os
from dotenv import load_dotenv

load_dotenv()

# Directory Configuration
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUTPUT_DIR = os.path.join(BASE_DIR, os.getenv("OUTPUT_DIR", "output"))

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

# Cluster Configuration
POOL_SIZE = int(os.getenv("POOL_SIZE", 10))  # 10 workers detect unstable configs with 95% confidence
COMMAND_TIMEOUT_S = float(os.getenv("COMMAND_TIMEOUT_S", 600))
SIM_TRIAL_SECONDS = float(os.getenv("SIM_TRIAL_SECONDS", 60))  # virtual duration of one simulated trial
CRASH_TOLERANCE = float(os.getenv("CRASH_TOLERANCE", 0.20))  # share of failed trials before exit code 3

# Multi-fidelity Configuration
RUNG_BUDGETS = tuple(int(b) for b in os.getenv("RUNG_BUDGETS", "1,3,10").split(","))
PROMOTION_ETA = int(os.getenv("PROMOTION_ETA", 3))
INIT_CONFIGS = int(os.getenv("INIT_CONFIGS", 10))  # default config + 9 random
EI_CANDIDATES = int(os.getenv("EI_CANDIDATES", 5000))

# Stability Configuration
DETECTION_THRESHOLD = float(os.getenv("DETECTION_THRESHOLD", 0.30))
THRESHOLD_RANGE = (0.15, 0.30)

# Forest Configuration
SURROGATE_TREES = int(os.getenv("SURROGATE_TREES", 10))
NOISE_MODEL_TREES = int(os.getenv("NOISE_MODEL_TREES", 100))
FOREST_MIN_LEAF = int(os.getenv("FOREST_MIN_LEAF", 3))

# Noise Model Activation
MODEL_MIN_CONFIGS = int(os.getenv("MODEL_MIN_CONFIGS", 2))
MODEL_MIN_ROWS = int(os.getenv("MODEL_MIN_ROWS", 20))
