import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Run defaults (CLI flags override these)
SEED = int(os.getenv("DIFFNET_SEED", "0"))
THREADS = int(os.getenv("DIFFNET_THREADS", "1"))
OUT_DIR = os.getenv("DIFFNET_OUT_DIR", "out")
HORIZON = float(os.getenv("DIFFNET_HORIZON", "10.0"))

# Phase 1: single-layer edge discovery over the candidate edges
PHASE1_LR = float(os.getenv("DIFFNET_PHASE1_LR", "0.5"))
PHASE1_MAX_ITERS = int(os.getenv("DIFFNET_PHASE1_MAX_ITERS", "500"))
PHASE1_REL_TOL = float(os.getenv("DIFFNET_PHASE1_REL_TOL", "1e-4"))

# Phase 2: multilayer decomposition over the selected edges
PHASE2_LR = float(os.getenv("DIFFNET_PHASE2_LR", "0.1"))
PHASE2_MAX_ITERS = int(os.getenv("DIFFNET_PHASE2_MAX_ITERS", "3000"))
PHASE2_REL_TOL = float(os.getenv("DIFFNET_PHASE2_REL_TOL", "1e-6"))

PATIENCE = int(os.getenv("DIFFNET_PATIENCE", "20"))
BUDGET_FACTOR = float(os.getenv("DIFFNET_BUDGET_FACTOR", "1.1"))

# Restart seeds for phase 2 (comma-separated list)
# Format: "0,1,2"
RESTART_SEEDS = ()

_restart_str = os.getenv("DIFFNET_RESTART_SEEDS", "0,1,2")
if _restart_str:
    RESTART_SEEDS = tuple(int(s.strip()) for s in _restart_str.split(",") if s.strip())
