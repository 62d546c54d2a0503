import os

from dotenv import load_dotenv

load_dotenv()

# Optional seed override applied to every subcommand.
SEED_OVERRIDE = os.getenv("GEVREGRET_SEED")
LOG_LEVEL = os.getenv("GEVREGRET_LOG_LEVEL", "INFO").upper()
OUT_DIR = os.getenv("GEVREGRET_OUT_DIR", "out")

# Euler-Mascheroni constant, the mean of the standard Gumbel distribution.
EULER_GAMMA = 0.5772156649015329

# Desk-scale cap on dense utility tensors.
MAX_TENSOR_ENTRIES = 10**6


def resolve_seed(seed: int) -> int:
    """Return GEVREGRET_SEED when set, otherwise the given seed."""
    override = os.getenv("GEVREGRET_SEED", SEED_OVERRIDE)
    if override is None or override.strip() == "":
        return seed
    return int(override)
