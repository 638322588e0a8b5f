import sys
from pathlib import Path

# test-local oracles (reference cipher, FIFO simulator, flat memory model)
sys.path.insert(0, str(Path(__file__).parent))
