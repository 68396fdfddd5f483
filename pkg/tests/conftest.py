import sys
from pathlib import Path

# helper modules (oracle, scene generators) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))
