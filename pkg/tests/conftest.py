import sys
from pathlib import Path

# the frozen-oracle helper module lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))
