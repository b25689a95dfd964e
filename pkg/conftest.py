import sys
from pathlib import Path

# flat layout: make the top-level modules importable from tests/
sys.path.insert(0, str(Path(__file__).parent))
