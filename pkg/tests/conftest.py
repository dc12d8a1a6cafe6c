import sys
from pathlib import Path

# make helpers.py and tests/tools importable regardless of rootdir layout
sys.path.insert(0, str(Path(__file__).parent))

TOOLS_DIR = Path(__file__).parent / "tools"
