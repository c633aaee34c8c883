import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent

# the scripted-shim reference generator lives with the fixture tooling
sys.path.insert(0, str(REPO_ROOT / "scripts"))
