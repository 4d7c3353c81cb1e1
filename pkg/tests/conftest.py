from pathlib import Path

from hypothesis import settings

REPO_ROOT = Path(__file__).resolve().parents[1]

settings.register_profile("kernel", deadline=None, max_examples=100, derandomize=True)
settings.load_profile("kernel")
