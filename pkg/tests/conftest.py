import os
import sys
import textwrap
from pathlib import Path

import pytest


# Project root on sys.path so `drift_camouflage` and `main` import without installing
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)


@pytest.fixture
def write_config(tmp_path):
    """Write a dedented experiment config into tmp_path and return its path."""

    def _write(content: str, name: str = "drift-camouflage.yaml") -> Path:
        p = tmp_path / name
        p.write_text(textwrap.dedent(content).lstrip(), encoding="utf-8")
        return p

    return _write
