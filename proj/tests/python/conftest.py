import os
import shutil

import pytest


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("VOXATTN_CLI") or shutil.which("voxattn")
    if not path:
        pytest.skip("voxattn CLI not built")
    return path
