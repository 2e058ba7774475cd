"""Cross-component check: the TypeScript exporter's EMB1 output loads
cleanly through the engine's datamodel. Skipped when the frontend has not
been built."""

import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from fedsemrec.data import load_embeddings

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
CLI = FRONTEND / "dist" / "cli.js"
FIXTURE = FRONTEND / "test" / "fixtures" / "items.tsv"
GOLDEN = FRONTEND / "test" / "fixtures" / "items.golden.emb1"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not CLI.exists(),
    reason="embed-export frontend not built")


def test_exported_embeddings_load_through_datamodel(tmp_path):
    out = tmp_path / "items.emb1"
    proc = subprocess.run(
        ["node", str(CLI), "export", "--in", str(FIXTURE),
         "--model", "hashing-1024", "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr

    assert out.read_bytes() == GOLDEN.read_bytes()

    emb = load_embeddings(out)
    assert emb.rows == 3
    assert emb.cols == 1024
    # fixture rows 0 and 2 carry identical text
    assert np.array_equal(emb.data[0], emb.data[2])
    norms = np.linalg.norm(emb.data, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-5)
