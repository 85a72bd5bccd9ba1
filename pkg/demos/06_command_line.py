"""The command line, end to end, on a tiny configuration.

Each step writes CSV/JSON next to a copy of its fully resolved config. The
same calls work from a shell as ``crowdcast <command> ...``.
"""

# %%
import tempfile
from pathlib import Path

from crowdcast.cli import main

out = Path(tempfile.mkdtemp())
tiny = ["--set", "model.embed_dim=8", "--set", "model.hidden_dim=16", "--set", "train.max_epochs=2",
        "--set", "train.patience=2"]


def crowdcast(*args):
    argv = [str(a) for a in args]
    print("$ crowdcast", " ".join(argv))
    assert main(argv) == 0


# %% Raw tracks from a short heterogeneous mixture.
crowdcast("generate", "--out", out / "gen", "--set", "synth.mixture_cycles=2", "--set", "synth.duration=90")

# %% Split, slice and classify into allD plus one dataset per density class.
crowdcast("prepare", out / "gen" / "raw.txt", "--out", out / "data")
print((out / "data" / "counts.csv").read_text())

# %% Train with the collision term, then score the test split per density class.
crowdcast("train", out / "data", "--lambda", "0.01", "--out", out / "train", *tiny)
crowdcast("eval", out / "data", "--checkpoint", out / "train" / "checkpoint.json", "--out", out / "eval")
print((out / "eval" / "metrics.csv").read_text())

# %% One model per weight; the zero-weight row is the displacement-only baseline.
crowdcast("sweep", out / "data", "--lambdas", "0,0.01", "--out", out / "sweep", *tiny)
print((out / "sweep" / "sweep.csv").read_text())

# %% How often a window gets an estimated radius, and how large it is, per class.
crowdcast("radius-report", out / "data", "--out", out / "radius")
print((out / "radius" / "radius.csv").read_text())

# %% Errors come back as one JSON line on stderr with exit status 2.
print("exit status:", main(["eval", str(out / "data"), "--checkpoint", str(out / "missing.json"), "--out", str(out)]))
