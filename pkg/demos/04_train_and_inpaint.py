"""Train a very small model for a few steps, then inpaint and score through the CLI.

The toy model here is far too small and short-lived to inpaint well; the point
is to exercise every stage end to end in under a minute.
"""
# %%
import csv
import tempfile
from pathlib import Path

from sttn import cli

work = Path(tempfile.mkdtemp(prefix="sttn-demo-"))
tiny = ["--set", "frame_height=16", "--set", "frame_width=16", "--set", "enc_channels=4,4,6,8",
        "--set", "dec_channels=6,4,4", "--set", "head_patch_shapes=4x4,2x2,2x1,1x1",
        "--set", "disc_channels=4,4,4,4,4,4", "--set", "video_frames=8"]

# %% training writes losses.csv, checkpoint.bin and the resolved config
cli.run(["train", "--out", str(work / "run"), "--steps", "20", *tiny])
rows = list(csv.DictReader(open(work / "run" / "losses.csv")))
print("last logged step:", rows[-1])

# %% a dataset in the on-disk layout: <video>/frames/%05d.png and <video>/masks/%05d.pgm
cli.run(["gen-data", "--count", "2", "--out", str(work / "data"), *tiny])

# %% the checkpoint carries its config, so inference needs no --set flags
cli.run(["infer", "--checkpoint", str(work / "run" / "checkpoint.bin"),
         "--data", str(work / "data"), "--out", str(work / "pred")])
cli.run(["eval", "--truth", str(work / "data"), "--pred", str(work / "pred"),
         "--out", str(work / "metrics.csv")])

# %% one heatmap per layer, head and query patch of frame 3
cli.run(["attn-dump", "--checkpoint", str(work / "run" / "checkpoint.bin"), "--data", str(work / "data"),
         "--video", "video0000", "--frame", "3", "--out", str(work / "attn")])
print(len(list((work / "attn").iterdir())), "heatmaps in", work / "attn")
