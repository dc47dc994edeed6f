"""Drive the whole pipeline through the command line, as a batch job would.

Every stage writes its outputs plus a manifest under --out; rerunning gives
byte-identical artifacts.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

from bikecast.synthetic import simulate_system

work = Path(tempfile.mkdtemp(prefix="bikecast-demo-"))
simulate_system(start="2014-03-03", days=21, seed=5).write(work / "data")

common = ["--data-dir", str(work / "data"), "--out", str(work / "run"),
          "--stations", "39,40,41", "--n-trees", "30", "--tree-curves", "10,30"]


def bikecast(*args):
    cmd = [sys.executable, "-m", "bikecast", *args, *common]
    print("$ bikecast", " ".join(args), flush=True)
    subprocess.run(cmd, check=True)


bikecast("ingest")
bikecast("graph")
bikecast("features")
bikecast("evaluate", "--kind", "forest")
bikecast("evaluate", "--kind", "lsboost")
bikecast("sweep", "--axis", "horizon", "--kind", "forest")
bikecast("sweep", "--axis", "memory", "--grid", "0,1,2", "--kind", "forest")
bikecast("report")

print((work / "run" / "report" / "summary.md").read_text())
