"""Round-trip scores through the wire protocol.

Spawns the reference bridge server as a child process (requires the
score-bridge-server package from bridge_server/), pins the schedule with the
hello handshake, and compares remote scores with the local closed form.
"""

import sys

import numpy as np

from momentdiff import BridgeScore, GaussianDomain, GaussianScore, default_schedule

try:
    import scorebridge  # noqa: F401
except ImportError:
    print("score-bridge-server is not installed; run "
          "`pip install -e bridge_server/` first")
    sys.exit(0)

s = default_schedule()
shape = (1, 8, 8)
local = GaussianScore(GaussianDomain(np.full(shape, 0.2), np.full(shape, 1.0)), s)
endpoint = f"cmd:{sys.executable} -m scorebridge --model gaussian --mean 0.2 --var 1.0"

rng = np.random.default_rng(0)
with BridgeScore(endpoint, schedule=s) as bridge:
    print("handshake ok (schedule hash matched)")
    worst = 0.0
    for _ in range(20):
        t = int(rng.integers(1, s.T + 1))
        x = rng.normal(size=shape)
        worst = max(worst, float(np.max(np.abs(bridge.score(x, t) - local.score(x, t)))))
    print(f"worst remote/local disagreement over 20 calls: {worst:.2e} "
          f"(float32 wire)")
