"""What the attention gates do to a feature map.

Builds a CBAM block over a synthetic scene's raw color channels and shows
the per-channel gate, the spatial gate's statistics, and the attenuation
guarantee.  The spatial gate is also written out as a viewable PGM.

Run:  python demos/02_cbam_gates.py
"""

import numpy as np

from armformer.cbam import CBAM
from armformer.data import synth_dataset, write_pgm
from armformer.tensor import Tensor

image, labels = synth_dataset(seed=4, count=1, size=64)[0]
print("scene classes present:", sorted(int(c) for c in np.unique(labels)))

# treat the 3 RGB planes plus 3 shifted copies as a 6-channel feature map
feat = np.concatenate([image, np.roll(image, shift=3, axis=2)], axis=0)
f = Tensor(feat[None])

cbam = CBAM(channels=6, rng=np.random.default_rng(1), reduction=2, kernel=7)
out, maps = cbam(f)

print("\nchannel gate M_c (one scalar per channel):")
for i, g in enumerate(maps.channel.data[0, :, 0, 0]):
    print(f"  channel {i}: {g:.4f}")

ms = maps.spatial.data[0, 0]
print(f"\nspatial gate M_s: min {ms.min():.4f}  max {ms.max():.4f}  "
      f"mean {ms.mean():.4f}  (always strictly inside (0, 1))")

assert np.all(np.abs(out.data) <= np.abs(f.data))
print("attenuation check: |output| <= |input| everywhere  [ok]")

write_pgm("spatial_gate.pgm", np.round(255 * ms).astype(np.uint8))
print("\nwrote spatial_gate.pgm (the per-pixel gate, 0=dark, 255=bright)")
