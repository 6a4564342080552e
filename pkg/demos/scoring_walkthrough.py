"""Score one image against a few captions and look inside the score.

Shows the local (region-word) and global parts, and how positional
encoding makes word order matter.
"""

import numpy as np

from ascl import ImageFeatures, ModelParams, TextFeatures, score

rng = np.random.default_rng(0)
D = 16
params = ModelParams.init(D, heads=2, seed=0)

regions = rng.standard_normal((5, D))
image = ImageFeatures("img", regions, regions.mean(axis=0))

# a caption built from the image's own regions vs one from unrelated vectors;
# the projections are random at init, so which one wins here is arbitrary
near = TextFeatures("near", "img", regions[[0, 2, 4]] + 0.1 * rng.standard_normal((3, D)))
far = TextFeatures("far", "img", rng.standard_normal((3, D)))

for cap in (near, far):
    s = score(image, cap, params)
    print(f"{cap.text_id:5s} local {s.s_local:+.3f}  global {s.s_global:+.3f}  combined {s.s:+.3f}")

# reversing word order changes the score only through positional encoding
rev = TextFeatures("rev", "img", near.words[::-1])
no_pe = ModelParams.init(D, heads=2, seed=0, positional_encoding=False)
print("order effect with PE   :", abs(score(image, near, params).s - score(image, rev, params).s))
print("order effect without PE:", abs(score(image, near, no_pe).s - score(image, rev, no_pe).s))
