"""Why region-word fusion matters.

Twin images hold the same attributes and objects but pair them up
differently ("red cup, blue box" vs "blue cup, red box"). Averaging
regions or words cannot separate twins, so the model without fusion
tops out near 50% on them while the fused model learns the binding.
"""

from ascl import SynthConfig, TrainConfig, evaluate, generate_synthetic, train
from ascl.datastore import nearest_centroid_accuracy

data = generate_synthetic(SynthConfig(clusters=16, twins=True, noise=0.05), seed=0)
print(f"nearest-centroid accuracy on mean vectors: {nearest_centroid_accuracy(data):.2f}")

for variant in ("full", "no_mf"):
    cfg = TrainConfig(epochs=30, lr=0.01, ablation=variant)
    params, _ = train(data, cfg)
    r = evaluate(params, data, diagnostics=False)
    print(f"{variant:6s} R@1 i2t {r.i2t['r1']:.3f}  t2i {r.t2i['r1']:.3f}")
