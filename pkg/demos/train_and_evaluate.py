"""Generate a synthetic corpus, train for a few epochs, report recall."""

import time

from ascl import SynthConfig, TrainConfig, evaluate, generate_synthetic, train
from ascl.training import init_params

data = generate_synthetic(SynthConfig(clusters=16, dim=32, shared_concepts=16), seed=1)
cfg = TrainConfig(dim=32, heads=4, epochs=20, lr=0.01)

before = evaluate(init_params(cfg), data)
t0 = time.perf_counter()


def progress(epoch, loss, _params):
    if epoch % 5 == 0:
        print(f"epoch {epoch:2d} loss {loss:.4f}")


params, log = train(data, cfg, on_epoch=progress)
after = evaluate(params, data, lengths=True)
print(f"trained in {time.perf_counter() - t0:.1f}s")

print("untrained R@1 i2t/t2i:", before.i2t["r1"], before.t2i["r1"])
print("trained   R@1 i2t/t2i:", after.i2t["r1"], after.t2i["r1"])
print(f"alignment {before.alignment_it:.3f} -> {after.alignment_it:.3f}")
for b in after.length_buckets:
    print(b)
