"""Complexity accounting across the configuration presets.

Prints the per-module parameter/MAC breakdown for the default model at
640x640, compares the presets, and runs a small timed inference probe.

Run:  python demos/05_profile_model.py
"""

from armformer.model import ArmFormer, ModelConfig
from armformer.profiler import count_flops, measure_fps

default = ArmFormer(ModelConfig.default())
report = count_flops(default, (640, 640))
print(report)
print()
print(report.formula_sheet)

print("preset comparison at each preset's native input size:")
for name, cfg in (("default @640", ModelConfig.default()),
                  ("lightweight-cbam @640", ModelConfig.lightweight_cbam()),
                  ("reduced @64", ModelConfig.reduced())):
    model = ArmFormer(cfg)
    rep = count_flops(model)
    print(f"  {name:<24s} {rep.total_params / 1e6:6.3f} M params   "
          f"{rep.total_flops / 1e9:7.3f} GMACs")

print("\ntimed inference, reduced config at 64x64 (10 iterations):")
speed = measure_fps(ArmFormer(ModelConfig.reduced()), (64, 64), warmup=2, iters=10)
print(" ", speed)
